//! Implicit gradients against central finite differences of a retrained model.

use anyhow::{bail, Result};
use cfpoison_core::als::{als_fit, als_fit_warm, AlsConfig};
use cfpoison_core::implicit::{finite_diff_grad, GradSmoothing, SigmaPath};
use cfpoison_core::nuclear::{svt_fit, svt_fit_from, NuclearModel, SvtConfig};
use cfpoison_core::attack::{Solver, Trained};
use cfpoison_core::objective::{utility_value, UtilityConfig};
use cfpoison_core::ratings::{MaliciousMatrix, SparseRatings};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub implicit: MaliciousMatrix,
    pub finite_diff: MaliciousMatrix,
    /// `‖implicit − fd‖ / ‖fd‖`
    pub rel_error: f64,
    pub cosine: f64,
}

impl GradCheck {
    pub fn new(implicit: MaliciousMatrix, finite_diff: MaliciousMatrix) -> Self {
        let (mut diff, mut a2, mut b2, mut dot) = (0.0, 0.0, 0.0, 0.0);
        for (a, b) in implicit.values().zip(finite_diff.values()) {
            diff += (a - b) * (a - b);
            a2 += a * a;
            b2 += b * b;
            dot += a * b;
        }
        Self {
            rel_error: (diff / b2).sqrt(),
            cosine: dot / (a2 * b2).sqrt(),
            implicit,
            finite_diff,
        }
    }
}

/// Differences retrain warm-started from the unperturbed fit.
pub fn als_gradcheck(
    ratings: &SparseRatings,
    mt: &MaliciousMatrix,
    cfg: &AlsConfig,
    utility: &UtilityConfig,
    eps: f64,
) -> Result<GradCheck> {
    let solver = Solver::Als(*cfg);
    let base = als_fit(ratings, mt, cfg)?.model;
    let implicit = solver.implicit_grad(&Trained::Als(base.clone()), ratings, mt, utility)?;
    let fd = finite_diff_grad(
        |m| als_fit_warm(ratings, m, cfg, &base),
        |f| utility_value(&f.model.predict(), utility),
        mt,
        eps,
    )?;
    Ok(GradCheck::new(implicit, fd))
}

/// Compares the factor-path gradient: the perturbed fit only contributes its new
/// item factors `V`, sign-aligned to the unperturbed ones, while `U` and `Σ` stay
/// at the unperturbed fit.
pub fn nuclear_gradcheck(
    ratings: &SparseRatings,
    mt: &MaliciousMatrix,
    svt: &SvtConfig,
    tau: f64,
    utility: &UtilityConfig,
    eps: f64,
) -> Result<GradCheck> {
    let solver = Solver::Nuclear {
        svt: *svt,
        smoothing: GradSmoothing { tau },
        sigma_path: SigmaPath::Disabled,
    };
    let base = svt_fit(ratings, mt, svt)?.model;
    let implicit = solver.implicit_grad(&Trained::Nuclear(base.clone()), ratings, mt, utility)?;
    let z0 = base.stacked();
    let us = &base.users * DMatrix::from_diagonal(&base.sigma);
    let mut rank_changed = false;
    let fd = finite_diff_grad(
        |m| svt_fit_from(ratings, m, svt, &z0).map(|f| f.model),
        |f: &NuclearModel| {
            if f.rank() != base.rank() {
                rank_changed = true;
                return Ok(0.0);
            }
            let mut v = f.items.clone();
            for t in 0..v.ncols() {
                if v.column(t).dot(&base.items.column(t)) < 0.0 {
                    v.column_mut(t).neg_mut();
                }
            }
            utility_value(&(&us * v.transpose()), utility)
        },
        mt,
        eps,
    )?;
    if rank_changed {
        bail!("the fitted rank changed under a perturbation of {eps}; try a smaller step");
    }
    Ok(GradCheck::new(implicit, fd))
}
