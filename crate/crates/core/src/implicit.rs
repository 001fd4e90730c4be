//! Gradients of the attacker utility with respect to the malicious ratings,
//! obtained by differentiating the solvers' optimality conditions.

use alloc::format;
use core::sync::atomic::{AtomicBool, Ordering};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::als::{kkt_residual, FactorModel};
use crate::error::{Error, Result};
use crate::linalg::{add_outer, cholesky, ridge};
use crate::nuclear::NuclearModel;
use crate::objective::{AlsThetaGrad, NuclearThetaGrad};
use crate::ratings::{MaliciousMatrix, SparseRatings};

/// Above this KKT residual the ALS gradient is reported as unreliable.
const KKT_WARN: f64 = 1e-3;
/// Above this the residual is logged at debug level.
const KKT_NOTE: f64 = 1e-6;
static KKT_WARNED: AtomicBool = AtomicBool::new(false);

/// Magnitude cap on `∂σ_t/∂M̃_ij = 1/(ũ_it v_jt)`.
pub const SIGMA_CLAMP: f64 = 1e6;

/// Ridge smoothing `τ` for the nuclear-model gradient systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSmoothing {
    pub tau: f64,
}

impl Default for GradSmoothing {
    fn default() -> Self {
        Self { tau: 1e-3 }
    }
}

/// Whether the singular-value path contributes to the nuclear gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaPath {
    #[default]
    Clamped,
    Disabled,
}

fn check_model_shape(
    users: usize,
    malicious_rows: usize,
    items: usize,
    ratings: &SparseRatings,
    mt: &MaliciousMatrix,
) -> Result<()> {
    if users != ratings.num_users()
        || items != ratings.num_items()
        || malicious_rows != mt.num_malicious()
        || mt.num_items() != items
    {
        return Err(Error::ShapeMismatch(format!(
            "model is ({users}+{malicious_rows})x{items}, data is ({}+{})x{}",
            ratings.num_users(),
            mt.num_malicious(),
            ratings.num_items()
        )));
    }
    Ok(())
}

fn check_grad_rows(grad: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if grad.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "{what} gradient is {:?}, expected {rows}x{cols}",
            grad.shape()
        )));
    }
    Ok(())
}

/// ALS implicit gradient over the malicious support.
///
/// Each entry is `⟨(λ_U I + Σ_{Ω̃_i} v vᵀ)⁻¹ v_j, ∂R/∂ũ_i⟩ + ⟨(λ_V I + Σ_{raters of j} u uᵀ)⁻¹ ũ_i, ∂R/∂v_j⟩`,
/// holding every other block fixed.
pub fn als_implicit_grad(
    model: &FactorModel,
    ratings: &SparseRatings,
    mt: &MaliciousMatrix,
    grad: &AlsThetaGrad,
) -> Result<MaliciousMatrix> {
    let k = model.rank();
    let (m, mm, n) = (model.users.nrows(), model.malicious.nrows(), model.items.nrows());
    check_model_shape(m, mm, n, ratings, mt)?;
    check_grad_rows(&grad.malicious, mm, k, "malicious-factor")?;
    check_grad_rows(&grad.items, n, k, "item-factor")?;

    let residual = kkt_residual(model, ratings, mt);
    if residual > KKT_WARN && !KKT_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "ALS model is not stationary (KKT residual {residual:e}); implicit gradients are unreliable, \
             lower tol or raise max_iter (further cases are logged at debug level)"
        );
    } else if residual > KKT_NOTE {
        log::debug!("ALS KKT residual {residual:e}");
    }

    let vt = model.items.transpose();
    let ut = model.users.transpose();
    let mtt = model.malicious.transpose();

    let mut ucache: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>> = (0..mm).map(|_| None).collect();
    let mut vcache: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>> = (0..n).map(|_| None).collect();
    let mut out = Vec::with_capacity(mt.len());
    for r in mt.entries() {
        let (i, j) = (r.user, r.item);
        if ucache[i].is_none() {
            let mut gram = ridge(k, model.lambda_u);
            for l in mt.rated_items(i) {
                add_outer(&mut gram, &vt.column(l), 1.0);
            }
            ucache[i] = Some(cholesky(gram, "malicious-user gradient system")?);
        }
        if vcache[j].is_none() {
            let mut gram = ridge(k, model.lambda_v);
            for l in ratings.raters(j) {
                add_outer(&mut gram, &ut.column(l), 1.0);
            }
            for l in mt.raters(j) {
                add_outer(&mut gram, &mtt.column(l), 1.0);
            }
            vcache[j] = Some(cholesky(gram, "item gradient system")?);
        }
        let du = ucache[i].as_ref().expect("filled above").solve(&vt.column(j).into_owned());
        let dv = vcache[j].as_ref().expect("filled above").solve(&mtt.column(i).into_owned());
        let g = du.dot(&grad.malicious.row(i).transpose()) + dv.dot(&grad.items.row(j).transpose());
        out.push(g);
    }
    mt.with_values(out)
}

/// `∂σ_t/∂M̃_ij` with the magnitude capped at [`SIGMA_CLAMP`].
pub fn sigma_partial(u: f64, v: f64) -> f64 {
    let p = u * v;
    if libm::fabs(p) < 1.0 / SIGMA_CLAMP {
        if p < 0.0 {
            -SIGMA_CLAMP
        } else {
            SIGMA_CLAMP
        }
    } else {
        1.0 / p
    }
}

/// Nuclear-model implicit gradient over the malicious support, from the
/// ridge-regularized per-row and per-column systems with the dual variables held fixed.
pub fn nuclear_implicit_grad(
    model: &NuclearModel,
    ratings: &SparseRatings,
    mt: &MaliciousMatrix,
    grad: &NuclearThetaGrad,
    smoothing: GradSmoothing,
    sigma_path: SigmaPath,
) -> Result<MaliciousMatrix> {
    let rho = model.rank();
    let (m, mm, n) = (model.users.nrows(), model.malicious.nrows(), model.items.nrows());
    check_model_shape(m, mm, n, ratings, mt)?;
    if rho == 0 {
        return Err(Error::InvalidParameter(
            "nuclear gradient needs a model of rank at least 1".into(),
        ));
    }
    if !(smoothing.tau >= 0.0 && smoothing.tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "τ must be non-negative, got {}",
            smoothing.tau
        )));
    }
    check_grad_rows(&grad.malicious, mm, rho, "malicious-factor")?;
    check_grad_rows(&grad.items, n, rho, "item-factor")?;
    if grad.sigma.len() != rho {
        return Err(Error::ShapeMismatch(format!(
            "σ gradient has {} entries, model rank is {rho}",
            grad.sigma.len()
        )));
    }

    let d: DVector<f64> = model.sigma.map(|s| s + model.lambda);
    let scaled = |x: nalgebra::DVectorView<'_, f64>| -> DVector<f64> { x.component_mul(&d) };
    let dv: Vec<DVector<f64>> = (0..n).map(|j| scaled(model.items.row(j).transpose().as_view())).collect();
    let du: Vec<DVector<f64>> = (0..m).map(|i| scaled(model.users.row(i).transpose().as_view())).collect();
    let dut: Vec<DVector<f64>> = (0..mm).map(|i| scaled(model.malicious.row(i).transpose().as_view())).collect();

    let mut ucache: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>> = (0..mm).map(|_| None).collect();
    let mut vcache: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>> = (0..n).map(|_| None).collect();
    let mut out = Vec::with_capacity(mt.len());
    for r in mt.entries() {
        let (i, l) = (r.user, r.item);
        // The entry's own item is already in Ω̃_i, and its own rater in the column set.
        if ucache[i].is_none() {
            let mut gram = ridge(rho, smoothing.tau);
            for j in mt.rated_items(i) {
                add_outer(&mut gram, &dv[j], 1.0);
            }
            ucache[i] = Some(cholesky(gram, "malicious-user ridge system")?);
        }
        if vcache[l].is_none() {
            let mut gram = ridge(rho, smoothing.tau);
            for u in ratings.raters(l) {
                add_outer(&mut gram, &du[u], 1.0);
            }
            for u in mt.raters(l) {
                add_outer(&mut gram, &dut[u], 1.0);
            }
            vcache[l] = Some(cholesky(gram, "item ridge system")?);
        }
        let d_ut = ucache[i].as_ref().expect("filled above").solve(&dv[l]);
        let d_v = vcache[l].as_ref().expect("filled above").solve(&dut[i]);
        let mut g = d_ut.dot(&grad.malicious.row(i).transpose()) + d_v.dot(&grad.items.row(l).transpose());
        if sigma_path == SigmaPath::Clamped {
            for t in 0..rho {
                g += sigma_partial(model.malicious[(i, t)], model.items[(l, t)]) * grad.sigma[t];
            }
        }
        out.push(g);
    }
    mt.with_values(out)
}

/// Central-difference gradient `(R(M̃+εE_ij) − R(M̃−εE_ij))/(2ε)` over the support of `mt`.
pub fn finite_diff_grad<T>(
    mut retrain: impl FnMut(&MaliciousMatrix) -> Result<T>,
    mut evaluate: impl FnMut(&T) -> Result<f64>,
    mt: &MaliciousMatrix,
    eps: f64,
) -> Result<MaliciousMatrix> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("ε must be positive, got {eps}")));
    }
    let base: Vec<f64> = mt.values().collect();
    let mut out = Vec::with_capacity(base.len());
    for pos in 0..base.len() {
        let mut shifted = |delta: f64| -> Result<f64> {
            let vals = base
                .iter()
                .enumerate()
                .map(|(p, &v)| if p == pos { v + delta } else { v });
            let fit = retrain(&mt.with_values(vals)?)?;
            evaluate(&fit)
        };
        let hi = shifted(eps)?;
        let lo = shifted(-eps)?;
        out.push((hi - lo) / (2.0 * eps));
    }
    mt.with_values(out)
}
