//! Nuclear-norm regularized completion of the stacked matrix `[M; M̃]`.
//!
//! Minimizes `‖R_{Ω,Ω̃}(Z − [M; M̃])‖_F² + 2λ‖Z‖_*` by proximal gradient steps
//! (singular value thresholding), then extracts the reduced factorization
//! `Z = [U; Ũ] Σ Vᵀ` used by the implicit gradients.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ratings::{MaliciousMatrix, SparseRatings};

/// Hyperparameters of the proximal gradient solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvtConfig {
    pub lambda: f64,
    /// Gradient step; the data-fit gradient is 2-Lipschitz, so `step <= 0.5` always descends.
    pub step: f64,
    /// Stop once both the relative objective decrease and the relative iterate change fall below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvtConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            step: 0.5,
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

/// Singular values at or below `RANK_TOL * σ₁` are dropped from the factorization.
pub const RANK_TOL: f64 = 1e-6;

/// Completed matrices together with their reduced SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearModel {
    /// Normal-user block `X` (`m x n`).
    pub x: DMatrix<f64>,
    /// Fake-user block `X̃` (`m' x n`).
    pub x_malicious: DMatrix<f64>,
    pub lambda: f64,
    /// `m x ρ`
    pub users: DMatrix<f64>,
    /// `m' x ρ`
    pub malicious: DMatrix<f64>,
    /// `n x ρ`, orthonormal columns.
    pub items: DMatrix<f64>,
    /// Non-increasing, all above the rank cutoff.
    pub sigma: DVector<f64>,
}

impl NuclearModel {
    /// Effective rank `ρ`.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn predict(&self) -> DMatrix<f64> {
        predict_nuclear(self)
    }

    /// `[X; X̃]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        stack(&self.x, &self.x_malicious)
    }

    /// Builds a model from a completed stacked matrix whose first `num_users` rows are normal users.
    pub fn from_stacked(z: &DMatrix<f64>, num_users: usize, lambda: f64) -> Self {
        let (us, sigma, v) = reduced_svd(z);
        let rho = sigma.len();
        let n = z.ncols();
        let recomposed = if rho == 0 {
            DMatrix::zeros(z.nrows(), n)
        } else {
            &us * DMatrix::from_diagonal(&sigma) * v.transpose()
        };
        let m_mal = z.nrows() - num_users;
        Self {
            x: recomposed.rows(0, num_users).into_owned(),
            x_malicious: recomposed.rows(num_users, m_mal).into_owned(),
            lambda,
            users: us.rows(0, num_users).into_owned(),
            malicious: us.rows(num_users, m_mal).into_owned(),
            items: v,
            sigma,
        }
    }
}

/// Result of [`svt_fit`].
#[derive(Debug, Clone)]
pub struct SvtFit {
    pub model: NuclearModel,
    /// Objective at the start followed by the objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl SvtFit {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// `M̂ = X`.
pub fn predict_nuclear(model: &NuclearModel) -> DMatrix<f64> {
    model.x.clone()
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    z.rows_mut(0, top.nrows()).copy_from(top);
    z.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    z
}

/// Proximal operator of `threshold * ‖·‖_*`: soft-thresholds the singular values.
pub fn shrink_singular_values(a: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    shrink_with_norm(a, threshold).0
}

/// Shrunk matrix and its nuclear norm.
fn shrink_with_norm(a: &DMatrix<f64>, threshold: f64) -> (DMatrix<f64>, f64) {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return (a.clone(), 0.0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut out = DMatrix::zeros(r, c);
    let mut norm = 0.0;
    for (t, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - threshold;
        if shrunk <= 0.0 {
            continue;
        }
        norm += shrunk;
        out.ger(shrunk, &u.column(t), &vt.row(t).transpose(), 1.0);
    }
    (out, norm)
}

fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().sum()
}

/// Reduced SVD with the rank cutoff applied and a deterministic sign convention
/// (the largest-magnitude entry of every right singular vector is positive).
fn reduced_svd(z: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (r, c) = z.shape();
    if r == 0 || c == 0 {
        return (DMatrix::zeros(r, 0), DVector::zeros(0), DMatrix::zeros(c, 0));
    }
    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order.first().map(|&t| svd.singular_values[t]).unwrap_or(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&t| {
            let s = svd.singular_values[t];
            s > 0.0 && s > RANK_TOL * top
        })
        .collect();
    let rho = keep.len();
    let mut us = DMatrix::zeros(r, rho);
    let mut v = DMatrix::zeros(c, rho);
    let mut sigma = DVector::zeros(rho);
    for (dst, &src) in keep.iter().enumerate() {
        let mut ucol = u.column(src).into_owned();
        let mut vcol = vt.row(src).transpose();
        let pivot = vcol.iter().copied().fold(0.0f64, |acc, x| {
            if libm::fabs(x) > libm::fabs(acc) {
                x
            } else {
                acc
            }
        });
        if pivot < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        us.column_mut(dst).copy_from(&ucol);
        v.column_mut(dst).copy_from(&vcol);
        sigma[dst] = svd.singular_values[src];
    }
    (us, sigma, v)
}

/// Dense `[M; M̃]` and the matching observation mask, row-major over the stack.
fn stacked_data(ratings: &SparseRatings, malicious: &MaliciousMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = ratings.num_users();
    let rows = m + malicious.num_malicious();
    let n = ratings.num_items();
    let mut data = DMatrix::zeros(rows, n);
    let mut mask = DMatrix::zeros(rows, n);
    for r in ratings.entries() {
        data[(r.user, r.item)] = r.value;
        mask[(r.user, r.item)] = 1.0;
    }
    for r in malicious.entries() {
        data[(m + r.user, r.item)] = r.value;
        mask[(m + r.user, r.item)] = 1.0;
    }
    (data, mask)
}

fn data_fit(z: &DMatrix<f64>, data: &DMatrix<f64>, mask: &DMatrix<f64>) -> f64 {
    z.iter()
        .zip(data.iter())
        .zip(mask.iter())
        .map(|((z, d), w)| w * (z - d) * (z - d))
        .sum()
}

/// Objective value for a stacked estimate `z`.
pub fn nuclear_objective(
    z: &DMatrix<f64>,
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    lambda: f64,
) -> f64 {
    let (data, mask) = stacked_data(ratings, malicious);
    data_fit(z, &data, &mask) + 2.0 * lambda * nuclear_norm(z)
}

fn validate(ratings: &SparseRatings, malicious: &MaliciousMatrix, cfg: &SvtConfig) -> Result<()> {
    if malicious.num_items() != ratings.num_items() {
        return Err(Error::ShapeMismatch(format!(
            "{} items in ratings, {} in malicious block",
            ratings.num_items(),
            malicious.num_items()
        )));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "λ must be positive, got {}",
            cfg.lambda
        )));
    }
    if !(cfg.step > 0.0 && cfg.step <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "step must be in (0, 1], got {}",
            cfg.step
        )));
    }
    if ratings.is_empty() && malicious.is_empty() {
        return Err(Error::EmptyObservations);
    }
    Ok(())
}

/// Fits from the zero matrix.
pub fn svt_fit(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    cfg: &SvtConfig,
) -> Result<SvtFit> {
    let rows = ratings.num_users() + malicious.num_malicious();
    svt_fit_from(ratings, malicious, cfg, &DMatrix::zeros(rows, ratings.num_items()))
}

/// Fits from a given stacked starting point `[X₀; X̃₀]`.
pub fn svt_fit_from(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    cfg: &SvtConfig,
    init: &DMatrix<f64>,
) -> Result<SvtFit> {
    validate(ratings, malicious, cfg)?;
    let m = ratings.num_users();
    let expected = (m + malicious.num_malicious(), ratings.num_items());
    if init.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "starting point is {:?}, expected {expected:?}",
            init.shape()
        )));
    }
    let (data, mask) = stacked_data(ratings, malicious);
    let threshold = cfg.step * 2.0 * cfg.lambda;

    let mut z = init.clone();
    let start = data_fit(&z, &data, &mask) + 2.0 * cfg.lambda * nuclear_norm(&z);
    let mut trace = alloc::vec![start];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let mut g = z.clone();
        for ((g, d), w) in g.iter_mut().zip(data.iter()).zip(mask.iter()) {
            *g -= cfg.step * 2.0 * w * (*g - d);
        }
        let (next, norm) = shrink_with_norm(&g, threshold);
        let obj = data_fit(&next, &data, &mask) + 2.0 * cfg.lambda * norm;
        if !obj.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite objective after {} iterations",
                trace.len()
            )));
        }
        let change = (&next - &z).norm() / libm::fmax(next.norm(), 1.0);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(obj);
        z = next;
        let rel = (prev - obj) / libm::fmax(libm::fabs(prev), f64::MIN_POSITIVE);
        if rel < cfg.tol && change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged && trace.last().copied().unwrap_or(0.0) > start {
        return Err(Error::Divergence(format!(
            "objective grew from {start} without converging; step {} is too large",
            cfg.step
        )));
    }
    Ok(SvtFit {
        model: NuclearModel::from_stacked(&z, m, cfg.lambda),
        objective_trace: trace,
        converged,
    })
}

/// Dual residuals of the per-entry optimality conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DualResidual {
    /// `w_ij` for each entry of the normal ratings, in entry order.
    pub normal: Vec<f64>,
    /// `w̃_ij` for each entry of the malicious block, in entry order.
    pub malicious: Vec<f64>,
}

/// `w_ij = (M_ij − u_iᵀ(Σ + λI)v_j) / λ` on Ω, and the same on Ω̃ with `ũ_i`.
pub fn dual_w(
    model: &NuclearModel,
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
) -> Result<DualResidual> {
    if !(model.lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dual residuals need λ > 0, got {}",
            model.lambda
        )));
    }
    let lambda = model.lambda;
    let scaled: DVector<f64> = model.sigma.map(|s| s + lambda);
    let entry = |u: nalgebra::DVectorView<'_, f64>, j: usize, value: f64| -> f64 {
        let fit: f64 = (0..scaled.len())
            .map(|t| u[t] * scaled[t] * model.items[(j, t)])
            .sum();
        (value - fit) / lambda
    };
    let ut = model.users.transpose();
    let mt = model.malicious.transpose();
    let normal = ratings
        .entries()
        .iter()
        .map(|r| entry(ut.column(r.user), r.item, r.value))
        .collect();
    let mal = malicious
        .entries()
        .iter()
        .map(|r| entry(mt.column(r.user), r.item, r.value))
        .collect();
    Ok(DualResidual {
        normal,
        malicious: mal,
    })
}
