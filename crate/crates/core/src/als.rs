//! Alternating least squares on the joint normal + malicious rating matrix.
//!
//! Minimizes
//!
//! ```text
//! sum_{Ω} (M_ij - u_i·v_j)^2 + sum_{Ω̃} (M̃_ij - ũ_i·v_j)^2
//!     + λ_U (‖U‖² + ‖Ũ‖²) + λ_V ‖V‖²
//! ```
//!
//! whose stationarity conditions are `λ_U u_i = Σ_j (M_ij - u_i·v_j) v_j` and
//! the analogous equations for `ũ_i` and `v_j`. Each half-sweep solves the
//! per-row ridge systems in closed form, so every update is the exact
//! minimizer with the other block held fixed.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{add_outer, all_finite, frobenius_sq, ridge, spd_solve};
use crate::ratings::{MaliciousMatrix, SparseRatings};

/// Hyperparameters of the alternating solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub lambda_u: f64,
    pub lambda_v: f64,
    /// Stop once both the relative objective decrease of a sweep and the
    /// relative change of the item factors fall below this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            lambda_u: 0.1,
            lambda_v: 0.1,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

/// Learned factors `Θ = (U, Ũ, V)`; rows are users / fake users / items.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub users: DMatrix<f64>,
    pub malicious: DMatrix<f64>,
    pub items: DMatrix<f64>,
    pub lambda_u: f64,
    pub lambda_v: f64,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.items.ncols()
    }

    /// Predictions for normal users, `U V^T`.
    pub fn predict(&self) -> DMatrix<f64> {
        predict_als(self)
    }
}

/// Result of [`als_fit`].
#[derive(Debug, Clone)]
pub struct AlsFit {
    pub model: FactorModel,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl AlsFit {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// `M̂ = U V^T` over normal users only.
pub fn predict_als(model: &FactorModel) -> DMatrix<f64> {
    &model.users * model.items.transpose()
}

fn validate(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    cfg: &AlsConfig,
) -> Result<()> {
    if malicious.num_items() != ratings.num_items() {
        return Err(Error::ShapeMismatch(format!(
            "{} items in ratings, {} in malicious block",
            ratings.num_items(),
            malicious.num_items()
        )));
    }
    if !(cfg.lambda_u > 0.0 && cfg.lambda_v > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "regularizers must be positive (λ_U = {}, λ_V = {})",
            cfg.lambda_u, cfg.lambda_v
        )));
    }
    let max_rank = (ratings.num_users() + malicious.num_malicious()).min(ratings.num_items());
    if cfg.rank == 0 || cfg.rank > max_rank {
        return Err(Error::InvalidParameter(format!(
            "rank must be in 1..={max_rank}, got {}",
            cfg.rank
        )));
    }
    if ratings.is_empty() && malicious.is_empty() {
        return Err(Error::EmptyObservations);
    }
    Ok(())
}

/// Fits from a seeded Gaussian initialization of `V` with entries `N(0, 1/k)`.
pub fn als_fit(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    cfg: &AlsConfig,
) -> Result<AlsFit> {
    validate(ratings, malicious, cfg)?;
    let k = cfg.rank;
    let n = ratings.num_items();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0 / libm::sqrt(k as f64)).expect("positive sd");
    // Column j of the k x n buffer is v_j.
    let vt = DMatrix::from_fn(k, n, |_, _| normal.sample(&mut rng));
    run(ratings, malicious, cfg, vt)
}

/// Fits starting from the item factors of `init`.
pub fn als_fit_warm(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    cfg: &AlsConfig,
    init: &FactorModel,
) -> Result<AlsFit> {
    validate(ratings, malicious, cfg)?;
    if init.items.shape() != (ratings.num_items(), cfg.rank) {
        return Err(Error::ShapeMismatch(format!(
            "warm start has item factors {:?}, expected ({}, {})",
            init.items.shape(),
            ratings.num_items(),
            cfg.rank
        )));
    }
    run(ratings, malicious, cfg, init.items.transpose())
}

/// Row-major factor buffers stored transposed so each row vector is a contiguous column.
struct Factors {
    ut: DMatrix<f64>,
    mt: DMatrix<f64>,
    vt: DMatrix<f64>,
}

fn solve_rows(
    data: &SparseRatings,
    other_t: &DMatrix<f64>,
    lambda: f64,
    out_t: &mut DMatrix<f64>,
) -> Result<()> {
    let k = other_t.nrows();
    for i in 0..data.num_users() {
        let row = data.row(i);
        if row.is_empty() {
            out_t.column_mut(i).fill(0.0);
            continue;
        }
        let mut gram = ridge(k, lambda);
        let mut rhs = DVector::zeros(k);
        for r in row {
            let v = other_t.column(r.item);
            add_outer(&mut gram, &v, 1.0);
            rhs.axpy(r.value, &v, 1.0);
        }
        let sol = spd_solve(gram, &rhs, "user update")?;
        out_t.column_mut(i).copy_from(&sol);
    }
    Ok(())
}

fn solve_items(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    f: &mut Factors,
    lambda: f64,
) -> Result<()> {
    let k = f.vt.nrows();
    for j in 0..ratings.num_items() {
        let mut gram = ridge(k, lambda);
        let mut rhs = DVector::zeros(k);
        let mut any = false;
        for r in ratings.col(j) {
            let u = f.ut.column(r.user);
            add_outer(&mut gram, &u, 1.0);
            rhs.axpy(r.value, &u, 1.0);
            any = true;
        }
        for r in malicious.col(j) {
            let u = f.mt.column(r.user);
            add_outer(&mut gram, &u, 1.0);
            rhs.axpy(r.value, &u, 1.0);
            any = true;
        }
        if !any {
            f.vt.column_mut(j).fill(0.0);
            continue;
        }
        let sol = spd_solve(gram, &rhs, "item update")?;
        f.vt.column_mut(j).copy_from(&sol);
    }
    Ok(())
}

fn data_fit(data: &SparseRatings, ut: &DMatrix<f64>, vt: &DMatrix<f64>) -> f64 {
    data.entries()
        .iter()
        .map(|r| {
            let e = r.value - ut.column(r.user).dot(&vt.column(r.item));
            e * e
        })
        .sum()
}

fn objective_t(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    f: &Factors,
    lambda_u: f64,
    lambda_v: f64,
) -> f64 {
    data_fit(ratings, &f.ut, &f.vt)
        + data_fit(malicious, &f.mt, &f.vt)
        + lambda_u * (frobenius_sq(&f.ut) + frobenius_sq(&f.mt))
        + lambda_v * frobenius_sq(&f.vt)
}

fn run(
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
    cfg: &AlsConfig,
    vt: DMatrix<f64>,
) -> Result<AlsFit> {
    let k = cfg.rank;
    let mut f = Factors {
        ut: DMatrix::zeros(k, ratings.num_users()),
        mt: DMatrix::zeros(k, malicious.num_malicious()),
        vt,
    };
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter.max(1) {
        let prev_vt = f.vt.clone();
        solve_rows(ratings, &f.vt, cfg.lambda_u, &mut f.ut)?;
        solve_rows(malicious, &f.vt, cfg.lambda_u, &mut f.mt)?;
        solve_items(ratings, malicious, &mut f, cfg.lambda_v)?;
        let step = (&f.vt - &prev_vt).norm() / libm::fmax(f.vt.norm(), 1.0);
        let obj = objective_t(ratings, malicious, &f, cfg.lambda_u, cfg.lambda_v);
        if !obj.is_finite() || !all_finite(&f.vt) {
            return Err(Error::Divergence(format!(
                "non-finite ALS objective after {} sweeps",
                trace.len() + 1
            )));
        }
        let prev = trace.last().copied();
        trace.push(obj);
        if let Some(prev) = prev {
            let rel = (prev - obj) / libm::fmax(libm::fabs(prev), f64::MIN_POSITIVE);
            if rel < cfg.tol && step < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(AlsFit {
        model: FactorModel {
            users: f.ut.transpose(),
            malicious: f.mt.transpose(),
            items: f.vt.transpose(),
            lambda_u: cfg.lambda_u,
            lambda_v: cfg.lambda_v,
        },
        objective_trace: trace,
        converged,
    })
}

/// Value of the joint regularized objective at `model`.
pub fn als_objective(
    model: &FactorModel,
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
) -> f64 {
    let f = Factors {
        ut: model.users.transpose(),
        mt: model.malicious.transpose(),
        vt: model.items.transpose(),
    };
    objective_t(ratings, malicious, &f, model.lambda_u, model.lambda_v)
}

/// Largest Euclidean norm of any row's stationarity residual.
pub fn kkt_residual(
    model: &FactorModel,
    ratings: &SparseRatings,
    malicious: &MaliciousMatrix,
) -> f64 {
    let ut = model.users.transpose();
    let mt = model.malicious.transpose();
    let vt = model.items.transpose();
    let mut worst: f64 = 0.0;

    let mut row_residual = |data: &SparseRatings, factors_t: &DMatrix<f64>| {
        for i in 0..data.num_users() {
            let u = factors_t.column(i);
            let mut res = u * model.lambda_u;
            for r in data.row(i) {
                let v = vt.column(r.item);
                res.axpy(-(r.value - u.dot(&v)), &v, 1.0);
            }
            worst = worst.max(res.norm());
        }
    };
    row_residual(ratings, &ut);
    row_residual(malicious, &mt);

    for j in 0..ratings.num_items() {
        let v = vt.column(j);
        let mut res = v * model.lambda_v;
        for r in ratings.col(j) {
            let u = ut.column(r.user);
            res.axpy(-(r.value - u.dot(&v)), &u, 1.0);
        }
        for r in malicious.col(j) {
            let u = mt.column(r.user);
            res.axpy(-(r.value - u.dot(&v)), &u, 1.0);
        }
        worst = worst.max(res.norm());
    }
    worst
}
