//! Attacker utilities over the normal-user predictions and their gradients.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::als::FactorModel;
use crate::error::{Error, Result};
use crate::nuclear::NuclearModel;
use crate::ratings::{Mask, SparseRatings};

/// Hybrid utility `μ₁·R^avail + μ₂·R^eva`.
///
/// `R^avail = ‖R_unseen(M̂ − M̄)‖_F²` and `R^eva = Σ_i Σ_{j∈J₀} w(j) M̂_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityConfig {
    pub mu1: f64,
    pub mu2: f64,
    /// Target items `J₀` with their weights `w(j)`.
    pub targets: Vec<(usize, f64)>,
    /// Clean-model predictions `M̄` (`m x n`).
    pub baseline: DMatrix<f64>,
    /// Entries counted by the availability term, normally the complement of Ω.
    pub unseen: Mask,
}

impl UtilityConfig {
    /// Availability term evaluated on the complement of the observed entries.
    pub fn new(
        mu1: f64,
        mu2: f64,
        targets: Vec<(usize, f64)>,
        baseline: DMatrix<f64>,
        observed: &SparseRatings,
    ) -> Result<Self> {
        let unseen = observed.observed_mask().complement();
        Self::with_mask(mu1, mu2, targets, baseline, unseen)
    }

    /// Availability term evaluated on an explicit mask.
    pub fn with_mask(
        mu1: f64,
        mu2: f64,
        targets: Vec<(usize, f64)>,
        baseline: DMatrix<f64>,
        unseen: Mask,
    ) -> Result<Self> {
        let (m, n) = baseline.shape();
        if unseen.rows() != m || unseen.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "baseline is {m}x{n}, mask is {}x{}",
                unseen.rows(),
                unseen.cols()
            )));
        }
        for (idx, &(j, w)) in targets.iter().enumerate() {
            if j >= n {
                return Err(Error::IndexOutOfRange { user: 0, item: j });
            }
            if targets[..idx].iter().any(|&(k, _)| k == j) {
                return Err(Error::DuplicateEntry { user: 0, item: j });
            }
            if !w.is_finite() {
                return Err(Error::NonFinite("target weight"));
            }
        }
        if !(mu1.is_finite() && mu2.is_finite()) {
            return Err(Error::NonFinite("utility weights"));
        }
        if !crate::linalg::all_finite(&baseline) {
            return Err(Error::NonFinite("baseline predictions"));
        }
        Ok(Self {
            mu1,
            mu2,
            targets,
            baseline,
            unseen,
        })
    }

    /// Same targets and baseline with different weights.
    pub fn reweighted(&self, mu1: f64, mu2: f64) -> Self {
        Self {
            mu1,
            mu2,
            ..self.clone()
        }
    }

    pub fn num_users(&self) -> usize {
        self.baseline.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.baseline.ncols()
    }

    fn check_shape(&self, mhat: &DMatrix<f64>) -> Result<()> {
        if mhat.shape() != self.baseline.shape() {
            return Err(Error::ShapeMismatch(format!(
                "predictions are {:?}, baseline is {:?}",
                mhat.shape(),
                self.baseline.shape()
            )));
        }
        Ok(())
    }
}

fn availability(mhat: &DMatrix<f64>, cfg: &UtilityConfig) -> f64 {
    cfg.unseen
        .iter_set()
        .map(|(i, j)| {
            let d = mhat[(i, j)] - cfg.baseline[(i, j)];
            d * d
        })
        .sum()
}

fn integrity(mhat: &DMatrix<f64>, cfg: &UtilityConfig) -> f64 {
    cfg.targets
        .iter()
        .map(|&(j, w)| w * mhat.column(j).sum())
        .sum()
}

/// `μ₁·R^avail(M̂) + μ₂·R^eva(M̂)`.
pub fn utility_value(mhat: &DMatrix<f64>, cfg: &UtilityConfig) -> Result<f64> {
    cfg.check_shape(mhat)?;
    let mut total = 0.0;
    if cfg.mu1 != 0.0 {
        total += cfg.mu1 * availability(mhat, cfg);
    }
    if cfg.mu2 != 0.0 {
        total += cfg.mu2 * integrity(mhat, cfg);
    }
    Ok(total)
}

/// Entrywise gradient of [`utility_value`] with respect to `M̂`.
pub fn utility_grad_mhat(mhat: &DMatrix<f64>, cfg: &UtilityConfig) -> Result<DMatrix<f64>> {
    cfg.check_shape(mhat)?;
    let mut g = DMatrix::zeros(mhat.nrows(), mhat.ncols());
    if cfg.mu1 != 0.0 {
        for (i, j) in cfg.unseen.iter_set() {
            g[(i, j)] = 2.0 * cfg.mu1 * (mhat[(i, j)] - cfg.baseline[(i, j)]);
        }
    }
    if cfg.mu2 != 0.0 {
        for &(j, w) in &cfg.targets {
            g.column_mut(j).add_scalar_mut(cfg.mu2 * w);
        }
    }
    Ok(g)
}

/// `∂R/∂Θ` for the factorization model.
#[derive(Debug, Clone, PartialEq)]
pub struct AlsThetaGrad {
    /// `∂R/∂U = G V`
    pub users: DMatrix<f64>,
    /// `∂R/∂Ũ`, zero because predictions cover normal users only.
    pub malicious: DMatrix<f64>,
    /// `∂R/∂V = Gᵀ U`
    pub items: DMatrix<f64>,
}

impl AlsThetaGrad {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            users: &self.users * c,
            malicious: &self.malicious * c,
            items: &self.items * c,
        }
    }
}

fn check_grad_shape(g: &DMatrix<f64>, m: usize, n: usize) -> Result<()> {
    if g.shape() != (m, n) {
        return Err(Error::ShapeMismatch(format!(
            "utility gradient is {:?}, model predicts {m}x{n}",
            g.shape()
        )));
    }
    Ok(())
}

pub fn grad_r_theta_als(model: &FactorModel, g: &DMatrix<f64>) -> Result<AlsThetaGrad> {
    check_grad_shape(g, model.users.nrows(), model.items.nrows())?;
    Ok(AlsThetaGrad {
        users: g * &model.items,
        malicious: DMatrix::zeros(model.malicious.nrows(), model.rank()),
        items: g.transpose() * &model.users,
    })
}

/// `∂R/∂Θ′` for the nuclear model's reduced factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearThetaGrad {
    /// `G V Σ`
    pub users: DMatrix<f64>,
    /// Zero, as for the factorization model.
    pub malicious: DMatrix<f64>,
    /// `Gᵀ U Σ`
    pub items: DMatrix<f64>,
    /// `u_{·t}ᵀ G v_{·t}`
    pub sigma: DVector<f64>,
}

impl NuclearThetaGrad {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            users: &self.users * c,
            malicious: &self.malicious * c,
            items: &self.items * c,
            sigma: &self.sigma * c,
        }
    }
}

pub fn grad_r_theta_nuclear(model: &NuclearModel, g: &DMatrix<f64>) -> Result<NuclearThetaGrad> {
    check_grad_shape(g, model.users.nrows(), model.items.nrows())?;
    let sigma = DMatrix::from_diagonal(&model.sigma);
    let gv = g * &model.items;
    let gtu = g.transpose() * &model.users;
    let rho = model.rank();
    let per_sigma = DVector::from_fn(rho, |t, _| model.users.column(t).dot(&gv.column(t)));
    Ok(NuclearThetaGrad {
        users: &gv * &sigma,
        malicious: DMatrix::zeros(model.malicious.nrows(), rho),
        items: gtu * &sigma,
        sigma: per_sigma,
    })
}
