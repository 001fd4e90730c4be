//! Seeded low-rank rating matrices for experiments without a dataset.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::ratings::SparseRatings;

/// Largest magnitude of the ground truth after rescaling.
pub const RATING_SCALE: f64 = 2.0;

/// How observed entries are spread over items.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Popularity {
    /// Every entry observed independently with the same probability.
    #[default]
    Uniform,
    /// Item `j` observed with probability proportional to `r_j^(−exponent)`, where
    /// `r_j` is the item's rank in a seeded random order; capped at 1.
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub obs_fraction: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub popularity: Popularity,
}

impl SynthConfig {
    pub fn new(users: usize, items: usize, rank: usize, obs_fraction: f64, seed: u64) -> Self {
        Self {
            users,
            items,
            rank,
            obs_fraction,
            noise_sd: 0.0,
            seed,
            popularity: Popularity::Uniform,
        }
    }
}

/// Observed ratings and the dense ground truth they were drawn from.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(SparseRatings, DMatrix<f64>)> {
    let (m, n, k) = (cfg.users, cfg.items, cfg.rank);
    if m == 0 || n == 0 || k == 0 || k > m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= rank <= min(users, items), got rank {k} for {m}x{n}"
        )));
    }
    if !(cfg.obs_fraction > 0.0 && cfg.obs_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "observed fraction must be in (0, 1], got {}",
            cfg.obs_fraction
        )));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sd must be non-negative, got {}",
            cfg.noise_sd
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = DMatrix::<f64>::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
    let b = DMatrix::<f64>::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    let mut truth = a * b.transpose();
    let peak = truth.amax();
    if peak > 0.0 {
        truth *= RATING_SCALE / peak;
    }

    let probs = match cfg.popularity {
        Popularity::Uniform => alloc::vec![cfg.obs_fraction; n],
        Popularity::PowerLaw { exponent } => {
            if !(exponent >= 0.0 && exponent.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "popularity exponent must be non-negative, got {exponent}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut weights = alloc::vec![0.0; n];
            for (r, &j) in order.iter().enumerate() {
                weights[j] = libm::pow((r + 1) as f64, -exponent);
            }
            calibrate(&weights, cfg.obs_fraction)
        }
    };

    let noise = Normal::new(0.0, cfg.noise_sd).expect("validated sd");
    let mut triples = Vec::new();
    for i in 0..m {
        for (j, &p) in probs.iter().enumerate() {
            if p >= 1.0 || rng.random_bool(p) {
                let e = if cfg.noise_sd > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                triples.push((i, j, truth[(i, j)] + e));
            }
        }
    }
    Ok((SparseRatings::new(m, n, triples)?, truth))
}

/// Per-item probabilities `min(1, c·w_j)` whose mean equals `target`.
fn calibrate(weights: &[f64], target: f64) -> Vec<f64> {
    let n = weights.len() as f64;
    let mean_at = |c: f64| weights.iter().map(|w| libm::fmin(1.0, c * w)).sum::<f64>() / n;
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_at(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    weights.iter().map(|w| libm::fmin(1.0, hi * w)).collect()
}
