//! The implicit gradients against finite differences of single-block ridge re-solves.
//!
//! Each formula differentiates one row (or column) system with every other block held
//! at the fitted values, so re-solving exactly that system and differencing must agree
//! to round-off, whatever the quality of the first-order approximation itself.

use cfpoison_core::als::{als_fit, AlsConfig, FactorModel};
use cfpoison_core::implicit::{
    als_implicit_grad, nuclear_implicit_grad, sigma_partial, GradSmoothing, SigmaPath,
};
use cfpoison_core::nuclear::{svt_fit, NuclearModel, SvtConfig};
use cfpoison_core::objective::{AlsThetaGrad, NuclearThetaGrad};
use cfpoison_core::ratings::{sample_support, MaliciousMatrix, SparseRatings};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;

fn instance(seed: u64) -> (SparseRatings, MaliciousMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for i in 0..14 {
        for j in 0..10 {
            if rng.random_bool(0.6) {
                t.push((i, j, rng.random_range(-2.0..2.0)));
            }
        }
    }
    let r = SparseRatings::new(14, 10, t).unwrap();
    let mt = sample_support(3, 10, 4, 2.0, seed + 7).unwrap();
    (r, mt)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `argmin_x Σ_r (y_r − a_rᵀx)² + reg·‖x‖²` by the normal equations.
fn ridge_solve(a: &DMatrix<f64>, y: &DVector<f64>, reg: f64) -> DVector<f64> {
    let k = a.ncols();
    let lhs = a.transpose() * a + DMatrix::identity(k, k) * reg;
    lhs.lu().solve(&(a.transpose() * y)).unwrap()
}

fn central(mt: &MaliciousMatrix, mut phi: impl FnMut(&MaliciousMatrix) -> f64) -> Vec<f64> {
    let base: Vec<f64> = mt.values().collect();
    (0..base.len())
        .map(|p| {
            let mut at = |d: f64| {
                let vals = base.iter().enumerate().map(|(q, &v)| if q == p { v + d } else { v });
                phi(&mt.with_values(vals).unwrap())
            };
            (at(EPS) - at(-EPS)) / (2.0 * EPS)
        })
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    let scale = b.iter().map(|x| x.abs()).fold(1.0, f64::max);
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * scale, "entry {k}: {x} vs {y}");
    }
}

/// `Σ_i ⟨G̃_i, ũ_i⟩ + Σ_j ⟨G_j, v_j⟩`, each factor re-solved with the others fixed.
fn als_frozen(model: &FactorModel, ratings: &SparseRatings, mt: &MaliciousMatrix, gu: &DMatrix<f64>, gv: &DMatrix<f64>) -> f64 {
    let k = model.items.ncols();
    let mut total = 0.0;
    for i in 0..mt.num_malicious() {
        let row = mt.row(i);
        let a = DMatrix::from_fn(row.len(), k, |r, c| model.items[(row[r].item, c)]);
        let y = DVector::from_iterator(row.len(), row.iter().map(|r| r.value));
        total += ridge_solve(&a, &y, model.lambda_u).dot(&gu.row(i).transpose());
    }
    for j in 0..ratings.num_items() {
        let mut a_rows: Vec<Vec<f64>> = Vec::new();
        let mut y = Vec::new();
        for r in ratings.col(j) {
            a_rows.push(model.users.row(r.user).iter().copied().collect());
            y.push(r.value);
        }
        for r in mt.col(j) {
            a_rows.push(model.malicious.row(r.user).iter().copied().collect());
            y.push(r.value);
        }
        let a = DMatrix::from_fn(a_rows.len(), k, |r, c| a_rows[r][c]);
        total += ridge_solve(&a, &DVector::from_vec(y), model.lambda_v).dot(&gv.row(j).transpose());
    }
    total
}

#[test]
fn als_formula_matches_frozen_block_differences() {
    for seed in 0..4 {
        let (r, mt) = instance(seed);
        let cfg = AlsConfig {
            rank: 2,
            lambda_u: 0.3,
            lambda_v: 0.2,
            tol: 1e-10,
            max_iter: 5000,
            seed,
        };
        let model = als_fit(&r, &mt, &cfg).unwrap().model;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let theta = AlsThetaGrad {
            users: DMatrix::zeros(14, 2),
            malicious: random(3, 2, &mut rng),
            items: random(10, 2, &mut rng),
        };
        let got: Vec<f64> = als_implicit_grad(&model, &r, &mt, &theta).unwrap().values().collect();
        let fd = central(&mt, |m| als_frozen(&model, &r, m, &theta.malicious, &theta.items));
        assert_close(&got, &fd, 1e-8);
    }
}

#[test]
fn als_formula_does_not_need_a_stationary_model() {
    let (r, mt) = instance(11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = FactorModel {
        users: random(14, 3, &mut rng),
        malicious: random(3, 3, &mut rng),
        items: random(10, 3, &mut rng),
        lambda_u: 0.5,
        lambda_v: 0.5,
    };
    let theta = AlsThetaGrad {
        users: DMatrix::zeros(14, 3),
        malicious: random(3, 3, &mut rng),
        items: random(10, 3, &mut rng),
    };
    let got: Vec<f64> = als_implicit_grad(&model, &r, &mt, &theta).unwrap().values().collect();
    let fd = central(&mt, |m| als_frozen(&model, &r, m, &theta.malicious, &theta.items));
    assert_close(&got, &fd, 1e-8);
}

/// Same construction for the nuclear model: rows of the ridge systems are `(Σ+λI)v_j`
/// and `(Σ+λI)u_i`; the dual term is a constant offset and drops out of the derivative.
fn nuclear_frozen(model: &NuclearModel, ratings: &SparseRatings, mt: &MaliciousMatrix, tau: f64, gu: &DMatrix<f64>, gv: &DMatrix<f64>) -> f64 {
    let rho = model.sigma.len();
    let d: Vec<f64> = model.sigma.iter().map(|s| s + model.lambda).collect();
    let scaled = |m: &DMatrix<f64>, row: usize| -> Vec<f64> { (0..rho).map(|t| m[(row, t)] * d[t]).collect() };
    let mut total = 0.0;
    for i in 0..mt.num_malicious() {
        let row = mt.row(i);
        let a_rows: Vec<Vec<f64>> = row.iter().map(|r| scaled(&model.items, r.item)).collect();
        let a = DMatrix::from_fn(row.len(), rho, |r, c| a_rows[r][c]);
        let y = DVector::from_iterator(row.len(), row.iter().map(|r| r.value));
        total += ridge_solve(&a, &y, tau).dot(&gu.row(i).transpose());
    }
    for j in 0..ratings.num_items() {
        let mut a_rows = Vec::new();
        let mut y = Vec::new();
        for r in ratings.col(j) {
            a_rows.push(scaled(&model.users, r.user));
            y.push(r.value);
        }
        for r in mt.col(j) {
            a_rows.push(scaled(&model.malicious, r.user));
            y.push(r.value);
        }
        let a = DMatrix::from_fn(a_rows.len(), rho, |r, c| a_rows[r][c]);
        total += ridge_solve(&a, &DVector::from_vec(y), tau).dot(&gv.row(j).transpose());
    }
    total
}

#[test]
fn nuclear_factor_paths_match_frozen_block_differences() {
    for seed in 0..4 {
        let (r, mt) = instance(seed);
        let cfg = SvtConfig {
            lambda: 0.5,
            step: 0.5,
            tol: 1e-9,
            max_iter: 50_000,
        };
        let model = svt_fit(&r, &mt, &cfg).unwrap().model;
        let rho = model.rank();
        assert!(rho >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let theta = NuclearThetaGrad {
            users: DMatrix::zeros(14, rho),
            malicious: random(3, rho, &mut rng),
            items: random(10, rho, &mut rng),
            sigma: DVector::from_fn(rho, |_, _| rng.random_range(-1.0..1.0)),
        };
        for tau in [1e-3, 0.1] {
            let got: Vec<f64> = nuclear_implicit_grad(
                &model,
                &r,
                &mt,
                &theta,
                GradSmoothing { tau },
                SigmaPath::Disabled,
            )
            .unwrap()
            .values()
            .collect();
            let fd = central(&mt, |m| nuclear_frozen(&model, &r, m, tau, &theta.malicious, &theta.items));
            assert_close(&got, &fd, 1e-7);
        }
    }
}

#[test]
fn sigma_path_adds_clamped_reciprocal_term() {
    let (r, mt) = instance(3);
    let cfg = SvtConfig {
        lambda: 0.5,
        step: 0.5,
        tol: 1e-9,
        max_iter: 50_000,
    };
    let model = svt_fit(&r, &mt, &cfg).unwrap().model;
    let rho = model.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let theta = NuclearThetaGrad {
        users: DMatrix::zeros(14, rho),
        malicious: random(3, rho, &mut rng),
        items: random(10, rho, &mut rng),
        sigma: DVector::from_fn(rho, |_, _| rng.random_range(-1.0..1.0)),
    };
    let smoothing = GradSmoothing { tau: 1e-3 };
    let on = nuclear_implicit_grad(&model, &r, &mt, &theta, smoothing, SigmaPath::Clamped).unwrap();
    let off = nuclear_implicit_grad(&model, &r, &mt, &theta, smoothing, SigmaPath::Disabled).unwrap();
    for ((e, a), b) in mt.entries().iter().zip(on.values()).zip(off.values()) {
        let mut extra = 0.0;
        for t in 0..rho {
            let p = model.malicious[(e.user, t)] * model.items[(e.item, t)];
            let recip = if p.abs() < 1e-6 { 1e6_f64.copysign(p) } else { 1.0 / p };
            assert_eq!(sigma_partial(model.malicious[(e.user, t)], model.items[(e.item, t)]), recip);
            extra += recip * theta.sigma[t];
        }
        assert!((a - b - extra).abs() <= 1e-9 * extra.abs().max(1.0), "{a} - {b} vs {extra}");
    }
}
