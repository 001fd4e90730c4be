use cfpoison_core::als::AlsConfig;
use cfpoison_core::attack::{estimate_prior, sgld_attack, PriorNormalization, SgldConfig, Solver};
use cfpoison_core::metrics::{item_choice_t_test, paired_t_test, rmse_unseen};
use cfpoison_core::objective::UtilityConfig;
use cfpoison_core::ratings::{sample_support, AttackBudget, MaliciousMatrix, Mask};
use cfpoison_core::synth::{generate_synthetic, Popularity, SynthConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_symmetric_and_permutation_invariant(
        vals in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 12),
        shift in 0usize..12,
    ) {
        let a = DMatrix::from_fn(3, 4, |i, j| vals[i * 4 + j].0);
        let b = DMatrix::from_fn(3, 4, |i, j| vals[i * 4 + j].1);
        let mut mask = Mask::new(3, 4, false);
        for (k, v) in vals.iter().enumerate() {
            mask.set(k / 4, k % 4, v.2);
        }
        prop_assume!(mask.count() > 0);
        let r = rmse_unseen(&a, &b, &mask).unwrap();
        prop_assert_eq!(r, rmse_unseen(&b, &a, &mask).unwrap());
        prop_assert_eq!(rmse_unseen(&a, &a, &mask).unwrap(), 0.0);
        // cyclically relabel the entries (matrix and mask together)
        let idx = |k: usize| (k + shift) % 12;
        let pa = DMatrix::from_fn(3, 4, |i, j| vals[idx(i * 4 + j)].0);
        let pb = DMatrix::from_fn(3, 4, |i, j| vals[idx(i * 4 + j)].1);
        let mut pm = Mask::new(3, 4, false);
        for k in 0..12 {
            pm.set(k / 4, k % 4, vals[idx(k)].2);
        }
        let pr = rmse_unseen(&pa, &pb, &pm).unwrap();
        prop_assert!((pr - r).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn t_test_p_in_unit_interval_and_swap_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 2..20),
        noise in prop::collection::vec(-5.0f64..5.0, 20),
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let r = paired_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p));
        let s = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(s.t, -r.t);
        prop_assert_eq!(s.p, r.p);
    }
}

#[test]
fn uniform_support_against_power_law_items_is_detected() {
    let mut cfg = SynthConfig::new(200, 100, 5, 0.3, 21);
    cfg.popularity = Popularity::PowerLaw { exponent: 1.0 };
    let (normal, _) = generate_synthetic(&cfg).unwrap();
    let fake = sample_support(20, 100, 10, 2.0, 22).unwrap();
    let r = item_choice_t_test(&normal, &fake).unwrap();
    assert!(r.p < 0.05, "p = {}", r.p);
}

#[test]
fn sgld_utility_grows_with_beta() {
    let betas = [0.0, 0.6, 10.0];
    let mut per_beta = vec![Vec::new(); betas.len()];
    for seed in 0..5 {
        let (r, _) = generate_synthetic(&SynthConfig::new(40, 20, 2, 0.7, seed)).unwrap();
        let solver = Solver::Als(AlsConfig {
            rank: 2,
            lambda_u: 0.1,
            lambda_v: 0.1,
            tol: 1e-8,
            max_iter: 2000,
            seed,
        });
        let clean = solver.fit(&r, &MaliciousMatrix::empty(20)).unwrap().predict();
        let util = UtilityConfig::new(1.0, 0.0, vec![], clean, &r).unwrap();
        let prior = estimate_prior(&r, PriorNormalization::AllUsers).unwrap();
        let budget = AttackBudget::new(0.1, 5, 2.0, 20).unwrap();
        for (k, &beta) in betas.iter().enumerate() {
            let cfg = SgldConfig {
                beta,
                iterations: 200,
                seed,
                ..Default::default()
            };
            per_beta[k].push(sgld_attack(&r, &budget, &solver, &util, &prior, &cfg).unwrap().utility);
        }
    }
    let med: Vec<f64> = per_beta.into_iter().map(median).collect();
    assert!(med[0] <= med[1] && med[1] <= med[2], "medians {med:?}");
}
