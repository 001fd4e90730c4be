use std::fs;

use cfpoison::config::{AttackKind, EvalMask, ExperimentConfig};
use cfpoison::experiment::{cells, load_data, prepare, select_target, sweep, RESULT_COLUMNS};
use cfpoison::io::{read_malicious, write_malicious};
use cfpoison::run_experiment;
use cfpoison_core::ratings::{sample_support, MaliciousMatrix};
use nalgebra::DMatrix;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for kv in [
        "synth.users=40",
        "synth.items=20",
        "synth.rank=2",
        "synth.obs_fraction=0.4",
        "rank=2",
        "alpha=0,0.05",
        "budget_items=5",
        "pga.iters=3",
        "sgld.iters=3",
        "beta=0.1,0.6",
        "seed=0,1",
        "threads=2",
    ] {
        cfg.set_pair(kv).unwrap();
    }
    cfg
}

#[test]
fn cross_product_in_config_order() {
    let cfg = small();
    let c = cells(&cfg);
    // per seed and alpha: pga, sgld x 2 betas, uniform
    assert_eq!(c.len(), 2 * 2 * 4);
    assert_eq!(c[1].attack, AttackKind::Sgld);
    assert_eq!(c[1].beta, Some(0.1));
    assert_eq!(c[2].beta, Some(0.6));
    assert_eq!(c[0].beta, None);
    assert_eq!(c[8].seed, 1);
}

#[test]
fn zero_alpha_leaves_predictions_untouched() {
    let rows = sweep(&small()).unwrap().rows;
    for row in rows.iter().filter(|r| r.alpha == 0.0) {
        assert_eq!(row.rmse, 0.0);
        assert_eq!(row.num_malicious, 0);
        assert_eq!(row.utility, 0.0);
        assert!(row.t.is_none());
    }
    for row in rows.iter().filter(|r| r.alpha > 0.0) {
        assert!(row.error.is_none(), "{:?}", row.error);
        assert_eq!(row.num_malicious, 2);
        assert!(row.rmse > 0.0);
        let p = row.p.unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn output_files_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.output = dir.path().join("a");
    run_experiment(&cfg).unwrap();
    cfg.output = dir.path().join("b");
    cfg.threads = 1;
    run_experiment(&cfg).unwrap();
    let a = fs::read(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read(dir.path().join("b/results.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULT_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 1 + cells(&cfg).len());
    let manifest = fs::read_to_string(dir.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.starts_with("# cfpoison "));
    let body: String = manifest.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let mut reread = ExperimentConfig::parse(&body).unwrap();
    reread.output = cfg.output.clone();
    reread.threads = cfg.threads;
    assert_eq!(reread, cfg);
    assert!(dir.path().join("a/timings.csv").is_file());
    assert!(dir.path().join("a/id_map.csv").is_file());
}

#[test]
fn failing_cell_is_tagged_and_others_run() {
    let mut cfg = small();
    cfg.set_pair("alpha=0.05").unwrap();
    cfg.set_pair("seed=0").unwrap();
    cfg.set_pair("beta=0.6").unwrap();
    // the sampler refuses steps beyond its stability limit
    cfg.set_pair("sgld.step=100").unwrap();
    let rows = sweep(&cfg).unwrap().rows;
    let sgld = rows.iter().find(|r| r.attack == AttackKind::Sgld).unwrap();
    assert!(sgld.error.is_some());
    assert!(sgld.rmse.is_nan());
    for r in rows.iter().filter(|r| r.attack != AttackKind::Sgld) {
        assert!(r.error.is_none());
    }
}

#[test]
fn held_out_mask_mode() {
    let mut cfg = small();
    cfg.eval_mask = EvalMask::HeldOut(0.2);
    cfg.set_pair("seed=0").unwrap();
    let data = load_data(&cfg, 0).unwrap();
    let prep = prepare(&cfg, &data, 0).unwrap();
    let held = prep.unseen.count();
    assert_eq!(held + prep.train.len(), data.ratings.len());
    for (i, j) in prep.unseen.iter_set() {
        assert!(data.ratings.contains(i, j));
        assert!(!prep.train.contains(i, j));
    }
    let rows = sweep(&cfg).unwrap().rows;
    assert!(rows.iter().all(|r| r.error.is_none()));
}

#[test]
fn nuclear_cells_run() {
    let mut cfg = small();
    for kv in ["solver=nuclear", "lambda=0.5", "tol=1e-5", "seed=0", "alpha=0.05"] {
        cfg.set_pair(kv).unwrap();
    }
    let rows = sweep(&cfg).unwrap().rows;
    assert!(rows.iter().all(|r| r.error.is_none()), "{rows:?}");
}

#[test]
fn target_is_nearest_average() {
    let b = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.5, 0.0, 0.7, 1.5]);
    assert_eq!(select_target(&b, 0.8).unwrap(), 1);
    assert_eq!(select_target(&b, 0.0).unwrap(), 0);
    // averages 0, 0.85, 1.0: tie-free
    assert_eq!(select_target(&b, 2.0).unwrap(), 2);
}

#[test]
fn malicious_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mt.csv");
    let mt = sample_support(3, 10, 4, 2.0, 9).unwrap();
    write_malicious(&path, &mt).unwrap();
    assert_eq!(read_malicious(&path).unwrap(), mt);
    let empty = MaliciousMatrix::empty(10);
    write_malicious(&path, &empty).unwrap();
    assert_eq!(read_malicious(&path).unwrap(), empty);
    fs::write(&path, "#1,3\nuser,item,rating\n0,1\n").unwrap();
    let err = format!("{:#}", read_malicious(&path).unwrap_err());
    assert!(err.contains("line 3"), "{err}");
}
