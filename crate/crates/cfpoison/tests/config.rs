use cfpoison::config::{AttackKind, DataSource, EvalMask, ExperimentConfig, SolverKind};
use cfpoison_core::synth::Popularity;

#[test]
fn defaults_validate() {
    ExperimentConfig::default().validate().unwrap();
}

#[test]
fn parses_comments_lists_and_enums() {
    let cfg = ExperimentConfig::parse(
        "# sweep\n\
         solver = nuclear   # trailing comment\n\
         alpha = 0.01, 0.03\n\
         attacks = pga, uniform\n\
         synth.popularity = powerlaw:1.5\n\
         eval_mask = heldout:0.2\n\
         sgld.step = 0.25\n\
         seed = 3, 4\n\n",
    )
    .unwrap();
    assert_eq!(cfg.solver, SolverKind::Nuclear);
    assert_eq!(cfg.alphas, vec![0.01, 0.03]);
    assert_eq!(cfg.attacks, vec![AttackKind::Pga, AttackKind::Uniform]);
    assert_eq!(cfg.synth_popularity, Popularity::PowerLaw { exponent: 1.5 });
    assert_eq!(cfg.eval_mask, EvalMask::HeldOut(0.2));
    assert_eq!(cfg.sgld_step, Some(0.25));
    assert_eq!(cfg.seeds, vec![3, 4]);
    assert_eq!(cfg.caps(), (1000, 1700));
}

#[test]
fn text_round_trip() {
    let mut cfg = ExperimentConfig::default();
    cfg.set_pair("lambda=0.3").unwrap();
    cfg.set_pair("beta=0.1,0.6,3").unwrap();
    cfg.set_pair("max_users=50").unwrap();
    cfg.set_pair("prior=raters").unwrap();
    let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn errors_name_the_line() {
    let err = ExperimentConfig::parse("rank = 3\nbogus = 1\n").unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("line 2") && msg.contains("bogus"), "{msg}");
    let err = ExperimentConfig::parse("rank = three\n").unwrap_err();
    assert!(format!("{err:#}").contains("line 1"));
    assert!(ExperimentConfig::parse("just words\n").is_err());
}

#[test]
fn rejects_invalid_values() {
    for text in [
        "lambda = 0",
        "alpha = -0.1",
        "attacks = pga, saved",
        "eval_mask = heldout:1.5",
        "native_range = 5, 0.5",
        "data = movielens:/nonexistent.csv",
        "rank = 0",
    ] {
        assert!(ExperimentConfig::parse(text).is_err(), "{text}");
    }
}

#[test]
fn data_sources() {
    let mut cfg = ExperimentConfig::default();
    cfg.set("data", "movielens:/x/ratings.csv").unwrap();
    assert_eq!(cfg.data, DataSource::MovieLens("/x/ratings.csv".into()));
    cfg.set("data", "ratings:r.csv").unwrap();
    assert_eq!(cfg.data, DataSource::Ratings("r.csv".into()));
    assert!(cfg.set("data", "ftp://x").is_err());
}
