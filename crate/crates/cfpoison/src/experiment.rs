//! Attack sweeps: one row per (seed, α, attack, β) cell.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use cfpoison_core::als::AlsConfig;
use cfpoison_core::attack::{
    estimate_prior, pga_attack, sgld_attack, uniform_attack, ItemPrior, PgaConfig, SgldConfig,
    Solver, StepSchedule,
};
use cfpoison_core::implicit::GradSmoothing;
use cfpoison_core::metrics::{avg_item_rating, item_choice_t_test, popularity_t_test, rmse_unseen};
use cfpoison_core::nuclear::SvtConfig;
use cfpoison_core::objective::{utility_value, UtilityConfig};
use cfpoison_core::ratings::{check_feasible, AttackBudget, MaliciousMatrix, Mask, SparseRatings};
use cfpoison_core::synth::{generate_synthetic, SynthConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{AttackKind, DataSource, EvalMask, ExperimentConfig, SolverKind};
use crate::movielens::{self, Dataset, LoadOptions};

/// Column order of the results file.
pub const RESULT_COLUMNS: [&str; 17] = [
    "alpha",
    "attack",
    "beta",
    "mu1",
    "mu2",
    "rmse",
    "avg_rating",
    "t",
    "p",
    "utility",
    "seed",
    "solver",
    "target_item",
    "num_malicious",
    "popularity_t",
    "popularity_p",
    "error",
];

/// Loads the configured ratings, before any capping.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    Ok(match &cfg.data {
        DataSource::Synthetic => {
            let synth = SynthConfig {
                users: cfg.synth_users,
                items: cfg.synth_items,
                rank: cfg.synth_rank,
                obs_fraction: cfg.synth_obs_fraction,
                noise_sd: cfg.synth_noise_sd,
                seed,
                popularity: cfg.synth_popularity,
            };
            let (ratings, _) = generate_synthetic(&synth)?;
            Dataset {
                user_ids: (0..ratings.num_users() as u64).collect(),
                item_ids: (0..ratings.num_items() as u64).collect(),
                ratings,
            }
        }
        DataSource::MovieLens(path) => movielens::load_movielens(
            path,
            &LoadOptions {
                min_ratings: cfg.min_ratings,
                native: cfg.native_range,
                target: cfg.target_range,
            },
        )
        .with_context(|| format!("loading {}", path.display()))?,
        DataSource::Ratings(path) => movielens::load_ratings(path)
            .with_context(|| format!("loading {}", path.display()))?,
    })
}

pub fn build_solver(cfg: &ExperimentConfig, seed: u64) -> Solver {
    match cfg.solver {
        SolverKind::Als => Solver::Als(AlsConfig {
            rank: cfg.rank,
            lambda_u: cfg.lambda_u,
            lambda_v: cfg.lambda_v,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            seed,
        }),
        SolverKind::Nuclear => Solver::Nuclear {
            svt: SvtConfig {
                lambda: cfg.lambda,
                step: cfg.svt_step,
                tol: cfg.tol,
                max_iter: cfg.max_iter,
            },
            smoothing: GradSmoothing { tau: cfg.tau },
            sigma_path: cfg.sigma_path,
        },
    }
}

/// Everything a cell needs that does not depend on the attack.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub data: Dataset,
    /// Entries the recommender is trained on.
    pub train: SparseRatings,
    pub unseen: Mask,
    /// Clean predictions.
    pub baseline: DMatrix<f64>,
    pub target: usize,
    pub prior: ItemPrior,
    pub solver: Solver,
}

impl Prepared {
    pub fn utility(&self, cfg: &ExperimentConfig) -> Result<UtilityConfig> {
        Ok(UtilityConfig::with_mask(
            cfg.mu1,
            cfg.mu2,
            vec![(self.target, cfg.target_weight)],
            self.baseline.clone(),
            self.unseen.clone(),
        )?)
    }
}

/// Item whose average clean prediction is nearest `level`; ties go to the lower index.
pub fn select_target(baseline: &DMatrix<f64>, level: f64) -> Result<usize> {
    let mut best = (f64::INFINITY, 0);
    for j in 0..baseline.ncols() {
        let d = (avg_item_rating(baseline, j)? - level).abs();
        if d < best.0 {
            best = (d, j);
        }
    }
    Ok(best.1)
}

fn split(data: &Dataset, mode: EvalMask, seed: u64) -> (SparseRatings, Mask) {
    match mode {
        EvalMask::Complement => {
            let train = data.ratings.clone();
            let unseen = train.observed_mask().complement();
            (train, unseen)
        }
        EvalMask::HeldOut(fraction) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5);
            let held: Vec<bool> = (0..data.ratings.len())
                .map(|_| rng.random_bool(fraction))
                .collect();
            let mut unseen = Mask::new(data.ratings.num_users(), data.ratings.num_items(), false);
            let mut k = 0;
            let train = data.ratings.filter(|r| {
                let h = held[k];
                k += 1;
                if h {
                    unseen.set(r.user, r.item, true);
                }
                !h
            });
            (train, unseen)
        }
    }
}

/// Caps the data, splits it, fits the clean model and picks the target item.
pub fn prepare(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Prepared> {
    let (max_users, max_items) = cfg.caps();
    let data = if data.ratings.num_users() > max_users || data.ratings.num_items() > max_items {
        movielens::subset(data, max_users, max_items)?
    } else {
        data.clone()
    };
    let (train, unseen) = split(&data, cfg.eval_mask, seed);
    if unseen.count() == 0 {
        anyhow::bail!("no unseen entries to evaluate on");
    }
    let solver = build_solver(cfg, seed);
    let baseline = solver
        .fit(&train, &MaliciousMatrix::empty(train.num_items()))
        .context("fitting the clean model")?
        .predict();
    let target = select_target(&baseline, cfg.target_level)?;
    let prior = estimate_prior(&train, cfg.prior)?;
    log::info!(
        "seed {seed}: {}x{} with {} training ratings, target item {target}",
        train.num_users(),
        train.num_items(),
        train.len()
    );
    Ok(Prepared {
        seed,
        data,
        train,
        unseen,
        baseline,
        target,
        prior,
        solver,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub alpha: f64,
    pub attack: AttackKind,
    /// Only set for SGLD.
    pub beta: Option<f64>,
}

/// The cross product in config order: seed, then α, then attack, then β.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for &alpha in &cfg.alphas {
            for &attack in &cfg.attacks {
                if attack == AttackKind::Sgld {
                    for &beta in &cfg.betas {
                        out.push(Cell {
                            seed,
                            alpha,
                            attack,
                            beta: Some(beta),
                        });
                    }
                } else {
                    out.push(Cell {
                        seed,
                        alpha,
                        attack,
                        beta: None,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub alpha: f64,
    pub attack: AttackKind,
    pub beta: Option<f64>,
    pub mu1: f64,
    pub mu2: f64,
    pub rmse: f64,
    pub avg_rating: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub utility: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub target_item: usize,
    pub num_malicious: usize,
    pub popularity_t: Option<f64>,
    pub popularity_p: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    fn blank(cfg: &ExperimentConfig, cell: &Cell, target: usize) -> Self {
        Self {
            alpha: cell.alpha,
            attack: cell.attack,
            beta: cell.beta,
            mu1: cfg.mu1,
            mu2: cfg.mu2,
            rmse: f64::NAN,
            avg_rating: f64::NAN,
            t: None,
            p: None,
            utility: f64::NAN,
            seed: cell.seed,
            solver: cfg.solver,
            target_item: target,
            num_malicious: 0,
            popularity_t: None,
            popularity_p: None,
            error: None,
        }
    }

    fn fields(&self) -> Vec<String> {
        let f = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        vec![
            f(self.alpha),
            self.attack.name().to_string(),
            o(self.beta),
            f(self.mu1),
            f(self.mu2),
            f(self.rmse),
            f(self.avg_rating),
            o(self.t),
            o(self.p),
            f(self.utility),
            self.seed.to_string(),
            match self.solver {
                SolverKind::Als => "als",
                SolverKind::Nuclear => "nuclear",
            }
            .to_string(),
            self.target_item.to_string(),
            self.num_malicious.to_string(),
            o(self.popularity_t),
            o(self.popularity_p),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// The budget of a cell; `None` when it has no fake users.
pub fn cell_budget(cfg: &ExperimentConfig, prep: &Prepared, cell: &Cell) -> Result<Option<AttackBudget>> {
    if cell.alpha == 0.0 || cell.attack == AttackKind::None {
        return Ok(None);
    }
    Ok(Some(AttackBudget::new(
        cell.alpha,
        cfg.budget_items,
        cfg.bound,
        prep.train.num_items(),
    )?))
}

/// Runs the cell's attack and returns the fake users it produced.
pub fn run_attack(cfg: &ExperimentConfig, prep: &Prepared, cell: &Cell) -> Result<MaliciousMatrix> {
    let n = prep.train.num_items();
    let Some(budget) = cell_budget(cfg, prep, cell)? else {
        return Ok(MaliciousMatrix::empty(n));
    };
    let utility = prep.utility(cfg)?;
    Ok(match cell.attack {
        AttackKind::None => MaliciousMatrix::empty(n),
        AttackKind::Saved => anyhow::bail!("saved fake users are read, not generated"),
        AttackKind::Pga => {
            let pga = PgaConfig {
                max_iter: cfg.pga_iters,
                schedule: if cfg.pga_decay {
                    StepSchedule::InvSqrt(cfg.pga_step)
                } else {
                    StepSchedule::Constant(cfg.pga_step)
                },
                conv_tol: cfg.pga_conv_tol,
                seed: cell.seed,
            };
            pga_attack(&prep.train, &budget, &prep.solver, &utility, &pga)?.malicious
        }
        AttackKind::Sgld => {
            let sgld = SgldConfig {
                beta: cell.beta.unwrap_or(cfg.betas[0]),
                iterations: cfg.sgld_iters,
                schedule: cfg.sgld_step.map(StepSchedule::Constant),
                seed: cell.seed,
                noise: cfg.sgld_noise,
                preconditioned: cfg.sgld_preconditioned,
            };
            sgld_attack(&prep.train, &budget, &prep.solver, &utility, &prep.prior, &sgld)?.malicious
        }
        AttackKind::Uniform => uniform_attack(&prep.train, &budget, cell.seed)?,
    })
}

/// [`metrics`] after asserting that `mt` is feasible.
///
/// # Panics
/// If `mt` violates the cell's budget.
pub fn evaluate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cell: &Cell,
    mt: &MaliciousMatrix,
) -> Result<ResultRow> {
    if let Some(budget) = cell_budget(cfg, prep, cell)? {
        assert!(
            check_feasible(mt, &budget),
            "attack output violates its budget"
        );
    } else {
        assert_eq!(mt.num_malicious(), 0, "a cell without budget produced fake users");
    }
    metrics(cfg, prep, cell, mt)
}

/// Refits on the poisoned data from a cold start and computes every metric,
/// without checking `mt` against the cell's budget.
pub fn metrics(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    cell: &Cell,
    mt: &MaliciousMatrix,
) -> Result<ResultRow> {
    let mut row = ResultRow::blank(cfg, cell, prep.target);
    row.num_malicious = mt.num_malicious();
    let mhat = prep.solver.fit(&prep.train, mt)?.predict();
    row.rmse = rmse_unseen(&mhat, &prep.baseline, &prep.unseen)?;
    row.avg_rating = avg_item_rating(&mhat, prep.target)?;
    row.utility = utility_value(&mhat, &prep.utility(cfg)?)?;
    if mt.num_malicious() > 0 {
        let tt = item_choice_t_test(&prep.train, mt)?;
        row.t = Some(tt.t);
        row.p = Some(tt.p);
        // pairs over fake users, so it needs two of them
        if (0..mt.num_malicious()).filter(|&i| !mt.row(i).is_empty()).count() >= 2 {
            let pt = popularity_t_test(&prep.train, mt)?;
            row.popularity_t = Some(pt.t);
            row.popularity_p = Some(pt.p);
        }
    }
    Ok(row)
}

/// Result row, fake users (when the attack succeeded) and wall time of one cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub row: ResultRow,
    pub malicious: Option<MaliciousMatrix>,
    pub seconds: f64,
}

/// Never fails: errors end up in the row's error column.
pub fn run_cell(cfg: &ExperimentConfig, prep: &Prepared, cell: &Cell) -> CellOutput {
    let start = Instant::now();
    let result = run_attack(cfg, prep, cell).and_then(|mt| Ok((evaluate(cfg, prep, cell, &mt)?, mt)));
    let (row, malicious) = match result {
        Ok((row, mt)) => (row, Some(mt)),
        Err(e) => {
            log::warn!("cell {cell:?} failed: {e:#}");
            let mut row = ResultRow::blank(cfg, cell, prep.target);
            row.error = Some(format!("{e:#}"));
            (row, None)
        }
    };
    CellOutput {
        row,
        malicious,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Result rows in cell order and the matching wall times.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<ResultRow>,
    /// Fake users of each cell; `None` where the cell failed.
    pub malicious: Vec<Option<MaliciousMatrix>>,
    pub seconds: Vec<f64>,
    pub prepared: Vec<Prepared>,
}

/// Prepares every seed, then runs all cells on a worker pool.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Sweep> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .context("building the worker pool")?;
    pool.install(|| {
        let fixed = match cfg.data {
            DataSource::Synthetic => None,
            _ => Some(load_data(cfg, 0)?),
        };
        let prepared: Vec<Prepared> = cfg
            .seeds
            .par_iter()
            .map(|&seed| match &fixed {
                Some(d) => prepare(cfg, d, seed),
                None => prepare(cfg, &load_data(cfg, seed)?, seed),
            })
            .collect::<Result<_>>()?;
        let cells = cells(cfg);
        let outputs: Vec<CellOutput> = cells
            .par_iter()
            .map(|cell| {
                let k = cfg.seeds.iter().position(|&s| s == cell.seed).expect("seed of a cell");
                run_cell(cfg, &prepared[k], cell)
            })
            .collect();
        Ok(Sweep {
            rows: outputs.iter().map(|o| o.row.clone()).collect(),
            malicious: outputs.iter().map(|o| o.malicious.clone()).collect(),
            seconds: outputs.iter().map(|o| o.seconds).collect(),
            prepared,
        })
    })
}

/// Runs the sweep and writes `results.csv`, `timings.csv`, `manifest.txt` and
/// `id_map.csv` into the output directory.
///
/// Wall times live in their own file so that `results.csv` is identical across
/// runs of the same config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let out = &cfg.output;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_manifest(&out.join("manifest.txt"), cfg)?;
    let sweep = sweep(cfg)?;
    if let Some(first) = sweep.prepared.first() {
        movielens::write_id_map(&out.join("id_map.csv"), &first.data)?;
    }
    write_results(&out.join("results.csv"), &sweep.rows)?;
    let mut w = csv::Writer::from_path(out.join("timings.csv"))?;
    w.write_record(["seed", "alpha", "attack", "beta", "wall_seconds"])?;
    for (row, secs) in sweep.rows.iter().zip(&sweep.seconds) {
        w.write_record([
            row.seed.to_string(),
            row.alpha.to_string(),
            row.attack.name().to_string(),
            row.beta.map(|b| b.to_string()).unwrap_or_default(),
            format!("{secs:.3}"),
        ])?;
    }
    w.flush()?;
    Ok(sweep.rows)
}

/// Rows are written by one writer after all cells finish, in cell order.
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_rows(file, rows)
}

pub fn write_rows(out: impl std::io::Write, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let text = format!(
        "# cfpoison {}\n# cfpoison-core {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfpoison_core::VERSION,
        cfg.to_text()
    );
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
