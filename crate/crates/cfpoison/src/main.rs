use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cfpoison::config::{AttackKind, ExperimentConfig, SolverKind};
use cfpoison::experiment::{self, Cell};
use cfpoison::gradcheck::{als_gradcheck, nuclear_gradcheck};
use cfpoison::movielens::{write_ratings, Dataset};
use cfpoison::{io, run_experiment};
use cfpoison_core::attack::Solver;
use cfpoison_core::ratings::{check_feasible, sample_support, AttackBudget};
use cfpoison_core::synth::{generate_synthetic, Popularity, SynthConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Poisoning attacks on matrix-completion recommenders")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set solver=nuclear`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Single seed for all randomness; replaces the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one attack and print its result row.
    Attack {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        attack: AttackKind,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: Option<f64>,
        /// Write the fake users' ratings here.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Run every (seed, alpha, attack, beta) cell and write results into the output directory.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Metrics for fake users saved by `attack --save`.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        malicious: PathBuf,
    },
    /// Compare the implicit gradient with finite differences on a random attack.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fraction of fake users; defaults to the first configured alpha.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Write a synthetic low-rank rating file.
    Gen {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 5)]
        rank: usize,
        #[arg(long, default_value_t = 0.3)]
        obs_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        /// Power-law exponent of item popularity; uniform when omitted.
        #[arg(long)]
        power_law: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn print_rows(rows: &[experiment::ResultRow]) -> Result<()> {
    experiment::write_rows(std::io::stdout().lock(), rows)
}

fn single_seed(cfg: &ExperimentConfig) -> Result<u64> {
    match cfg.seeds[..] {
        [s] => Ok(s),
        _ => bail!("this command runs one seed; pass --seed"),
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<experiment::Prepared> {
    let seed = single_seed(cfg)?;
    let data = experiment::load_data(cfg, seed)?;
    experiment::prepare(cfg, &data, seed)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    match cli.command {
        Command::Attack {
            config,
            attack,
            alpha,
            beta,
            save,
        } => {
            let cfg = config.resolve()?;
            let prep = prepare(&cfg)?;
            let cell = Cell {
                seed: prep.seed,
                alpha,
                attack,
                beta: (attack == AttackKind::Sgld).then(|| beta.unwrap_or(cfg.betas[0])),
            };
            let mt = experiment::run_attack(&cfg, &prep, &cell)?;
            let row = experiment::evaluate(&cfg, &prep, &cell, &mt)?;
            if let Some(path) = save {
                io::write_malicious(&path, &mt)?;
            }
            print_rows(&[row])?;
        }
        Command::Sweep { config } => {
            let cfg = config.resolve()?;
            let rows = run_experiment(&cfg)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!(
                "{} cells written to {} ({failed} failed)",
                rows.len(),
                cfg.output.join("results.csv").display()
            );
        }
        Command::Eval { config, malicious } => {
            let cfg = config.resolve()?;
            let prep = prepare(&cfg)?;
            let mt = io::read_malicious(&malicious)?;
            if mt.num_items() != prep.train.num_items() {
                bail!(
                    "fake users rate {} items, the data has {}",
                    mt.num_items(),
                    prep.train.num_items()
                );
            }
            let budget = AttackBudget::new(1.0, cfg.budget_items, cfg.bound, mt.num_items())?;
            if !check_feasible(&mt, &budget) {
                bail!("{} violates budget_items or bound", malicious.display());
            }
            let cell = Cell {
                seed: prep.seed,
                alpha: mt.num_malicious() as f64 / prep.train.num_users() as f64,
                attack: AttackKind::Saved,
                beta: None,
            };
            let row = experiment::metrics(&cfg, &prep, &cell, &mt)?;
            print_rows(&[row])?;
        }
        Command::Gradcheck { config, alpha, eps } => {
            let cfg = config.resolve()?;
            let prep = prepare(&cfg)?;
            let alpha = alpha.unwrap_or(cfg.alphas[0]);
            let n = prep.train.num_items();
            let budget = AttackBudget::new(alpha, cfg.budget_items, cfg.bound, n)?;
            let mt = sample_support(
                budget.num_malicious(prep.train.num_users()),
                n,
                budget.max_items,
                budget.bound,
                prep.seed,
            )?;
            let utility = prep.utility(&cfg)?;
            let check = match (&prep.solver, cfg.solver) {
                (Solver::Als(als), SolverKind::Als) => {
                    als_gradcheck(&prep.train, &mt, als, &utility, eps)?
                }
                (Solver::Nuclear { svt, .. }, SolverKind::Nuclear) => {
                    nuclear_gradcheck(&prep.train, &mt, svt, cfg.tau, &utility, eps)?
                }
                _ => unreachable!("solver built from the config"),
            };
            println!("user,item,implicit,finite_diff");
            for (a, b) in check.implicit.entries().iter().zip(check.finite_diff.values()) {
                println!("{},{},{},{}", a.user, a.item, a.value, b);
            }
            eprintln!(
                "{} entries: relative error {:.3e}, cosine {:.4}",
                mt.len(),
                check.rel_error,
                check.cosine
            );
        }
        Command::Gen {
            users,
            items,
            rank,
            obs_fraction,
            noise_sd,
            power_law,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                users,
                items,
                rank,
                obs_fraction,
                noise_sd,
                seed,
                popularity: power_law.map_or(Popularity::Uniform, |exponent| Popularity::PowerLaw {
                    exponent,
                }),
            };
            let (ratings, _) = generate_synthetic(&cfg)?;
            let data = Dataset {
                user_ids: (0..users as u64).collect(),
                item_ids: (0..items as u64).collect(),
                ratings,
            };
            write_ratings(&out, &data).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{} ratings written to {}", data.ratings.len(), out.display());
        }
    }
    Ok(())
}
