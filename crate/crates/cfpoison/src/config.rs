//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, list values are comma separated.
//! The full key list with defaults is in `docs/config.md`; [`ExperimentConfig::to_text`]
//! writes every key in a form [`ExperimentConfig::parse`] reads back.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use cfpoison_core::attack::PriorNormalization;
use cfpoison_core::implicit::SigmaPath;
use cfpoison_core::synth::Popularity;

/// Where the ratings come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Low-rank matrix drawn from the `synth.*` settings and the run seed.
    Synthetic,
    /// MovieLens layout, rescaled and filtered on load.
    MovieLens(PathBuf),
    /// `user,item,rating` already on the working scale.
    Ratings(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Als,
    Nuclear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttackKind {
    /// No fake users.
    None,
    Pga,
    Sgld,
    Uniform,
    /// Fake users read from a file.
    Saved,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Pga => "pga",
            AttackKind::Sgld => "sgld",
            AttackKind::Uniform => "uniform",
            AttackKind::Saved => "saved",
        }
    }
}

impl FromStr for AttackKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "pga" => Ok(AttackKind::Pga),
            "sgld" => Ok(AttackKind::Sgld),
            "uniform" => Ok(AttackKind::Uniform),
            _ => bail!("unknown attack {s:?} (expected none, pga, sgld or uniform)"),
        }
    }
}

/// Entries on which RMSE and the availability term are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMask {
    /// Every entry not in the training set.
    Complement,
    /// A seeded fraction of the observed entries, removed from training.
    HeldOut(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_rank: usize,
    pub synth_obs_fraction: f64,
    pub synth_noise_sd: f64,
    pub synth_popularity: Popularity,
    pub min_ratings: usize,
    pub native_range: (f64, f64),
    pub target_range: (f64, f64),
    /// Caps on the loaded data; `None` picks 1000 x 1700 for the nuclear solver
    /// and no cap otherwise.
    pub max_users: Option<usize>,
    pub max_items: Option<usize>,
    pub eval_mask: EvalMask,

    pub solver: SolverKind,
    pub rank: usize,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub lambda: f64,
    pub svt_step: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tau: f64,
    pub sigma_path: SigmaPath,

    pub alphas: Vec<f64>,
    pub budget_items: usize,
    pub bound: f64,

    pub mu1: f64,
    pub mu2: f64,
    /// Target item is the one whose clean average prediction is nearest this.
    pub target_level: f64,
    pub target_weight: f64,

    pub attacks: Vec<AttackKind>,
    pub betas: Vec<f64>,
    pub pga_iters: usize,
    pub pga_step: f64,
    /// Step `pga_step / sqrt(t)` when true, constant otherwise.
    pub pga_decay: bool,
    pub pga_conv_tol: f64,
    pub sgld_iters: usize,
    /// `None` uses the sampler's stable default.
    pub sgld_step: Option<f64>,
    pub sgld_preconditioned: bool,
    pub sgld_noise: bool,
    pub prior: PriorNormalization,

    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic,
            synth_users: 200,
            synth_items: 100,
            synth_rank: 5,
            synth_obs_fraction: 0.3,
            synth_noise_sd: 0.0,
            synth_popularity: Popularity::Uniform,
            min_ratings: 20,
            native_range: (0.5, 5.0),
            target_range: (-2.0, 2.0),
            max_users: None,
            max_items: None,
            eval_mask: EvalMask::Complement,
            solver: SolverKind::Als,
            rank: 5,
            lambda_u: 0.1,
            lambda_v: 0.1,
            lambda: 1.0,
            svt_step: 0.5,
            tol: 1e-6,
            max_iter: 500,
            tau: 1e-3,
            sigma_path: SigmaPath::Clamped,
            alphas: vec![0.005, 0.01, 0.02, 0.03],
            budget_items: 25,
            bound: 2.0,
            mu1: 1.0,
            mu2: 0.0,
            target_level: 0.8,
            target_weight: 2.0,
            attacks: vec![AttackKind::Pga, AttackKind::Sgld, AttackKind::Uniform],
            betas: vec![0.6],
            pga_iters: 30,
            pga_step: 1.0,
            pga_decay: true,
            pga_conv_tol: 1e-6,
            sgld_iters: 100,
            sgld_step: None,
            sgld_preconditioned: true,
            sgld_noise: true,
            prior: PriorNormalization::AllUsers,
            seeds: vec![0],
            output: PathBuf::from("results"),
            threads: 0,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

fn range(key: &str, value: &str) -> Result<(f64, f64)> {
    let v: Vec<f64> = list(key, value)?;
    match v[..] {
        [lo, hi] if lo < hi => Ok((lo, hi)),
        _ => bail!("{key}: expected `lo, hi` with lo < hi, got {value:?}"),
    }
}

fn cap(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "data" => {
                self.data = if value == "synthetic" {
                    DataSource::Synthetic
                } else if let Some(p) = value.strip_prefix("movielens:") {
                    DataSource::MovieLens(PathBuf::from(p))
                } else if let Some(p) = value.strip_prefix("ratings:") {
                    DataSource::Ratings(PathBuf::from(p))
                } else {
                    bail!("data: expected synthetic, movielens:<path> or ratings:<path>, got {value:?}")
                }
            }
            "synth.users" => self.synth_users = num(key, value)?,
            "synth.items" => self.synth_items = num(key, value)?,
            "synth.rank" => self.synth_rank = num(key, value)?,
            "synth.obs_fraction" => self.synth_obs_fraction = num(key, value)?,
            "synth.noise_sd" => self.synth_noise_sd = num(key, value)?,
            "synth.popularity" => {
                self.synth_popularity = if value == "uniform" {
                    Popularity::Uniform
                } else if let Some(e) = value.strip_prefix("powerlaw:") {
                    Popularity::PowerLaw {
                        exponent: num(key, e)?,
                    }
                } else {
                    bail!("synth.popularity: expected uniform or powerlaw:<exponent>, got {value:?}")
                }
            }
            "min_ratings" => self.min_ratings = num(key, value)?,
            "native_range" => self.native_range = range(key, value)?,
            "target_range" => self.target_range = range(key, value)?,
            "max_users" => self.max_users = cap(key, value)?,
            "max_items" => self.max_items = cap(key, value)?,
            "eval_mask" => {
                self.eval_mask = if value == "complement" {
                    EvalMask::Complement
                } else if let Some(f) = value.strip_prefix("heldout:") {
                    EvalMask::HeldOut(num(key, f)?)
                } else {
                    bail!("eval_mask: expected complement or heldout:<fraction>, got {value:?}")
                }
            }
            "solver" => {
                self.solver = match value {
                    "als" => SolverKind::Als,
                    "nuclear" => SolverKind::Nuclear,
                    _ => bail!("solver: expected als or nuclear, got {value:?}"),
                }
            }
            "rank" => self.rank = num(key, value)?,
            "lambda_u" => self.lambda_u = num(key, value)?,
            "lambda_v" => self.lambda_v = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "svt_step" => self.svt_step = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "sigma_path" => {
                self.sigma_path = match value {
                    "clamped" => SigmaPath::Clamped,
                    "disabled" => SigmaPath::Disabled,
                    _ => bail!("sigma_path: expected clamped or disabled, got {value:?}"),
                }
            }
            "alpha" => self.alphas = list(key, value)?,
            "budget_items" => self.budget_items = num(key, value)?,
            "bound" => self.bound = num(key, value)?,
            "mu1" => self.mu1 = num(key, value)?,
            "mu2" => self.mu2 = num(key, value)?,
            "target_level" => self.target_level = num(key, value)?,
            "target_weight" => self.target_weight = num(key, value)?,
            "attacks" => self.attacks = list(key, value)?,
            "beta" => self.betas = list(key, value)?,
            "pga.iters" => self.pga_iters = num(key, value)?,
            "pga.step" => self.pga_step = num(key, value)?,
            "pga.decay" => self.pga_decay = boolean(key, value)?,
            "pga.conv_tol" => self.pga_conv_tol = num(key, value)?,
            "sgld.iters" => self.sgld_iters = num(key, value)?,
            "sgld.step" => {
                self.sgld_step = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "sgld.preconditioned" => self.sgld_preconditioned = boolean(key, value)?,
            "sgld.noise" => self.sgld_noise = boolean(key, value)?,
            "prior" => {
                self.prior = match value {
                    "all_users" => PriorNormalization::AllUsers,
                    "raters" => PriorNormalization::Raters,
                    _ => bail!("prior: expected all_users or raters, got {value:?}"),
                }
            }
            "seed" => self.seeds = list(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "threads" => self.threads = num(key, value)?,
            other => bail!("unknown setting {other:?}"),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {pair:?}"))?;
        self.set(k, v)
    }

    /// Reads settings on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", k + 1))?;
            cfg.set(key, value)
                .with_context(|| format!("line {}", k + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic => {}
            DataSource::MovieLens(p) | DataSource::Ratings(p) => {
                if !p.is_file() {
                    bail!("data file {} does not exist", p.display());
                }
            }
        }
        let positive = [
            ("lambda_u", self.lambda_u),
            ("lambda_v", self.lambda_v),
            ("lambda", self.lambda),
            ("svt_step", self.svt_step),
            ("tol", self.tol),
            ("tau", self.tau),
            ("bound", self.bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if self.rank == 0 {
            bail!("rank must be at least 1");
        }
        if self.budget_items == 0 {
            bail!("budget_items must be at least 1");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            bail!("alpha values must be non-negative, got {a}");
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            bail!("beta values must be non-negative, got {b}");
        }
        if self.alphas.is_empty() || self.attacks.is_empty() || self.seeds.is_empty() {
            bail!("alpha, attacks and seed each need at least one value");
        }
        if self.attacks.contains(&AttackKind::Saved) {
            bail!("saved fake users are evaluated with the eval command, not swept");
        }
        if self.attacks.contains(&AttackKind::Sgld) && self.betas.is_empty() {
            bail!("sgld needs at least one beta");
        }
        if let EvalMask::HeldOut(f) = self.eval_mask {
            if !(f > 0.0 && f < 1.0) {
                bail!("held-out fraction must be in (0, 1), got {f}");
            }
        }
        if self.native_range.0 >= self.native_range.1 || self.target_range.0 >= self.target_range.1 {
            bail!("rating ranges need lo < hi");
        }
        Ok(())
    }

    /// User and item caps after the solver default is applied.
    pub fn caps(&self) -> (usize, usize) {
        let (du, di) = match self.solver {
            SolverKind::Nuclear => (1000, 1700),
            SolverKind::Als => (usize::MAX, usize::MAX),
        };
        (self.max_users.unwrap_or(du), self.max_items.unwrap_or(di))
    }

    /// Every setting, in a form [`Self::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let data = match &self.data {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::MovieLens(p) => format!("movielens:{}", p.display()),
            DataSource::Ratings(p) => format!("ratings:{}", p.display()),
        };
        let popularity = match self.synth_popularity {
            Popularity::Uniform => "uniform".to_string(),
            Popularity::PowerLaw { exponent } => format!("powerlaw:{exponent}"),
        };
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        let eval = match self.eval_mask {
            EvalMask::Complement => "complement".to_string(),
            EvalMask::HeldOut(f) => format!("heldout:{f}"),
        };
        let lines: Vec<(&str, String)> = vec![
            ("data", data),
            ("synth.users", self.synth_users.to_string()),
            ("synth.items", self.synth_items.to_string()),
            ("synth.rank", self.synth_rank.to_string()),
            ("synth.obs_fraction", self.synth_obs_fraction.to_string()),
            ("synth.noise_sd", self.synth_noise_sd.to_string()),
            ("synth.popularity", popularity),
            ("min_ratings", self.min_ratings.to_string()),
            ("native_range", format!("{}, {}", self.native_range.0, self.native_range.1)),
            ("target_range", format!("{}, {}", self.target_range.0, self.target_range.1)),
            ("max_users", opt(self.max_users)),
            ("max_items", opt(self.max_items)),
            ("eval_mask", eval),
            (
                "solver",
                match self.solver {
                    SolverKind::Als => "als",
                    SolverKind::Nuclear => "nuclear",
                }
                .to_string(),
            ),
            ("rank", self.rank.to_string()),
            ("lambda_u", self.lambda_u.to_string()),
            ("lambda_v", self.lambda_v.to_string()),
            ("lambda", self.lambda.to_string()),
            ("svt_step", self.svt_step.to_string()),
            ("tol", self.tol.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("tau", self.tau.to_string()),
            (
                "sigma_path",
                match self.sigma_path {
                    SigmaPath::Clamped => "clamped",
                    SigmaPath::Disabled => "disabled",
                }
                .to_string(),
            ),
            ("alpha", join(&self.alphas)),
            ("budget_items", self.budget_items.to_string()),
            ("bound", self.bound.to_string()),
            ("mu1", self.mu1.to_string()),
            ("mu2", self.mu2.to_string()),
            ("target_level", self.target_level.to_string()),
            ("target_weight", self.target_weight.to_string()),
            (
                "attacks",
                self.attacks.iter().map(|a| a.name()).collect::<Vec<_>>().join(", "),
            ),
            ("beta", join(&self.betas)),
            ("pga.iters", self.pga_iters.to_string()),
            ("pga.step", self.pga_step.to_string()),
            ("pga.decay", self.pga_decay.to_string()),
            ("pga.conv_tol", self.pga_conv_tol.to_string()),
            ("sgld.iters", self.sgld_iters.to_string()),
            ("sgld.step", self.sgld_step.map_or("auto".to_string(), |s| s.to_string())),
            ("sgld.preconditioned", self.sgld_preconditioned.to_string()),
            ("sgld.noise", self.sgld_noise.to_string()),
            (
                "prior",
                match self.prior {
                    PriorNormalization::AllUsers => "all_users",
                    PriorNormalization::Raters => "raters",
                }
                .to_string(),
            ),
            ("seed", join(&self.seeds)),
            ("output", self.output.display().to_string()),
            ("threads", self.threads.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
