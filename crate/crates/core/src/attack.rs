//! Attack optimizers: projected gradient ascent over a fixed random support, and
//! Langevin sampling of fake profiles under a prior fitted to normal users.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::als::{als_fit, als_fit_warm, predict_als, AlsConfig, FactorModel};
use crate::error::{Error, Result};
use crate::implicit::{als_implicit_grad, nuclear_implicit_grad, GradSmoothing, SigmaPath};
use crate::nuclear::{predict_nuclear, svt_fit, svt_fit_from, NuclearModel, SvtConfig};
use crate::objective::{
    grad_r_theta_als, grad_r_theta_nuclear, utility_grad_mhat, utility_value, UtilityConfig,
};
use crate::ratings::{
    check_feasible, sample_support, select_top_b, truncate_ratings, AttackBudget, MaliciousMatrix,
    SparseRatings,
};

/// Step size `s_t` for iteration `t = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `s₀ / √t`
    InvSqrt(f64),
}

impl StepSchedule {
    pub fn step(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(s) => s,
            StepSchedule::InvSqrt(s0) => s0 / libm::sqrt(t.max(1) as f64),
        }
    }

    /// Largest step the schedule ever takes.
    pub fn max_step(&self) -> f64 {
        match *self {
            StepSchedule::Constant(s) | StepSchedule::InvSqrt(s) => s,
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.max_step();
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be non-negative, got {s}"
            )));
        }
        Ok(())
    }
}

/// Matrix-completion model under attack, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Als(AlsConfig),
    Nuclear {
        svt: SvtConfig,
        smoothing: GradSmoothing,
        sigma_path: SigmaPath,
    },
}

impl Solver {
    pub fn nuclear(svt: SvtConfig) -> Self {
        Solver::Nuclear {
            svt,
            smoothing: GradSmoothing::default(),
            sigma_path: SigmaPath::default(),
        }
    }

    /// Fits from the solver's default starting point.
    pub fn fit(&self, ratings: &SparseRatings, malicious: &MaliciousMatrix) -> Result<Trained> {
        match self {
            Solver::Als(cfg) => Ok(Trained::Als(als_fit(ratings, malicious, cfg)?.model)),
            Solver::Nuclear { svt, .. } => {
                Ok(Trained::Nuclear(svt_fit(ratings, malicious, svt)?.model))
            }
        }
    }

    /// Fits starting from a previous solution; falls back to a cold start if shapes differ.
    pub fn fit_warm(
        &self,
        ratings: &SparseRatings,
        malicious: &MaliciousMatrix,
        previous: &Trained,
    ) -> Result<Trained> {
        match (self, previous) {
            (Solver::Als(cfg), Trained::Als(prev)) if prev.items.ncols() == cfg.rank => Ok(
                Trained::Als(als_fit_warm(ratings, malicious, cfg, prev)?.model),
            ),
            (Solver::Nuclear { svt, .. }, Trained::Nuclear(prev))
                if prev.x_malicious.nrows() == malicious.num_malicious() =>
            {
                let init = prev.stacked();
                Ok(Trained::Nuclear(
                    svt_fit_from(ratings, malicious, svt, &init)?.model,
                ))
            }
            _ => self.fit(ratings, malicious),
        }
    }

    /// Implicit gradient of the utility over the support of `malicious`.
    pub fn implicit_grad(
        &self,
        trained: &Trained,
        ratings: &SparseRatings,
        malicious: &MaliciousMatrix,
        utility: &UtilityConfig,
    ) -> Result<MaliciousMatrix> {
        let g = utility_grad_mhat(&trained.predict(), utility)?;
        match (self, trained) {
            (Solver::Als(_), Trained::Als(model)) => {
                let theta = grad_r_theta_als(model, &g)?;
                als_implicit_grad(model, ratings, malicious, &theta)
            }
            (
                Solver::Nuclear {
                    smoothing,
                    sigma_path,
                    ..
                },
                Trained::Nuclear(model),
            ) => {
                let theta = grad_r_theta_nuclear(model, &g)?;
                nuclear_implicit_grad(model, ratings, malicious, &theta, *smoothing, *sigma_path)
            }
            _ => Err(Error::InvalidParameter(
                "trained model does not belong to this solver".into(),
            )),
        }
    }
}

/// A fitted model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Als(FactorModel),
    Nuclear(NuclearModel),
}

impl Trained {
    /// Predictions for the normal users.
    pub fn predict(&self) -> DMatrix<f64> {
        match self {
            Trained::Als(m) => predict_als(m),
            Trained::Nuclear(m) => predict_nuclear(m),
        }
    }
}

/// Projected gradient ascent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgaConfig {
    pub max_iter: usize,
    pub schedule: StepSchedule,
    /// Stop once `‖M̃^(t+1) − M̃^(t)‖_F` falls below this.
    pub conv_tol: f64,
    /// Seeds the random support and initial ratings.
    pub seed: u64,
}

impl Default for PgaConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            schedule: StepSchedule::InvSqrt(1.0),
            conv_tol: 1e-6,
            seed: 0,
        }
    }
}

/// Langevin sampler settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgldConfig {
    /// Weight of the attack utility against the prior.
    pub beta: f64,
    pub iterations: usize,
    /// `None` picks a stable constant step: 0.5 when preconditioned, `min_j σ_j²` otherwise.
    pub schedule: Option<StepSchedule>,
    pub seed: u64,
    /// Disable to run the deterministic drift only.
    pub noise: bool,
    /// Scale drift and noise per item by the prior variance `σ_j²`. The target
    /// posterior is unchanged, and steps below 4 are stable for every item.
    pub preconditioned: bool,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            beta: 0.6,
            iterations: 100,
            schedule: None,
            seed: 0,
            noise: true,
            preconditioned: true,
        }
    }
}

/// What an attack returns.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// Feasible fake-user ratings.
    pub malicious: MaliciousMatrix,
    /// Utility of `malicious` under the attacked solver.
    pub utility: f64,
    pub iterations: usize,
    /// Utility after each update (PGA) or at the end (SGLD).
    pub utility_trace: Vec<f64>,
}

fn check_inputs(
    ratings: &SparseRatings,
    budget: &AttackBudget,
    utility: &UtilityConfig,
) -> Result<()> {
    if utility.num_users() != ratings.num_users() || utility.num_items() != ratings.num_items() {
        return Err(Error::ShapeMismatch(format!(
            "utility covers {}x{}, ratings are {}x{}",
            utility.num_users(),
            utility.num_items(),
            ratings.num_users(),
            ratings.num_items()
        )));
    }
    if budget.max_items > ratings.num_items() {
        return Err(Error::InvalidBudget(format!(
            "B = {} exceeds the {} items",
            budget.max_items,
            ratings.num_items()
        )));
    }
    Ok(())
}

fn add_scaled(mt: &MaliciousMatrix, grad: &MaliciousMatrix, step: f64) -> Result<MaliciousMatrix> {
    mt.with_values(mt.values().zip(grad.values()).map(|(v, g)| v + step * g))
}

/// Projected gradient ascent from a random support of exactly `B` items per fake user.
///
/// The support stays fixed, so the projection is truncation at `±Λ`. Returns the best
/// iterate seen.
pub fn pga_attack(
    ratings: &SparseRatings,
    budget: &AttackBudget,
    solver: &Solver,
    utility: &UtilityConfig,
    cfg: &PgaConfig,
) -> Result<AttackOutcome> {
    check_inputs(ratings, budget, utility)?;
    cfg.schedule.validate()?;
    let m_mal = budget.num_malicious(ratings.num_users());
    let init = sample_support(m_mal, ratings.num_items(), budget.max_items, budget.bound, cfg.seed)?;
    pga_from(ratings, budget, solver, utility, cfg, init)
}

/// Projected gradient ascent from a given starting matrix; its support is kept.
pub fn pga_from(
    ratings: &SparseRatings,
    budget: &AttackBudget,
    solver: &Solver,
    utility: &UtilityConfig,
    cfg: &PgaConfig,
    init: MaliciousMatrix,
) -> Result<AttackOutcome> {
    check_inputs(ratings, budget, utility)?;
    cfg.schedule.validate()?;
    let mut current = truncate_ratings(&init, budget.bound);
    let mut model = solver.fit(ratings, &current)?;
    let first = utility_value(&model.predict(), utility)?;
    let mut best = (first, current.clone());
    let mut trace = alloc::vec![first];
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        iterations = t;
        let grad = solver.implicit_grad(&model, ratings, &current, utility)?;
        let step = cfg.schedule.step(t);
        let next = truncate_ratings(&add_scaled(&current, &grad, step)?, budget.bound);
        let moved = next.frobenius_distance(&current);
        if moved < cfg.conv_tol {
            break;
        }
        model = solver.fit_warm(ratings, &next, &model)?;
        let value = utility_value(&model.predict(), utility)?;
        trace.push(value);
        log::debug!("pga iteration {t}: step {step:.3e}, moved {moved:.3e}, utility {value:.6e}");
        if value > best.0 {
            best = (value, next.clone());
        }
        current = next;
    }
    debug_assert!(check_feasible(&best.1, budget));
    Ok(AttackOutcome {
        malicious: best.1,
        utility: best.0,
        iterations,
        utility_trace: trace,
    })
}

/// How the prior's per-item moments are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorNormalization {
    /// Divide by the number of users `m`; unobserved entries count as zeros.
    #[default]
    AllUsers,
    /// Divide by the number of raters of each item.
    Raters,
}

/// Floor applied to every prior variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Independent Gaussian prior over each item's ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPrior {
    pub xi: DVector<f64>,
    pub sigma2: DVector<f64>,
}

impl ItemPrior {
    /// `Ξ`: every row equal to the item means.
    pub fn broadcast(&self, rows: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, self.xi.len(), |_, j| self.xi[j])
    }

    pub fn min_variance(&self) -> f64 {
        self.sigma2.iter().copied().fold(f64::INFINITY, libm::fmin)
    }
}

pub fn estimate_prior(ratings: &SparseRatings, normalization: PriorNormalization) -> Result<ItemPrior> {
    let m = ratings.num_users();
    if m == 0 {
        return Err(Error::EmptyObservations);
    }
    let n = ratings.num_items();
    let mut xi = DVector::zeros(n);
    let mut sigma2 = DVector::zeros(n);
    for j in 0..n {
        let count = ratings.col_positions(j).len();
        let denom = match normalization {
            PriorNormalization::AllUsers => m,
            PriorNormalization::Raters => count,
        };
        if denom == 0 {
            sigma2[j] = VARIANCE_FLOOR;
            continue;
        }
        let mean = ratings.col(j).map(|r| r.value).sum::<f64>() / denom as f64;
        let mut ss: f64 = ratings.col(j).map(|r| (r.value - mean) * (r.value - mean)).sum();
        if normalization == PriorNormalization::AllUsers {
            ss += (m - count) as f64 * mean * mean;
        }
        xi[j] = mean;
        sigma2[j] = libm::fmax(ss / denom as f64, VARIANCE_FLOOR);
    }
    Ok(ItemPrior { xi, sigma2 })
}

/// Langevin dynamics on the dense fake-user block, then projection by top-`B`
/// selection and truncation.
pub fn sgld_attack(
    ratings: &SparseRatings,
    budget: &AttackBudget,
    solver: &Solver,
    utility: &UtilityConfig,
    prior: &ItemPrior,
    cfg: &SgldConfig,
) -> Result<AttackOutcome> {
    check_inputs(ratings, budget, utility)?;
    let m_mal = budget.num_malicious(ratings.num_users());
    let state = sgld_chain(ratings, m_mal, solver, utility, prior, cfg, None, |_, _| {})?;
    let dense = MaliciousMatrix::from_dense(&state)?;
    let projected = truncate_ratings(&select_top_b(&dense, budget.max_items), budget.bound);
    debug_assert!(check_feasible(&projected, budget));
    let value = utility_value(&solver.fit(ratings, &projected)?.predict(), utility)?;
    Ok(AttackOutcome {
        malicious: projected,
        utility: value,
        iterations: cfg.iterations,
        utility_trace: alloc::vec![value],
    })
}

/// Runs the unprojected chain and returns its final dense state.
///
/// Starts from `initial` when given, otherwise from a draw of the prior. `observe`
/// sees the state after every iteration.
#[allow(clippy::too_many_arguments)]
pub fn sgld_chain(
    ratings: &SparseRatings,
    num_malicious: usize,
    solver: &Solver,
    utility: &UtilityConfig,
    prior: &ItemPrior,
    cfg: &SgldConfig,
    initial: Option<&DMatrix<f64>>,
    mut observe: impl FnMut(usize, &DMatrix<f64>),
) -> Result<DMatrix<f64>> {
    let n = ratings.num_items();
    if prior.xi.len() != n || prior.sigma2.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "prior covers {} items, ratings have {n}",
            prior.xi.len()
        )));
    }
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "β must be non-negative, got {}",
            cfg.beta
        )));
    }
    let min_var = prior.min_variance();
    if !(min_var > 0.0) {
        return Err(Error::InvalidParameter("prior variances must be positive".into()));
    }
    // the prior drift multiplies entry j by 1 − s/(2σ_j²), or 1 − s/2 when preconditioned
    let (default_step, limit) = if cfg.preconditioned {
        (0.5, 4.0)
    } else {
        (min_var, 4.0 * min_var)
    };
    let schedule = cfg.schedule.unwrap_or(StepSchedule::Constant(default_step));
    schedule.validate()?;
    if schedule.max_step() >= limit {
        return Err(Error::InvalidParameter(format!(
            "step {} is unstable for the prior; use a step below {limit}",
            schedule.max_step()
        )));
    }
    let scale: DVector<f64> = if cfg.preconditioned {
        prior.sigma2.clone()
    } else {
        DVector::from_element(n, 1.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = match initial {
        Some(init) => {
            if init.shape() != (num_malicious, n) {
                return Err(Error::ShapeMismatch(format!(
                    "initial state is {:?}, expected ({num_malicious}, {n})",
                    init.shape()
                )));
            }
            init.clone()
        }
        None => DMatrix::from_fn(num_malicious, n, |_, j| {
            let sd = libm::sqrt(prior.sigma2[j]);
            Normal::new(prior.xi[j], sd)
                .expect("finite prior")
                .sample(&mut rng)
        }),
    };
    let mut model: Option<Trained> = None;
    for t in 1..=cfg.iterations {
        let step = schedule.step(t);
        let mut drift = DMatrix::from_fn(num_malicious, n, |i, j| {
            -(state[(i, j)] - prior.xi[j]) / prior.sigma2[j]
        });
        if cfg.beta != 0.0 {
            let dense = MaliciousMatrix::from_dense(&state)?;
            let trained = match &model {
                Some(prev) => solver.fit_warm(ratings, &dense, prev)?,
                None => solver.fit(ratings, &dense)?,
            };
            let grad = solver.implicit_grad(&trained, ratings, &dense, utility)?;
            // entries of the dense matrix are row-major, the drift is column-major
            for (r, g) in dense.entries().iter().zip(grad.values()) {
                drift[(r.user, r.item)] += cfg.beta * g;
            }
            model = Some(trained);
        }
        for j in 0..n {
            let c = step / 2.0 * scale[j];
            for i in 0..num_malicious {
                state[(i, j)] += c * drift[(i, j)];
            }
        }
        if cfg.noise {
            for i in 0..num_malicious {
                for j in 0..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    state[(i, j)] += libm::sqrt(step * scale[j]) * z;
                }
            }
        }
        if !crate::linalg::all_finite(&state) {
            return Err(Error::Divergence(format!(
                "SGLD state became non-finite at iteration {t}"
            )));
        }
        observe(t, &state);
    }
    Ok(state)
}

/// Baseline: random support and uniform ratings, no optimization.
pub fn uniform_attack(
    ratings: &SparseRatings,
    budget: &AttackBudget,
    seed: u64,
) -> Result<MaliciousMatrix> {
    sample_support(
        budget.num_malicious(ratings.num_users()),
        ratings.num_items(),
        budget.max_items,
        budget.bound,
        seed,
    )
}
