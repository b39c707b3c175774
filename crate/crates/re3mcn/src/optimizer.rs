//! Outer loop: epochs with full-batch restarts, regime-dependent
//! schedules, recursive estimator updates, the cubic subproblem, and the
//! step-norm stopping rule, plus baseline optimizers sharing the trace
//! schema.
//!
//! Per inner iteration the loop solves the subproblem at the current
//! point with the current smoothed estimates, takes the step, then
//! updates the estimators across the step just taken (so the estimates
//! entering the next solve track the new point). Every accepted step is
//! re-certified against the inexactness conditions independently of the
//! solver; a violation is a hard error since everything downstream
//! assumes the conditions.

use serde::{Deserialize, Serialize};

use crate::cubic_solver::{self, CubicModel, SolveConfig, SolveStatus, SolverError};
use crate::estimators::{
    self, EmaSchedule, GradEstimatorState, HessBackend, HessEstimatorState, OracleCounter,
};
use crate::linops::{self};
use crate::problems::{self, Problem, ProblemConstants};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NonconvexPlain,
    Convex,
    NonconvexProx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    FullCrn,
    SubsampledCrn,
    SarahGd,
}

/// Unit-default multipliers for the schedule formulas.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConstants {
    pub c_t: f64,
    pub c_max: f64,
    pub c1: f64,
    pub c_beta: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        ScheduleConstants { c_t: 1.0, c_max: 1.0, c1: 1.0, c_beta: 1.0, c3: 1.0, c4: 1.0, c5: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub epsilon: f64,
    /// EMA constant in (0, 1/2].
    pub c: f64,
    /// Inexactness level in (0, 1/4].
    pub theta: f64,
    /// Cubic parameter; `None` defaults to `2·L₂` from the problem.
    pub m: Option<f64>,
    /// Mini-batch size; `None` defaults to `⌈√n⌉`.
    pub b: Option<usize>,
    /// Constant damping for the proximal nonconvex regime.
    pub beta: f64,
    /// Base damping override for the convex regime (raised, never
    /// lowered, to the scheduled value).
    pub beta0: Option<f64>,
    pub sched: ScheduleConstants,
    /// Epoch-length exponent for the proximal regime (`T = ⌈C_max n^e⌉`).
    pub prox_epoch_exponent: f64,
    pub seed: u64,
    pub max_total_iters: u64,
    pub backend: HessBackend,
    pub solver: SolveConfig,
    /// Test-mode fixed mixing weight (e.g. 1.0 disables smoothing).
    pub alpha_override: Option<f64>,
    /// Explicit `(epochs, inner length)`, bypassing the schedule.
    pub schedule_override: Option<(usize, usize)>,
    pub sample_without_replacement: bool,
    /// Per-iteration objective/gradient logging (diagnostic oracles).
    pub log_full_objective: bool,
    pub x0: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon: 1e-2,
            c: 0.5,
            theta: 0.1,
            m: None,
            b: None,
            beta: 0.0,
            beta0: None,
            sched: ScheduleConstants::default(),
            prox_epoch_exponent: 0.6,
            seed: 0,
            max_total_iters: 200_000,
            backend: HessBackend::Dense,
            solver: SolveConfig::default(),
            alpha_override: None,
            schedule_override: None,
            sample_without_replacement: false,
            log_full_objective: false,
            x0: None,
        }
    }
}

// ---------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------

#[derive(Debug)]
pub enum OptError {
    BadConfig(String),
    MissingR,
    Solver(SolverError),
    InexactnessViolated { epoch: usize, t: usize, details: String },
    RepeatedToleranceFloor { epoch: usize, t: usize },
}

impl std::fmt::Display for OptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptError::BadConfig(m) => write!(f, "bad run config: {m}"),
            OptError::MissingR => write!(
                f,
                "the convex schedule needs the distance estimate R; supply it in the problem \
                 constants"
            ),
            OptError::Solver(e) => write!(f, "subproblem solver: {e}"),
            OptError::InexactnessViolated { epoch, t, details } => {
                write!(f, "inexactness conditions violated at epoch {epoch}, step {t}: {details}")
            }
            OptError::RepeatedToleranceFloor { epoch, t } => write!(
                f,
                "subproblem hit its tolerance floor three times in a row (epoch {epoch}, step {t})"
            ),
        }
    }
}

impl std::error::Error for OptError {}

impl From<SolverError> for OptError {
    fn from(e: SolverError) -> Self {
        OptError::Solver(e)
    }
}

// ---------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------

/// Damping sequence over 1-indexed inner iterations.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum BetaSchedule {
    Zero,
    /// `β at iteration j = beta0 · j` (the solve at the snapshot point
    /// uses `beta0`).
    Linear { beta0: f64 },
    Constant { beta: f64 },
}

impl BetaSchedule {
    pub fn at(&self, j: usize) -> f64 {
        match *self {
            BetaSchedule::Zero => 0.0,
            BetaSchedule::Linear { beta0 } => beta0 * j as f64,
            BetaSchedule::Constant { beta } => beta,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Schedule {
    pub n_epochs: usize,
    pub t_inner: usize,
    pub beta: BetaSchedule,
}

/// Ceiling with a small backoff so expressions that are integers up to
/// floating-point dust (e.g. `1024^{3/5}`) do not round up twice.
fn ceil_eps(x: f64) -> usize {
    ((x - 1e-9).ceil().max(1.0)) as usize
}

pub fn default_batch(n: usize) -> usize {
    ceil_eps((n as f64).sqrt()).min(n)
}

/// Regime-dependent `(epochs, inner length, damping)`.
pub fn schedule(
    regime: Regime,
    n: usize,
    cfg: &RunConfig,
    constants: &ProblemConstants,
) -> Result<Schedule, OptError> {
    let eps = cfg.epsilon;
    if !(eps > 0.0) {
        return Err(OptError::BadConfig(format!("epsilon = {eps} must be > 0")));
    }
    let sc = &cfg.sched;
    let l2 = constants.l2;
    let b = cfg.b.unwrap_or_else(|| default_batch(n));
    match regime {
        Regime::NonconvexPlain => {
            let pow = (n as f64).powf(1.0 / 3.0);
            let t = ceil_eps(sc.c_max * pow);
            let n_epochs = ceil_eps(sc.c_t * l2.sqrt() / (sc.c_max * pow * eps.powf(1.5)));
            Ok(Schedule { n_epochs, t_inner: t, beta: BetaSchedule::Zero })
        }
        Regime::NonconvexProx => {
            if !(cfg.beta > 0.0) {
                return Err(OptError::BadConfig(
                    "the proximal nonconvex regime needs beta > 0".into(),
                ));
            }
            let e = cfg.prox_epoch_exponent;
            if !(e > 0.0 && e < 1.0) {
                return Err(OptError::BadConfig(format!("epoch exponent {e} not in (0,1)")));
            }
            let pow = (n as f64).powf(e);
            let t = ceil_eps(sc.c_max * pow);
            let n_epochs = ceil_eps(sc.c_t * l2.sqrt() / (sc.c_max * pow * eps.powf(1.5)));
            Ok(Schedule { n_epochs, t_inner: t, beta: BetaSchedule::Constant { beta: cfg.beta } })
        }
        Regime::Convex => {
            let r = constants.r.ok_or(OptError::MissingR)?;
            let scheduled =
                2.0 * (sc.c4 * constants.sigma2 / (b as f64).sqrt()).max(sc.c5 * l2 * r);
            // User override may only raise the base damping.
            let beta0 = cfg.beta0.unwrap_or(0.0).max(scheduled);
            let t_geom = r * ((sc.c1 * l2 * r + sc.c_beta * beta0) / eps).sqrt();
            let t_noise = sc.c3 * sc.c3 * constants.sigma1 * constants.sigma1 * r * r / (eps * eps);
            let t = ceil_eps(t_geom.max(t_noise));
            Ok(Schedule { n_epochs: 1, t_inner: t, beta: BetaSchedule::Linear { beta0 } })
        }
    }
}

/// Theory-regime sanity ratio for a `(b, T)` pairing; advisory only,
/// never alters execution.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AbsorptionReport {
    pub ratio: f64,
    pub flagged: bool,
}

pub fn absorption_report(regime: Regime, b: usize, t: usize) -> Option<AbsorptionReport> {
    absorption_report_with(regime, b, t, 1.0)
}

/// As [`absorption_report`] with an explicit flag threshold.
pub fn absorption_report_with(
    regime: Regime,
    b: usize,
    t: usize,
    threshold: f64,
) -> Option<AbsorptionReport> {
    let b = b as f64;
    let t = t as f64;
    match regime {
        Regime::NonconvexPlain => {
            let ratio = b.powf(0.75) / t.powf(1.125);
            Some(AbsorptionReport { ratio, flagged: ratio < threshold })
        }
        Regime::NonconvexProx => {
            let ratio = t.powf(2.5) / b.powi(3);
            Some(AbsorptionReport { ratio, flagged: ratio > threshold })
        }
        Regime::Convex => None,
    }
}

// ---------------------------------------------------------------------
// Trace records and summaries
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub epoch: usize,
    pub t: usize,
    pub f: Option<f64>,
    pub grad_norm: Option<f64>,
    pub step_norm: f64,
    pub lambda: f64,
    pub beta_t: f64,
    pub alpha_t: f64,
    pub cg_iters: u64,
    pub grad_oracles_raw: u64,
    pub hess_oracles_raw: u64,
    pub grad_oracles_paper: u64,
    pub hess_oracles_paper: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    StepNorm,
    Budget,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub final_x: Vec<f64>,
    /// Iterate before the terminating step (the stopping analysis bounds
    /// hold at the post-step point; both are recorded).
    pub pre_step_x: Vec<f64>,
    pub terminated_by: TerminationReason,
    pub final_step_norm: f64,
    pub step_norm_threshold: f64,
    pub f_final: f64,
    pub final_grad_norm: f64,
    pub final_lambda_min: f64,
    pub epochs_started: u64,
    pub steps: u64,
    pub restart_points: Vec<u64>,
    pub counters: OracleCounter,
    pub inexact_checks_passed: u64,
    pub absorption: Option<AbsorptionReport>,
    pub config: RunConfig,
    pub regime: Option<Regime>,
    pub baseline: Option<BaselineMethod>,
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<IterRecord>,
}

// ---------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------

fn resolve_m(cfg: &RunConfig, constants: &ProblemConstants) -> Result<f64, OptError> {
    match cfg.m {
        Some(m) if m > 0.0 => Ok(m),
        Some(m) => Err(OptError::BadConfig(format!("M = {m} must be > 0"))),
        None => {
            if constants.l2 > 0.0 {
                Ok(2.0 * constants.l2)
            } else {
                Err(OptError::BadConfig(
                    "problem has L2 = 0; set the cubic parameter M explicitly".into(),
                ))
            }
        }
    }
}

/// Step-norm threshold `√(ε/L₂)`; when the problem reports `L₂ = 0` the
/// algorithmic tie `M = 2L₂` supplies the fallback.
fn step_threshold(eps: f64, l2: f64, m: f64) -> f64 {
    let l2_eff = if l2 > 0.0 { l2 } else { m / 2.0 };
    (eps / l2_eff).sqrt()
}

struct Diagnostics {
    f: f64,
    grad_norm: f64,
    lambda_min: f64,
}

fn exit_diagnostics(p: &dyn Problem, x: &[f64], counter: &mut OracleCounter) -> Diagnostics {
    let f = problems::full_value(p, x);
    let g = problems::full_grad(p, x);
    counter.diag_value += p.n() as u64;
    counter.diag_grad += p.n() as u64;
    counter.diag_hess += p.n() as u64;
    let lambda_min = if p.dim() <= 200 {
        problems::full_hess_dense(p, x).lambda_min_exact()
    } else {
        let h = problems::full_hess_dense(p, x);
        linops::lanczos_lambda_min(&h, 2, 80, 0)
    };
    Diagnostics { f, grad_norm: linops::norm(&g), lambda_min }
}

fn initial_point(p: &dyn Problem, cfg: &RunConfig) -> Result<Vec<f64>, OptError> {
    match &cfg.x0 {
        Some(x) => {
            if x.len() != p.dim() {
                return Err(OptError::BadConfig(format!(
                    "x0 has dimension {}, problem has {}",
                    x.len(),
                    p.dim()
                )));
            }
            if !linops::all_finite(x) {
                return Err(OptError::BadConfig("x0 has non-finite entries".into()));
            }
            Ok(x.clone())
        }
        None => Ok(vec![0.0; p.dim()]),
    }
}

// ---------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------

/// Run the variance-reduced cubic Newton loop in the given regime.
pub fn run(p: &dyn Problem, regime: Regime, cfg: &RunConfig) -> Result<RunOutput, OptError> {
    let ema = EmaSchedule::new(cfg.c).map_err(OptError::BadConfig)?;
    if let Some(a) = cfg.alpha_override {
        if !(a > 0.0 && a <= 1.0) {
            return Err(OptError::BadConfig(format!("alpha override {a} not in (0,1]")));
        }
    }
    let mut constants = p.constants();
    constants.validate().map_err(|e| OptError::BadConfig(e.to_string()))?;
    let x0 = initial_point(p, cfg)?;
    if regime == Regime::Convex && constants.r.is_none() {
        let fallback = linops::norm(&x0) + 1.0;
        log::warn!(
            "convex regime without a distance estimate R; defaulting to ‖x0‖ + 1 = {fallback:.6}"
        );
        constants.r = Some(fallback);
    }
    let m = resolve_m(cfg, &constants)?;
    let n = p.n();
    let b = cfg.b.unwrap_or_else(|| default_batch(n)).min(n).max(1);
    let sched = match cfg.schedule_override {
        Some((n_epochs, t_inner)) => {
            let beta = match regime {
                Regime::NonconvexPlain => BetaSchedule::Zero,
                Regime::NonconvexProx => BetaSchedule::Constant { beta: cfg.beta },
                Regime::Convex => {
                    let base = schedule(regime, n, cfg, &constants)?;
                    base.beta
                }
            };
            Schedule { n_epochs, t_inner, beta }
        }
        None => schedule(regime, n, cfg, &constants)?,
    };
    if sched.t_inner == 0 || sched.n_epochs == 0 {
        return Err(OptError::BadConfig("schedule produced an empty loop".into()));
    }
    let tau = step_threshold(cfg.epsilon, constants.l2, m);
    // Full batches have no estimator noise to absorb.
    let absorption =
        if b < n { absorption_report(regime, b, sched.t_inner) } else { None };
    if let Some(a) = absorption {
        if a.flagged {
            log::warn!(
                "batch/epoch pairing outside the noise-absorption regime (ratio {:.3})",
                a.ratio
            );
        }
    }
    let mut solver_cfg = cfg.solver;
    solver_cfg.theta = cfg.theta;

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    probe_rng.set_stream(2);

    let mut counter = OracleCounter::default();
    let mut trace: Vec<IterRecord> = Vec::new();
    let mut x = x0;
    let mut pre_step_x = x.clone();
    let mut steps: u64 = 0;
    let mut epochs_started: u64 = 0;
    let mut restart_points = Vec::new();
    let mut consecutive_floor = 0usize;
    let mut inexact_checks_passed: u64 = 0;
    let mut terminated = TerminationReason::Budget;
    let mut final_step_norm = f64::NAN;

    'outer: for epoch in 1..=sched.n_epochs {
        restart_points.push(steps);
        epochs_started += 1;
        let (mut gs, mut hs): (GradEstimatorState, HessEstimatorState) =
            estimators::snapshot(p, &x, cfg.backend, &mut probe_rng, &mut counter);

        for t in 1..=sched.t_inner {
            if steps >= cfg.max_total_iters {
                break 'outer;
            }
            let beta_t = sched.beta.at(t);
            let model = CubicModel::new(&gs.ema, hs.ema.as_op(), beta_t, m)?;
            let sol = cubic_solver::solve(&model, &solver_cfg)?;
            if sol.status == SolveStatus::ToleranceFloor {
                consecutive_floor += 1;
                if consecutive_floor >= 3 {
                    log::error!(
                        "aborting: repeated subproblem tolerance floor; last lambda {:.3e}, \
                         step norm {:.3e}, theta {:.1e}",
                        sol.lambda,
                        linops::norm(&sol.s),
                        cfg.theta
                    );
                    return Err(OptError::RepeatedToleranceFloor { epoch, t });
                }
            } else {
                consecutive_floor = 0;
            }

            // Independent certification; the zero step is legitimate only
            // on the solver's explicit zero-gradient path.
            let step_norm = linops::norm(&sol.s);
            if step_norm > 0.0 || sol.status != SolveStatus::GradientZero {
                let rep = cubic_solver::check_inexactness(&model, &sol.s, cfg.theta, 0.0);
                if !rep.both() {
                    return Err(OptError::InexactnessViolated {
                        epoch,
                        t,
                        details: format!(
                            "norm_ok={} dir_ok={} ‖s‖={step_norm:.3e} λ={:.3e}",
                            rep.norm_ok, rep.dir_ok, sol.lambda
                        ),
                    });
                }
            }
            inexact_checks_passed += 1;

            pre_step_x = x.clone();
            linops::axpy(1.0, &sol.s, &mut x);
            steps += 1;

            let batch = estimators::sample_batch(n, b, cfg.sample_without_replacement, &mut batch_rng);
            let alpha_t = cfg.alpha_override.unwrap_or_else(|| ema.alpha(t));
            estimators::sarah_step_with_alpha(
                &mut gs, &mut hs, p, &pre_step_x, &x, &batch, alpha_t, t, cfg.backend,
                &mut probe_rng, &mut counter,
            );

            let (f, grad_norm) = if cfg.log_full_objective {
                let f = problems::full_value(p, &x);
                let g = problems::full_grad(p, &x);
                counter.diag_value += n as u64;
                counter.diag_grad += n as u64;
                (Some(f), Some(linops::norm(&g)))
            } else {
                (None, None)
            };
            trace.push(IterRecord {
                epoch,
                t,
                f,
                grad_norm,
                step_norm,
                lambda: sol.lambda,
                beta_t,
                alpha_t,
                cg_iters: sol.cg_total_iters as u64,
                grad_oracles_raw: counter.grad_raw,
                hess_oracles_raw: counter.hess_raw,
                grad_oracles_paper: counter.grad_paper,
                hess_oracles_paper: counter.hess_paper,
                wall_ms: 0.0,
            });

            if step_norm <= tau {
                terminated = TerminationReason::StepNorm;
                final_step_norm = step_norm;
                break 'outer;
            }
            final_step_norm = step_norm;
        }
        x.clone_into(&mut pre_step_x);
        // Restart: the next epoch snapshots at the last iterate.
    }

    let diag = exit_diagnostics(p, &x, &mut counter);
    Ok(RunOutput {
        summary: RunSummary {
            final_x: x,
            pre_step_x,
            terminated_by: terminated,
            final_step_norm,
            step_norm_threshold: tau,
            f_final: diag.f,
            final_grad_norm: diag.grad_norm,
            final_lambda_min: diag.lambda_min,
            epochs_started,
            steps,
            restart_points,
            counters: counter,
            inexact_checks_passed,
            absorption,
            config: cfg.clone(),
            regime: Some(regime),
            baseline: None,
        },
        trace,
    })
}

// ---------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------

/// Run a baseline with the same trace schema and accounting rules.
pub fn run_baseline(
    p: &dyn Problem,
    method: BaselineMethod,
    cfg: &RunConfig,
) -> Result<RunOutput, OptError> {
    match method {
        BaselineMethod::FullCrn => {
            // Full-batch cubic Newton: exact estimators every step, no
            // damping, single epoch.
            let mut full = cfg.clone();
            full.b = Some(p.n());
            full.alpha_override = Some(1.0);
            full.beta = 0.0;
            let t_cap = cfg.max_total_iters.min(1_000_000) as usize;
            full.schedule_override = Some((1, t_cap));
            let mut out = run(p, Regime::NonconvexPlain, &full)?;
            out.summary.baseline = Some(BaselineMethod::FullCrn);
            out.summary.regime = None;
            Ok(out)
        }
        BaselineMethod::SubsampledCrn => run_subsampled_crn(p, cfg),
        BaselineMethod::SarahGd => run_sarah_gd(p, cfg),
    }
}

/// Fresh mini-batch gradient/Hessian estimates every step; no recursion,
/// no smoothing, no snapshots.
fn run_subsampled_crn(p: &dyn Problem, cfg: &RunConfig) -> Result<RunOutput, OptError> {
    let constants = p.constants();
    constants.validate().map_err(|e| OptError::BadConfig(e.to_string()))?;
    let m = resolve_m(cfg, &constants)?;
    let n = p.n();
    let d = p.dim();
    let b = cfg.b.unwrap_or_else(|| default_batch(n)).min(n).max(1);
    let tau = step_threshold(cfg.epsilon, constants.l2, m);
    let mut solver_cfg = cfg.solver;
    solver_cfg.theta = cfg.theta;

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    probe_rng.set_stream(2);

    let mut counter = OracleCounter::default();
    let mut trace = Vec::new();
    let mut x = initial_point(p, cfg)?;
    let mut pre_step_x = x.clone();
    let mut steps = 0u64;
    let mut inexact_checks_passed = 0u64;
    let mut terminated = TerminationReason::Budget;
    let mut final_step_norm = f64::NAN;

    let mut scratch = vec![0.0; d];
    while steps < cfg.max_total_iters {
        let t = steps as usize + 1;
        let batch = estimators::sample_batch(n, b, cfg.sample_without_replacement, &mut batch_rng);
        let w = 1.0 / batch.len() as f64;
        let mut g = vec![0.0; d];
        for &i in &batch {
            p.component_grad_into(i, &x, &mut scratch);
            linops::axpy(w, &scratch, &mut g);
        }
        let h = match cfg.backend {
            HessBackend::Dense => {
                let mut acc = crate::linops::DenseSym::zeros(d);
                for &i in &batch {
                    p.component_hess_accumulate(i, &x, w, &mut acc);
                }
                crate::hutchinson::HessianRepr::Dense(acc)
            }
            HessBackend::Hutchinson { q, dist, cap, .. } => {
                counter.hvp_probes += (batch.len() * q) as u64;
                let mut acc = crate::hutchinson::ProbeSketch::zero(d, cap);
                for &i in &batch {
                    let s = crate::hutchinson::sketch_component(p, i, &x, q, dist, &mut probe_rng, cap);
                    acc.absorb(1.0, &s, w);
                }
                crate::hutchinson::HessianRepr::Sketch(acc)
            }
        };
        counter.add_fresh_batch(batch.len());

        let model = CubicModel::new(&g, h.as_op(), 0.0, m)?;
        let sol = cubic_solver::solve(&model, &solver_cfg)?;
        let step_norm = linops::norm(&sol.s);
        if step_norm > 0.0 || sol.status != SolveStatus::GradientZero {
            let rep = cubic_solver::check_inexactness(&model, &sol.s, cfg.theta, 0.0);
            if !rep.both() {
                return Err(OptError::InexactnessViolated {
                    epoch: 1,
                    t,
                    details: format!("norm_ok={} dir_ok={}", rep.norm_ok, rep.dir_ok),
                });
            }
        }
        inexact_checks_passed += 1;
        pre_step_x = x.clone();
        linops::axpy(1.0, &sol.s, &mut x);
        steps += 1;
        trace.push(IterRecord {
            epoch: 1,
            t,
            f: None,
            grad_norm: None,
            step_norm,
            lambda: sol.lambda,
            beta_t: 0.0,
            alpha_t: 1.0,
            cg_iters: sol.cg_total_iters as u64,
            grad_oracles_raw: counter.grad_raw,
            hess_oracles_raw: counter.hess_raw,
            grad_oracles_paper: counter.grad_paper,
            hess_oracles_paper: counter.hess_paper,
            wall_ms: 0.0,
        });
        final_step_norm = step_norm;
        if step_norm <= tau {
            terminated = TerminationReason::StepNorm;
            break;
        }
    }

    let diag = exit_diagnostics(p, &x, &mut counter);
    Ok(RunOutput {
        summary: RunSummary {
            final_x: x,
            pre_step_x,
            terminated_by: terminated,
            final_step_norm,
            step_norm_threshold: tau,
            f_final: diag.f,
            final_grad_norm: diag.grad_norm,
            final_lambda_min: diag.lambda_min,
            epochs_started: 0,
            steps,
            restart_points: Vec::new(),
            counters: counter,
            inexact_checks_passed,
            absorption: None,
            config: cfg.clone(),
            regime: None,
            baseline: Some(BaselineMethod::SubsampledCrn),
        },
        trace,
    })
}

/// First-order recursive variance reduction with fixed stepsize `1/L_H`
/// and the classic `⌈n/b⌉` epoch length; gradient oracles only.
fn run_sarah_gd(p: &dyn Problem, cfg: &RunConfig) -> Result<RunOutput, OptError> {
    let constants = p.constants();
    constants.validate().map_err(|e| OptError::BadConfig(e.to_string()))?;
    if !(constants.lh > 0.0) {
        return Err(OptError::BadConfig("first-order baseline needs L_H > 0".into()));
    }
    let m_for_tau = cfg.m.unwrap_or(2.0 * constants.l2.max(1e-12));
    let n = p.n();
    let d = p.dim();
    let b = cfg.b.unwrap_or_else(|| default_batch(n)).min(n).max(1);
    let tau = step_threshold(cfg.epsilon, constants.l2, m_for_tau);
    let step_size = 1.0 / constants.lh;
    let t_inner = cfg
        .schedule_override
        .map(|(_, t)| t)
        .unwrap_or_else(|| n.div_ceil(b).max(1));

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);

    let mut counter = OracleCounter::default();
    let mut trace = Vec::new();
    let mut x = initial_point(p, cfg)?;
    let mut pre_step_x = x.clone();
    let mut steps = 0u64;
    let mut epochs_started = 0u64;
    let mut restart_points = Vec::new();
    let mut terminated = TerminationReason::Budget;
    let mut final_step_norm = f64::NAN;

    let mut scratch = vec![0.0; d];
    'outer: loop {
        restart_points.push(steps);
        epochs_started += 1;
        let mut hat = problems::full_grad(p, &x);
        counter.add_grad_snapshot(n);
        for t in 1..=t_inner {
            if steps >= cfg.max_total_iters {
                break 'outer;
            }
            let s: Vec<f64> = hat.iter().map(|v| -step_size * v).collect();
            let step_norm = linops::norm(&s);
            pre_step_x = x.clone();
            linops::axpy(1.0, &s, &mut x);
            steps += 1;

            let batch = estimators::sample_batch(n, b, cfg.sample_without_replacement, &mut batch_rng);
            let w = 1.0 / batch.len() as f64;
            for &i in &batch {
                p.component_grad_into(i, &x, &mut scratch);
                linops::axpy(w, &scratch, &mut hat);
                p.component_grad_into(i, &pre_step_x, &mut scratch);
                linops::axpy(-w, &scratch, &mut hat);
            }
            counter.add_grad_only_step(batch.len());

            trace.push(IterRecord {
                epoch: epochs_started as usize,
                t,
                f: None,
                grad_norm: None,
                step_norm,
                lambda: 0.0,
                beta_t: 0.0,
                alpha_t: 1.0,
                cg_iters: 0,
                grad_oracles_raw: counter.grad_raw,
                hess_oracles_raw: counter.hess_raw,
                grad_oracles_paper: counter.grad_paper,
                hess_oracles_paper: counter.hess_paper,
                wall_ms: 0.0,
            });
            final_step_norm = step_norm;
            if step_norm <= tau {
                terminated = TerminationReason::StepNorm;
                break 'outer;
            }
        }
        if steps >= cfg.max_total_iters {
            break;
        }
    }

    let diag = exit_diagnostics(p, &x, &mut counter);
    Ok(RunOutput {
        summary: RunSummary {
            final_x: x,
            pre_step_x,
            terminated_by: terminated,
            final_step_norm,
            step_norm_threshold: tau,
            f_final: diag.f,
            final_grad_norm: diag.grad_norm,
            final_lambda_min: diag.lambda_min,
            epochs_started,
            steps,
            restart_points,
            counters: counter,
            inexact_checks_passed: 0,
            absorption: None,
            config: cfg.clone(),
            regime: None,
            baseline: Some(BaselineMethod::SarahGd),
        },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_double_well, make_random_quadratic, DesignMatrix};

    fn plain_cfg(eps: f64, seed: u64) -> RunConfig {
        RunConfig { epsilon: eps, seed, ..Default::default() }
    }

    #[test]
    fn schedule_plain_arithmetic() {
        // L2=1, n=1000, eps=0.1, all constants 1: T = 10, N = 4.
        let cfg = plain_cfg(0.1, 0);
        let constants = ProblemConstants { l2: 1.0, lh: 1.0, ..Default::default() };
        let s = schedule(Regime::NonconvexPlain, 1000, &cfg, &constants).unwrap();
        assert_eq!(s.t_inner, 10);
        assert_eq!(s.n_epochs, 4);
    }

    #[test]
    fn schedule_prox_exact_power() {
        // n = 1024, exponent 3/5: T = 64 exactly.
        let mut cfg = plain_cfg(0.1, 0);
        cfg.beta = 0.5;
        let constants = ProblemConstants { l2: 1.0, lh: 1.0, ..Default::default() };
        let s = schedule(Regime::NonconvexProx, 1024, &cfg, &constants).unwrap();
        assert_eq!(s.t_inner, 64);
        assert!(matches!(s.beta, BetaSchedule::Constant { beta } if beta == 0.5));
    }

    #[test]
    fn schedule_convex_noise_free_branch() {
        // sigma1 = 0 kills the 1/eps^2 term; beta0 = 2·C5·L2·R.
        let cfg = plain_cfg(0.01, 0);
        let constants = ProblemConstants {
            l2: 1.0,
            lh: 1.0,
            sigma1: 0.0,
            sigma2: 0.0,
            r: Some(2.0),
        };
        let s = schedule(Regime::Convex, 100, &cfg, &constants).unwrap();
        assert_eq!(s.n_epochs, 1);
        let beta0 = match s.beta {
            BetaSchedule::Linear { beta0 } => beta0,
            _ => panic!("expected linear damping"),
        };
        assert!((beta0 - 4.0).abs() < 1e-12);
        let expect = 2.0 * ((1.0 * 2.0 + beta0) / 0.01f64).sqrt();
        assert_eq!(s.t_inner, ceil_eps(expect));
    }

    #[test]
    fn schedule_convex_requires_r() {
        let cfg = plain_cfg(0.1, 0);
        let constants = ProblemConstants { l2: 1.0, lh: 1.0, ..Default::default() };
        assert!(matches!(
            schedule(Regime::Convex, 100, &cfg, &constants),
            Err(OptError::MissingR)
        ));
    }

    #[test]
    fn absorption_examples() {
        let r = absorption_report(Regime::NonconvexPlain, 32, 10).unwrap();
        assert!((r.ratio - 1.0089).abs() < 1e-3);
        assert!(!r.flagged);
        let trivially = absorption_report(Regime::NonconvexPlain, 100, 1).unwrap();
        assert!(!trivially.flagged && trivially.ratio > 1.0);
        // Prox with T = b^{6/5} exactly: ratio 1.
        let b = 32usize;
        let t = (32f64).powf(1.2).round() as usize; // 64
        let r = absorption_report(Regime::NonconvexProx, b, t).unwrap();
        assert!((r.ratio - (t as f64).powf(2.5) / (b as f64).powi(3)).abs() < 1e-12);
        assert!((r.ratio - 1.0).abs() < 0.05);
    }

    #[test]
    fn huge_epsilon_terminates_first_step() {
        let p = make_double_well(16, 3, 0.1, 7);
        let mut cfg = plain_cfg(1e6, 3);
        cfg.x0 = Some(vec![2.0, 2.0, 2.0]);
        let out = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        assert_eq!(out.summary.terminated_by, TerminationReason::StepNorm);
        assert_eq!(out.summary.steps, 1);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn deterministic_mode_descends_to_second_order_point() {
        // Full batch, mixing disabled: exact estimators; the objective
        // decreases every step and the terminal point has curvature
        // above the stationarity floor.
        let p = make_double_well(8, 4, 0.0, 0);
        let mut cfg = plain_cfg(1e-3, 1);
        cfg.b = Some(8);
        cfg.alpha_override = Some(1.0);
        cfg.log_full_objective = true;
        cfg.x0 = Some(vec![2.0; 4]);
        cfg.schedule_override = Some((1, 400));
        let out = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        assert_eq!(out.summary.terminated_by, TerminationReason::StepNorm);
        let fs: Vec<f64> = out.trace.iter().map(|r| r.f.unwrap()).collect();
        for w in fs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
        let l2 = p.constants().l2;
        assert!(out.summary.final_lambda_min >= -(l2 * 1e-3).sqrt());
        assert!(out.summary.final_grad_norm <= 5e-3);
    }

    #[test]
    fn same_seed_reproduces_trace_bitwise() {
        let p = make_double_well(32, 5, 0.2, 11);
        let mut cfg = plain_cfg(1e-3, 42);
        cfg.x0 = Some(vec![1.5, -0.5, 0.7, 0.2, -1.0]);
        let a = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        let b = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.step_norm.to_bits(), rb.step_norm.to_bits());
            assert_eq!(ra.lambda.to_bits(), rb.lambda.to_bits());
            assert_eq!(ra.grad_oracles_raw, rb.grad_oracles_raw);
        }
        assert_eq!(a.summary.final_x, b.summary.final_x);
    }

    #[test]
    fn oracle_accounting_identity() {
        let p = make_double_well(25, 4, 0.15, 5);
        let mut cfg = plain_cfg(1e-4, 9);
        cfg.x0 = Some(vec![1.0; 4]);
        cfg.b = Some(5);
        let out = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        let s = &out.summary;
        let n = 25u64;
        let b = 5u64;
        assert_eq!(s.counters.grad_paper, n * s.epochs_started + b * s.steps);
        assert_eq!(s.counters.hess_paper, n * s.epochs_started + b * s.steps);
        assert_eq!(s.counters.grad_raw, n * s.epochs_started + 2 * b * s.steps);
        assert_eq!(s.counters.hess_raw, n * s.epochs_started + 2 * b * s.steps);
    }

    #[test]
    fn full_crn_solves_convex_quadratic() {
        let p = make_random_quadratic(10, 10, 3, 0.2, 0.5);
        let mut cfg = plain_cfg(1e-10, 1);
        cfg.m = Some(0.5);
        cfg.max_total_iters = 30;
        let out = run_baseline(&p, BaselineMethod::FullCrn, &cfg).unwrap();
        assert!(
            out.summary.final_grad_norm <= 1e-8,
            "grad norm {} after {} iters",
            out.summary.final_grad_norm,
            out.summary.steps
        );
    }

    #[test]
    fn subsampled_full_batch_coincides_with_full_crn() {
        let p = make_double_well(12, 3, 0.1, 2);
        let mut cfg = plain_cfg(1e-3, 8);
        cfg.b = Some(12);
        cfg.x0 = Some(vec![1.2, -0.8, 0.5]);
        cfg.max_total_iters = 50;
        let full = run_baseline(&p, BaselineMethod::FullCrn, &cfg).unwrap();
        let sub = run_baseline(&p, BaselineMethod::SubsampledCrn, &cfg).unwrap();
        assert_eq!(full.trace.len(), sub.trace.len());
        for (a, b) in full.trace.iter().zip(&sub.trace) {
            assert!((a.step_norm - b.step_norm).abs() <= 1e-14);
            assert!((a.lambda - b.lambda).abs() <= 1e-12);
        }
    }

    #[test]
    fn starting_at_the_optimum_stops_on_a_zero_step() {
        // Exact estimators at a strict minimum: the solver takes its
        // zero-gradient path, returns s = 0, and the step-norm rule
        // fires immediately.
        let p = make_random_quadratic(6, 4, 11, 0.0, 0.3);
        let (xstar, _) = p.known_optimum().unwrap();
        let mut cfg = plain_cfg(1e-6, 2);
        cfg.m = Some(1.0);
        cfg.b = Some(6);
        cfg.x0 = Some(xstar);
        let out = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        assert_eq!(out.summary.terminated_by, TerminationReason::StepNorm);
        assert_eq!(out.summary.steps, 1);
        assert_eq!(out.summary.final_step_norm, 0.0);
    }

    #[test]
    fn step_norm_termination_respects_threshold() {
        let p = make_double_well(20, 3, 0.1, 4);
        let mut cfg = plain_cfg(5e-3, 6);
        cfg.x0 = Some(vec![1.3, -0.9, 0.4]);
        let out = run(&p, Regime::NonconvexPlain, &cfg).unwrap();
        if out.summary.terminated_by == TerminationReason::StepNorm {
            assert!(out.summary.final_step_norm <= out.summary.step_norm_threshold);
        }
        // The threshold is sqrt(eps / L2) with the problem constant.
        let expect = (5e-3 / p.constants().l2).sqrt();
        assert!((out.summary.step_norm_threshold - expect).abs() < 1e-15);
    }

    #[test]
    fn sarah_gd_accounting() {
        let data = DesignMatrix::from_rows(
            (0..40)
                .map(|i| (0..6).map(|j| (((i * 7 + j * 3) % 11) as f64 - 5.0) / 5.0).collect())
                .collect(),
        )
        .unwrap();
        let labels: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = crate::problems::make_logistic_l2(data, labels, 0.1).unwrap();
        let mut cfg = plain_cfg(1e-3, 4);
        cfg.b = Some(8);
        cfg.max_total_iters = 57;
        let out = run_baseline(&p, BaselineMethod::SarahGd, &cfg).unwrap();
        let s = &out.summary;
        assert_eq!(s.counters.hess_raw, 0);
        assert_eq!(s.counters.grad_raw, 40 * s.epochs_started + 2 * 8 * s.steps);
        assert_eq!(s.counters.grad_paper, 40 * s.epochs_started + 8 * s.steps);
    }
}
