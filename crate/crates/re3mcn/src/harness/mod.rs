//! Experiment configuration, run orchestration, and output management.
//!
//! Experiments are described by a flat TOML file (unknown keys are
//! rejected), executed deterministically from a master seed, and emitted
//! as a per-iteration trace CSV plus per-run JSON summaries. Re-running
//! the same config with the same seed reproduces every CSV byte for
//! byte; wall-clock timings live only in the JSON summaries.

pub mod cli;
pub mod scaling;
pub mod sink;

use serde::{Deserialize, Serialize};

use crate::estimators::HessBackend;
use crate::hutchinson::{ProbeDistribution, DEFAULT_SKETCH_CAP};
use crate::linops;
use crate::optimizer::{self, BaselineMethod, Regime, RunConfig, RunOutput};
use crate::problems::{self, Problem, ProblemError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Problem(ProblemError),
    Opt(optimizer::OptError),
    Io(std::io::Error),
    InsufficientPoints(String),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "config error: {m}"),
            HarnessError::Problem(e) => write!(f, "problem error: {e}"),
            HarnessError::Opt(e) => write!(f, "run error: {e}"),
            HarnessError::Io(e) => write!(f, "io error: {e}"),
            HarnessError::InsufficientPoints(m) => write!(f, "insufficient points: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<ProblemError> for HarnessError {
    fn from(e: ProblemError) -> Self {
        HarnessError::Problem(e)
    }
}

impl From<optimizer::OptError> for HarnessError {
    fn from(e: optimizer::OptError) -> Self {
        HarnessError::Opt(e)
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e)
    }
}

// ---------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub run: RunSection,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Synthetic classification data scale.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub flip_prob: Option<f64>,
    /// Ridge weight (logistic_l2).
    #[serde(default)]
    pub mu: Option<f64>,
    /// Nonconvex regularizer weight.
    #[serde(default)]
    pub lam: Option<f64>,
    /// Double-well shift scale.
    #[serde(default)]
    pub shift_scale: Option<f64>,
    /// Quadratic component noise levels.
    #[serde(default)]
    pub hess_noise: Option<f64>,
    #[serde(default)]
    pub grad_noise: Option<f64>,
    /// LIBSVM input path.
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub normalize: Option<bool>,
    /// Distance estimate for the convex schedule.
    #[serde(default)]
    pub r: Option<f64>,
    /// Estimate the variance constants at build time (needed by the
    /// convex schedule on data-backed problems).
    #[serde(default)]
    pub estimate_sigmas: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epsilon: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub max_total_iters: Option<u64>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub log_f: Option<bool>,
    /// Fixed start point, or a radius for a per-run random start.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub x0_radius: Option<f64>,
    #[serde(default)]
    pub prox_epoch_exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub regime: Option<String>,
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub beta0: Option<f64>,
    /// Disable the moving average (test mode / exact-oracle runs).
    #[serde(default)]
    pub alpha_one: Option<bool>,
    #[serde(default)]
    pub epochs_override: Option<usize>,
    #[serde(default)]
    pub t_override: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub bs: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() {
            return Err(HarnessError::Config("at least one [[method]] required".into()));
        }
        if !(self.run.epsilon > 0.0) {
            return Err(HarnessError::Config("run.epsilon must be > 0".into()));
        }
        for m in &self.methods {
            method_kind(m)?;
        }
        if let Some(backend) = &self.run.backend {
            if backend != "dense" && backend != "hutchinson" {
                return Err(HarnessError::Config(format!(
                    "run.backend '{backend}' must be 'dense' or 'hutchinson'"
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.epsilons.is_empty() || sweep.seeds.is_empty() {
                return Err(HarnessError::Config("sweep needs epsilons and seeds".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Re3mcn(Regime),
    Baseline(BaselineMethod),
}

pub fn method_kind(spec: &MethodSpec) -> Result<MethodKind, HarnessError> {
    match spec.name.as_str() {
        "re3mcn" => {
            let regime = match spec.regime.as_deref().unwrap_or("nonconvex_plain") {
                "nonconvex_plain" => Regime::NonconvexPlain,
                "convex" => Regime::Convex,
                "nonconvex_prox" => Regime::NonconvexProx,
                other => {
                    return Err(HarnessError::Config(format!(
                        "unknown regime '{other}' (nonconvex_plain | convex | nonconvex_prox)"
                    )))
                }
            };
            Ok(MethodKind::Re3mcn(regime))
        }
        "full_crn" => Ok(MethodKind::Baseline(BaselineMethod::FullCrn)),
        "subsampled_crn" => Ok(MethodKind::Baseline(BaselineMethod::SubsampledCrn)),
        "sarah_gd" => Ok(MethodKind::Baseline(BaselineMethod::SarahGd)),
        other => Err(HarnessError::Config(format!(
            "unknown method '{other}' (re3mcn | full_crn | subsampled_crn | sarah_gd)"
        ))),
    }
}

pub fn method_label(spec: &MethodSpec) -> String {
    match (spec.name.as_str(), spec.regime.as_deref()) {
        ("re3mcn", Some(r)) => format!("re3mcn-{r}"),
        ("re3mcn", None) => "re3mcn-nonconvex_plain".into(),
        (name, _) => name.to_string(),
    }
}

// ---------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------

pub fn build_problem(spec: &ProblemSpec) -> Result<Box<dyn Problem>, HarnessError> {
    let seed = spec.seed.unwrap_or(1);
    let mut problem: Box<dyn Problem> = match spec.kind.as_str() {
        "logistic_l2" | "nonconvex_logistic" => {
            let n = spec.n.ok_or_else(|| HarnessError::Config("problem.n required".into()))?;
            let d = spec.d.ok_or_else(|| HarnessError::Config("problem.d required".into()))?;
            let (data, labels) = problems::synthetic_classification(
                n,
                d,
                seed,
                spec.scale.unwrap_or(1.0),
                spec.flip_prob.unwrap_or(0.1),
            );
            if spec.kind == "logistic_l2" {
                Box::new(problems::make_logistic_l2(data, labels, spec.mu.unwrap_or(0.1))?)
            } else {
                Box::new(problems::make_nonconvex_logistic(
                    data,
                    labels,
                    spec.lam.unwrap_or(0.5),
                )?)
            }
        }
        "libsvm_logistic" | "libsvm_nonconvex" => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| HarnessError::Config("problem.path required".into()))?;
            let (data, labels) =
                problems::load_libsvm(std::path::Path::new(path), spec.normalize.unwrap_or(false))?;
            if spec.kind == "libsvm_logistic" {
                Box::new(problems::make_logistic_l2(data, labels, spec.mu.unwrap_or(0.1))?)
            } else {
                Box::new(problems::make_nonconvex_logistic(
                    data,
                    labels,
                    spec.lam.unwrap_or(0.5),
                )?)
            }
        }
        "double_well" => {
            let n = spec.n.ok_or_else(|| HarnessError::Config("problem.n required".into()))?;
            let d = spec.d.ok_or_else(|| HarnessError::Config("problem.d required".into()))?;
            Box::new(problems::make_double_well(n, d, spec.shift_scale.unwrap_or(0.15), seed))
        }
        "quadratic" => {
            let n = spec.n.ok_or_else(|| HarnessError::Config("problem.n required".into()))?;
            let d = spec.d.ok_or_else(|| HarnessError::Config("problem.d required".into()))?;
            Box::new(problems::make_random_quadratic(
                n,
                d,
                seed,
                spec.hess_noise.unwrap_or(0.2),
                spec.grad_noise.unwrap_or(0.5),
            ))
        }
        other => {
            return Err(HarnessError::Config(format!(
                "unknown problem kind '{other}' (logistic_l2 | nonconvex_logistic | \
                 libsvm_logistic | libsvm_nonconvex | double_well | quadratic)"
            )))
        }
    };

    let mut constants = problem.constants();
    if spec.estimate_sigmas.unwrap_or(false) && (constants.sigma1 == 0.0 || constants.sigma2 == 0.0)
    {
        let est = problems::estimate_constants(problem.as_ref(), 8, 8, seed.wrapping_add(101));
        constants.sigma1 = est.sigma1 * 1.5;
        constants.sigma2 = est.sigma2 * 1.5;
    }
    constants.r = spec.r.or(constants.r);
    problem.set_constants(constants);
    Ok(problem)
}

// ---------------------------------------------------------------------
// Cells and execution
// ---------------------------------------------------------------------

/// One (method, epsilon, seed, batch) execution unit of an experiment.
#[derive(Clone, Debug)]
pub struct Cell {
    pub run_id: String,
    pub method_index: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub b: Option<usize>,
}

/// Summary row for one executed cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub run_id: String,
    pub method: String,
    pub epsilon: f64,
    pub seed: u64,
    pub b: usize,
    pub n: usize,
    pub steps: u64,
    pub epochs_started: u64,
    pub terminated_by: String,
    pub f_final: f64,
    pub final_grad_norm: f64,
    pub final_lambda_min: f64,
    pub final_step_norm: f64,
    pub grad_oracles_raw: u64,
    pub hess_oracles_raw: u64,
    pub grad_oracles_paper: u64,
    pub hess_oracles_paper: u64,
    pub wall_ms: f64,
}

fn backend_from(run: &RunSection) -> HessBackend {
    match run.backend.as_deref() {
        Some("hutchinson") => {
            let q = run.q.unwrap_or(8);
            HessBackend::Hutchinson {
                q,
                q_snapshot: 4 * q,
                dist: ProbeDistribution::Rademacher,
                cap: DEFAULT_SKETCH_CAP,
            }
        }
        _ => HessBackend::Dense,
    }
}

/// Assemble the optimizer config for one cell.
pub fn cell_run_config(
    cfg: &ExperimentConfig,
    spec: &MethodSpec,
    problem_dim: usize,
    cell: &Cell,
) -> RunConfig {
    let run = &cfg.run;
    let x0 = match (&run.x0, run.x0_radius) {
        (Some(x), _) => Some(x.clone()),
        (None, Some(radius)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
            rng.set_stream(3);
            Some((0..problem_dim).map(|_| radius * linops::rng_normal(&mut rng)).collect())
        }
        (None, None) => None,
    };
    let schedule_override = match (spec.epochs_override, spec.t_override) {
        (Some(n), Some(t)) => Some((n, t)),
        (None, Some(t)) => Some((1, t)),
        (Some(n), None) => Some((n, 1_000_000)),
        (None, None) => None,
    };
    RunConfig {
        epsilon: cell.epsilon,
        c: spec.c.or(run.c).unwrap_or(0.5),
        theta: spec.theta.or(run.theta).unwrap_or(0.1),
        m: run.m,
        b: cell.b.or(spec.b).or(run.b),
        beta: spec.beta.unwrap_or(0.0),
        beta0: spec.beta0,
        sched: Default::default(),
        prox_epoch_exponent: run.prox_epoch_exponent.unwrap_or(0.6),
        seed: cell.seed,
        max_total_iters: run.max_total_iters.unwrap_or(200_000),
        backend: backend_from(run),
        solver: Default::default(),
        alpha_override: if spec.alpha_one.unwrap_or(false) { Some(1.0) } else { None },
        schedule_override,
        sample_without_replacement: false,
        log_full_objective: run.log_f.unwrap_or(false),
        x0,
    }
}

pub struct ExecutedCell {
    pub cell: Cell,
    pub method: String,
    pub output: RunOutput,
    pub wall_ms: f64,
}

pub fn execute_cell(
    cfg: &ExperimentConfig,
    problem: &dyn Problem,
    cell: &Cell,
) -> Result<ExecutedCell, HarnessError> {
    let spec = &cfg.methods[cell.method_index];
    let rc = cell_run_config(cfg, spec, problem.dim(), cell);
    let started = std::time::Instant::now();
    let output = match method_kind(spec)? {
        MethodKind::Re3mcn(regime) => optimizer::run(problem, regime, &rc)?,
        MethodKind::Baseline(b) => optimizer::run_baseline(problem, b, &rc)?,
    };
    Ok(ExecutedCell {
        cell: cell.clone(),
        method: method_label(spec),
        output,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Enumerate cells in canonical declaration order (methods outermost,
/// then epsilon, seed, batch axis).
pub fn enumerate_cells(cfg: &ExperimentConfig, master_seed: u64) -> Vec<Cell> {
    let (epsilons, seeds, bs): (Vec<f64>, Vec<u64>, Vec<Option<usize>>) = match &cfg.sweep {
        Some(s) => (
            s.epsilons.clone(),
            s.seeds.clone(),
            s.bs.clone().map(|v| v.into_iter().map(Some).collect()).unwrap_or(vec![None]),
        ),
        None => (vec![cfg.run.epsilon], vec![cfg.run.seed.unwrap_or(master_seed)], vec![None]),
    };
    let mut cells = Vec::new();
    let mut idx = 0usize;
    for (mi, _) in cfg.methods.iter().enumerate() {
        for &eps in &epsilons {
            for &seed in &seeds {
                for &b in &bs {
                    cells.push(Cell {
                        run_id: format!("r{idx:04}"),
                        method_index: mi,
                        epsilon: eps,
                        seed: seed ^ master_seed.rotate_left(17),
                        b,
                    });
                    idx += 1;
                }
            }
        }
    }
    cells
}

pub fn cell_result(ex: &ExecutedCell, n: usize, resolved_b: usize) -> CellResult {
    let s = &ex.output.summary;
    CellResult {
        run_id: ex.cell.run_id.clone(),
        method: ex.method.clone(),
        epsilon: ex.cell.epsilon,
        seed: ex.cell.seed,
        b: resolved_b,
        n,
        steps: s.steps,
        epochs_started: s.epochs_started,
        terminated_by: format!("{:?}", s.terminated_by),
        f_final: s.f_final,
        final_grad_norm: s.final_grad_norm,
        final_lambda_min: s.final_lambda_min,
        final_step_norm: s.final_step_norm,
        grad_oracles_raw: s.counters.grad_raw,
        hess_oracles_raw: s.counters.hess_raw,
        grad_oracles_paper: s.counters.grad_paper,
        hess_oracles_paper: s.counters.hess_paper,
        wall_ms: ex.wall_ms,
    }
}
