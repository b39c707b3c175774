//! Finite-sum problem definitions `F(x) = (1/n) Σ f_i(x)`.
//!
//! Each problem exposes per-component value/gradient/Hessian-vector
//! oracles plus a dense-Hessian accumulator used by the dense estimator
//! backend and by test oracles. Problems are immutable once built and
//! safe to share across threads; full-batch reductions run sequentially
//! in index order for reproducibility.

use serde::{Deserialize, Serialize};

use crate::linops::{self, DenseSym};

mod double_well;
mod libsvm;
mod logistic;
mod quadratic;

pub use double_well::{make_double_well, DoubleWell};
pub use libsvm::{load_libsvm, load_libsvm_str, write_libsvm, DesignMatrix};
pub use logistic::{
    make_logistic_l2, make_nonconvex_logistic, make_nonconvex_logistic_with,
    synthetic_classification, synthetic_classification_multiscale, LogisticL2,
    NonconvexLogistic, C3_LOGISTIC,
};
pub use quadratic::{make_random_quadratic, Quadratic};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::linops::rng_normal;

/// Problem-level smoothness and noise constants.
///
/// `l2` bounds the Hessian's Lipschitz modulus, `lh` the Hessian operator
/// norm along trajectories, `sigma1`/`sigma2` the per-component gradient
/// and Hessian variances, and `r` an initial-distance estimate used only
/// by the convex schedule. All estimated values are lower bounds on the
/// true suprema.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub l2: f64,
    pub lh: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub r: Option<f64>,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let ok = self.l2 >= 0.0
            && self.lh >= 0.0
            && self.sigma1 >= 0.0
            && self.sigma2 >= 0.0
            && self.r.map(|r| r >= 0.0).unwrap_or(true);
        if ok {
            Ok(())
        } else {
            Err(ProblemError::Invalid("problem constants must be nonnegative".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemError {
    Parse { line: usize, msg: String },
    NoSamples,
    BadLabels(String),
    Invalid(String),
    Io(String),
}

impl std::fmt::Display for ProblemError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemError::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            ProblemError::NoSamples => write!(f, "no samples"),
            ProblemError::BadLabels(msg) => write!(f, "bad labels: {msg}"),
            ProblemError::Invalid(msg) => write!(f, "{msg}"),
            ProblemError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for ProblemError {}

/// Per-component oracle interface for `F(x) = (1/n) Σ f_i(x)`.
pub trait Problem: Send + Sync {
    fn n(&self) -> usize;
    fn dim(&self) -> usize;

    fn component_value(&self, i: usize, x: &[f64]) -> f64;

    /// `out` is overwritten with `∇f_i(x)`.
    fn component_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// `out` is overwritten with `∇²f_i(x) v`.
    fn component_hvp_into(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]);

    /// `acc += w · ∇²f_i(x)` in dense form.
    fn component_hess_accumulate(&self, i: usize, x: &[f64], w: f64, acc: &mut DenseSym);

    fn constants(&self) -> ProblemConstants;

    fn set_constants(&mut self, c: ProblemConstants);

    /// Known minimizer and optimal value, when the instance has one.
    fn known_optimum(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

// ---------------------------------------------------------------------
// Full-pass helpers (exact averages over all components, fixed order)
// ---------------------------------------------------------------------

pub fn full_value(p: &dyn Problem, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.n() {
        acc += p.component_value(i, x);
    }
    acc / p.n() as f64
}

pub fn full_grad(p: &dyn Problem, x: &[f64]) -> Vec<f64> {
    let d = p.dim();
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..p.n() {
        p.component_grad_into(i, x, &mut g);
        linops::axpy(1.0, &g, &mut acc);
    }
    linops::scale(&mut acc, 1.0 / p.n() as f64);
    acc
}

pub fn full_hess_dense(p: &dyn Problem, x: &[f64]) -> DenseSym {
    let mut acc = DenseSym::zeros(p.dim());
    let w = 1.0 / p.n() as f64;
    for i in 0..p.n() {
        p.component_hess_accumulate(i, x, w, &mut acc);
    }
    acc
}

pub fn component_hessian_dense(p: &dyn Problem, i: usize, x: &[f64]) -> DenseSym {
    let mut acc = DenseSym::zeros(p.dim());
    p.component_hess_accumulate(i, x, 1.0, &mut acc);
    acc
}

// ---------------------------------------------------------------------
// Empirical constant estimation
// ---------------------------------------------------------------------

/// Settings for [`estimate_constants`].
#[derive(Clone, Copy, Debug)]
pub struct EstimateCfg {
    pub x_samples: usize,
    pub pair_samples: usize,
    pub seed: u64,
    /// Multiplier applied by builders that rely on estimated constants.
    pub safety: f64,
    /// Radius of the Gaussian cloud the sample points are drawn from.
    pub radius: f64,
}

impl Default for EstimateCfg {
    fn default() -> Self {
        EstimateCfg { x_samples: 8, pair_samples: 8, seed: 7, safety: 1.5, radius: 1.0 }
    }
}

fn opnorm_dense(h: &DenseSym) -> f64 {
    if h.dim() <= 200 {
        h.opnorm()
    } else {
        linops::lanczos_opnorm(h, 2, 60, 0)
    }
}

/// Sample-based estimates of the smoothness/noise constants.
///
/// Variances take the max over sampled points of the exact per-component
/// spread; the Lipschitz modulus takes the max difference quotient over
/// sampled pairs. Deterministic for a fixed seed.
pub fn estimate_constants(
    p: &dyn Problem,
    x_samples: usize,
    pair_samples: usize,
    seed: u64,
) -> ProblemConstants {
    estimate_constants_with(
        p,
        &EstimateCfg { x_samples, pair_samples, seed, ..EstimateCfg::default() },
    )
}

pub fn estimate_constants_with(p: &dyn Problem, cfg: &EstimateCfg) -> ProblemConstants {
    let d = p.dim();
    let n = p.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| cfg.radius * rng_normal(rng)).collect()
    };

    let mut sigma1_sq = 0.0f64;
    let mut sigma2_sq = 0.0f64;
    let mut lh = 0.0f64;
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.x_samples.max(1) {
        let x = draw(&mut rng);
        let gbar = full_grad(p, &x);
        let hbar = full_hess_dense(p, &x);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for i in 0..n {
            p.component_grad_into(i, &x, &mut grad);
            let dv = linops::sub(&grad, &gbar);
            s1 += linops::dot(&dv, &dv);
            let mut hi = component_hessian_dense(p, i, &x);
            hi.add_scaled(&hbar, -1.0);
            let f = hi.frob_norm();
            s2 += f * f;
        }
        sigma1_sq = sigma1_sq.max(s1 / n as f64);
        sigma2_sq = sigma2_sq.max(s2 / n as f64);
        lh = lh.max(opnorm_dense(&hbar));
    }

    let mut l2 = 0.0f64;
    for _ in 0..cfg.pair_samples.max(1) {
        let x = draw(&mut rng);
        let mut y = x.clone();
        let step: Vec<f64> =
            (0..d).map(|_| 0.5 * cfg.radius * rng_normal(&mut rng)).collect();
        linops::axpy(1.0, &step, &mut y);
        let dist = linops::norm(&step);
        if dist == 0.0 {
            continue;
        }
        let mut hx = full_hess_dense(p, &x);
        let hy = full_hess_dense(p, &y);
        hx.add_scaled(&hy, -1.0);
        l2 = l2.max(opnorm_dense(&hx) / dist);
    }

    ProblemConstants { l2, lh, sigma1: sigma1_sq.sqrt(), sigma2: sigma2_sq.sqrt(), r: None }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Central finite differences of `full_value` along each coordinate.
    pub fn fd_full_grad(p: &dyn Problem, x: &[f64], h: f64) -> Vec<f64> {
        let d = p.dim();
        let mut g = vec![0.0; d];
        let mut xp = x.to_vec();
        for j in 0..d {
            xp[j] = x[j] + h;
            let fp = full_value(p, &xp);
            xp[j] = x[j] - h;
            let fm = full_value(p, &xp);
            xp[j] = x[j];
            g[j] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Central finite differences of `component_grad` in direction `v`.
    pub fn fd_component_hvp(p: &dyn Problem, i: usize, x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
        let d = p.dim();
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for j in 0..d {
            xp[j] = x[j] + h * v[j];
            xm[j] = x[j] - h * v[j];
        }
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        p.component_grad_into(i, &xp, &mut gp);
        p.component_grad_into(i, &xm, &mut gm);
        gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }
}
