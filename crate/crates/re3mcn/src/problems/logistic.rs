//! Logistic-loss benchmarks: ridge-regularized (convex) and a variant
//! with a separable nonconvex regularizer.

use crate::linops::DenseSym;

use super::{
    estimate_constants_with, DesignMatrix, EstimateCfg, Problem, ProblemConstants, ProblemError,
};

/// Maximum absolute third derivative of the scalar logistic loss
/// `t ↦ ln(1 + e^{-t})`, equal to `1/(6√3)`. Verified against a grid
/// maximization in the tests.
pub const C3_LOGISTIC: f64 = 0.096_225_044_864_937_63;

/// Synthetic linearly-separable-with-noise classification data: Gaussian
/// rows of typical norm `scale`, labels from a planted random hyperplane
/// with each label flipped independently with probability `flip_prob`.
pub fn synthetic_classification(
    n: usize,
    d: usize,
    seed: u64,
    scale: f64,
    flip_prob: f64,
) -> (DesignMatrix, Vec<f64>) {
    use crate::linops::rng_normal;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng_normal(&mut rng)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let col_scale = scale / (d as f64).sqrt();
    for _ in 0..n {
        let a: Vec<f64> = (0..d).map(|_| col_scale * rng_normal(&mut rng)).collect();
        let t: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        let mut label = if t >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < flip_prob {
            label = -label;
        }
        rows.push(a);
        labels.push(label);
    }
    (DesignMatrix::from_rows(rows).unwrap(), labels)
}

/// As [`synthetic_classification`] but with log-uniform sample norms in
/// `[scale_min, scale_max]`. The resulting margins span several decades,
/// which gives the logistic objective a long multi-scale valley (the
/// gradient along the optimization path decays roughly inversely with
/// the distance traveled) instead of a single exponential shoulder.
pub fn synthetic_classification_multiscale(
    n: usize,
    d: usize,
    seed: u64,
    scale_min: f64,
    scale_max: f64,
    flip_prob: f64,
) -> (DesignMatrix, Vec<f64>) {
    use crate::linops::rng_normal;
    use rand::{Rng, SeedableRng};
    assert!(scale_min > 0.0 && scale_max >= scale_min);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng_normal(&mut rng)).collect();
    let log_lo = scale_min.ln();
    let log_hi = scale_max.ln();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let dir: Vec<f64> = (0..d).map(|_| rng_normal(&mut rng)).collect();
        let dn = crate::linops::norm(&dir).max(1e-300);
        let s = (log_lo + (log_hi - log_lo) * rng.random::<f64>()).exp();
        let a: Vec<f64> = dir.iter().map(|v| s * v / dn).collect();
        let t: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        let mut label = if t >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < flip_prob {
            label = -label;
        }
        rows.push(a);
        labels.push(label);
    }
    (DesignMatrix::from_rows(rows).unwrap(), labels)
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{-t})`, numerically stable at both tails.
#[inline]
fn logistic_loss(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

#[inline]
fn logistic_curvature(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

fn validate_dataset(data: &DesignMatrix, labels: &[f64]) -> Result<(), ProblemError> {
    if data.nrows() == 0 {
        return Err(ProblemError::NoSamples);
    }
    if data.nrows() != labels.len() {
        return Err(ProblemError::Invalid(format!(
            "{} rows but {} labels",
            data.nrows(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
        return Err(ProblemError::BadLabels(format!("label {bad} not in {{-1,+1}}")));
    }
    Ok(())
}

/// `f_i(x) = ln(1 + exp(-b_i aᵢᵀx)) + (μ/2)‖x‖²`.
pub struct LogisticL2 {
    data: DesignMatrix,
    labels: Vec<f64>,
    mu: f64,
    constants: ProblemConstants,
}

/// Build the ridge-regularized logistic problem with analytic smoothness
/// bounds (`lh ≤ maxᵢ‖aᵢ‖²/4 + μ`, `l2 ≤ c₃·maxᵢ‖aᵢ‖³`). The variance
/// constants are left at zero; estimate and set them when a schedule
/// needs them.
pub fn make_logistic_l2(
    data: DesignMatrix,
    labels: Vec<f64>,
    mu: f64,
) -> Result<LogisticL2, ProblemError> {
    validate_dataset(&data, &labels)?;
    if mu < 0.0 {
        return Err(ProblemError::Invalid("mu must be >= 0".into()));
    }
    let amax = data.max_row_norm();
    let constants = ProblemConstants {
        l2: C3_LOGISTIC * amax.powi(3),
        lh: amax * amax / 4.0 + mu,
        sigma1: 0.0,
        sigma2: 0.0,
        r: None,
    };
    Ok(LogisticL2 { data, labels, mu, constants })
}

impl LogisticL2 {
    fn margin(&self, i: usize, x: &[f64]) -> f64 {
        self.labels[i] * crate::linops::dot(self.data.row(i), x)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl Problem for LogisticL2 {
    fn n(&self) -> usize {
        self.data.nrows()
    }

    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        let sq = crate::linops::dot(x, x);
        logistic_loss(self.margin(i, x)) + 0.5 * self.mu * sq
    }

    fn component_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let t = self.margin(i, x);
        let coef = (sigmoid(t) - 1.0) * self.labels[i];
        let a = self.data.row(i);
        for j in 0..x.len() {
            out[j] = coef * a[j] + self.mu * x[j];
        }
    }

    fn component_hvp_into(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        let t = self.margin(i, x);
        let a = self.data.row(i);
        let coef = logistic_curvature(t) * crate::linops::dot(a, v);
        for j in 0..v.len() {
            out[j] = coef * a[j] + self.mu * v[j];
        }
    }

    fn component_hess_accumulate(&self, i: usize, x: &[f64], w: f64, acc: &mut DenseSym) {
        let t = self.margin(i, x);
        acc.rank_one_update(w * logistic_curvature(t), self.data.row(i));
        if self.mu != 0.0 {
            acc.add_scaled_identity(w * self.mu);
        }
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn set_constants(&mut self, c: ProblemConstants) {
        self.constants = c;
    }
}

/// Logistic loss plus the separable nonconvex penalty
/// `r(x) = λ Σⱼ xⱼ²/(1+xⱼ²)`.
pub struct NonconvexLogistic {
    data: DesignMatrix,
    labels: Vec<f64>,
    lam: f64,
    constants: ProblemConstants,
}

/// Constants are filled from sample-based estimates times the configured
/// safety factor (deterministic internal seed).
pub fn make_nonconvex_logistic(
    data: DesignMatrix,
    labels: Vec<f64>,
    lam: f64,
) -> Result<NonconvexLogistic, ProblemError> {
    make_nonconvex_logistic_with(data, labels, lam, &EstimateCfg::default())
}

pub fn make_nonconvex_logistic_with(
    data: DesignMatrix,
    labels: Vec<f64>,
    lam: f64,
    est: &EstimateCfg,
) -> Result<NonconvexLogistic, ProblemError> {
    validate_dataset(&data, &labels)?;
    if lam < 0.0 {
        return Err(ProblemError::Invalid("lam must be >= 0".into()));
    }
    let mut p = NonconvexLogistic { data, labels, lam, constants: ProblemConstants::default() };
    let raw = estimate_constants_with(&p, est);
    p.constants = ProblemConstants {
        l2: raw.l2 * est.safety,
        lh: raw.lh * est.safety,
        sigma1: raw.sigma1 * est.safety,
        sigma2: raw.sigma2 * est.safety,
        r: None,
    };
    Ok(p)
}

#[inline]
fn ncx_reg_value(x: f64) -> f64 {
    x * x / (1.0 + x * x)
}

#[inline]
fn ncx_reg_d1(x: f64) -> f64 {
    let u = 1.0 + x * x;
    2.0 * x / (u * u)
}

#[inline]
fn ncx_reg_d2(x: f64) -> f64 {
    let u = 1.0 + x * x;
    2.0 * (1.0 - 3.0 * x * x) / (u * u * u)
}

impl NonconvexLogistic {
    fn margin(&self, i: usize, x: &[f64]) -> f64 {
        self.labels[i] * crate::linops::dot(self.data.row(i), x)
    }

    pub fn lam(&self) -> f64 {
        self.lam
    }
}

impl Problem for NonconvexLogistic {
    fn n(&self) -> usize {
        self.data.nrows()
    }

    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        let reg: f64 = x.iter().map(|&v| ncx_reg_value(v)).sum();
        logistic_loss(self.margin(i, x)) + self.lam * reg
    }

    fn component_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let t = self.margin(i, x);
        let coef = (sigmoid(t) - 1.0) * self.labels[i];
        let a = self.data.row(i);
        for j in 0..x.len() {
            out[j] = coef * a[j] + self.lam * ncx_reg_d1(x[j]);
        }
    }

    fn component_hvp_into(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        let t = self.margin(i, x);
        let a = self.data.row(i);
        let coef = logistic_curvature(t) * crate::linops::dot(a, v);
        for j in 0..v.len() {
            out[j] = coef * a[j] + self.lam * ncx_reg_d2(x[j]) * v[j];
        }
    }

    fn component_hess_accumulate(&self, i: usize, x: &[f64], w: f64, acc: &mut DenseSym) {
        let t = self.margin(i, x);
        acc.rank_one_update(w * logistic_curvature(t), self.data.row(i));
        let diag: Vec<f64> = x.iter().map(|&v| ncx_reg_d2(v)).collect();
        acc.add_scaled_diag(w * self.lam, &diag);
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn set_constants(&mut self, c: ProblemConstants) {
        self.constants = c;
    }
}
