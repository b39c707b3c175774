//! Recursive variance-reduced gradient/Hessian estimators with
//! EMA smoothing.
//!
//! An epoch starts from a full-batch snapshot (exact gradient, exact
//! dense Hessian or a full-batch probe sketch). Each inner step adds the
//! mini-batch difference of component oracles between the two latest
//! iterates to the running estimate, then mixes the running estimate
//! into the smoothed one with weight `α_t = c (t+1)^{-1/2}`.

use serde::{Deserialize, Serialize};

use crate::hutchinson::{
    self, HessianRepr, ProbeDistribution, ProbeSketch, DEFAULT_SKETCH_CAP,
};
use crate::linops::{self, DenseSym, LinCombOp, SymOp};
use crate::problems::{self, Problem};

use rand::Rng;

/// Decaying EMA weight schedule `α_t = c (t+1)^{-1/2}`, `c ∈ (0, 1/2]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmaSchedule {
    pub c: f64,
}

impl EmaSchedule {
    pub fn new(c: f64) -> Result<Self, String> {
        if c > 0.0 && c <= 0.5 {
            Ok(EmaSchedule { c })
        } else {
            Err(format!("ema constant c = {c} not in (0, 1/2]"))
        }
    }

    /// `α_t` for `t >= 1`; the schedule is never evaluated at `t = 0`
    /// (the snapshot step has no mixing).
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1, "alpha(t) is defined for t >= 1");
        self.c / ((t + 1) as f64).sqrt()
    }
}

/// Weights expressing the smoothed estimate as a convex combination of
/// all running estimates so far: entry `j` of the result multiplies the
/// running estimate from step `j`. Index 0 is the snapshot term
/// `Π_{k=1}^t (1-α_k)`; the weights sum to one exactly by construction.
pub fn ema_weights(s: &EmaSchedule, t: usize) -> Vec<f64> {
    let mut w = vec![0.0; t + 1];
    w[0] = 1.0;
    for k in 1..=t {
        let a = s.alpha(k);
        for j in 0..k {
            w[j] *= 1.0 - a;
        }
        w[k] = a;
    }
    w
}

/// Running squared-weight sums per step, computed by the recursions
/// `S_t = (1-α_t)² S_{t-1} + α_t²` with `S_0 = 1` (all weights) and
/// `T_0 = 0` (noise-bearing weights only, excluding the snapshot term,
/// which multiplies an exactly-zero increment). Returns `(full, noise)`
/// pairs for `t = 1..=t_max`.
pub fn squared_weight_profile(c: f64, t_max: usize) -> Vec<(f64, f64)> {
    let s = EmaSchedule { c };
    let mut full = 1.0f64;
    let mut noise = 0.0f64;
    let mut out = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let a = s.alpha(t);
        let damp = (1.0 - a) * (1.0 - a);
        full = damp * full + a * a;
        noise = damp * noise + a * a;
        out.push((full, noise));
    }
    out
}

// ---------------------------------------------------------------------
// Oracle accounting
// ---------------------------------------------------------------------

/// Component-oracle tallies. `*_raw` counts actual component
/// evaluations (a recursive step queries both endpoints, so 2b per
/// step); `*_paper` counts in the b-per-step, n-per-snapshot
/// convention used for complexity accounting. Diagnostic full passes
/// (objective logging, termination certificates) are tallied apart and
/// never mixed into the algorithmic totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounter {
    pub grad_raw: u64,
    pub hess_raw: u64,
    pub grad_paper: u64,
    pub hess_paper: u64,
    pub hvp_probes: u64,
    pub diag_value: u64,
    pub diag_grad: u64,
    pub diag_hess: u64,
}

impl OracleCounter {
    pub fn add_snapshot(&mut self, n: usize) {
        self.grad_raw += n as u64;
        self.hess_raw += n as u64;
        self.grad_paper += n as u64;
        self.hess_paper += n as u64;
    }

    pub fn add_sarah_step(&mut self, b: usize) {
        self.grad_raw += 2 * b as u64;
        self.hess_raw += 2 * b as u64;
        self.grad_paper += b as u64;
        self.hess_paper += b as u64;
    }

    pub fn add_fresh_batch(&mut self, b: usize) {
        self.grad_raw += b as u64;
        self.hess_raw += b as u64;
        self.grad_paper += b as u64;
        self.hess_paper += b as u64;
    }

    pub fn add_grad_only_step(&mut self, b: usize) {
        self.grad_raw += 2 * b as u64;
        self.grad_paper += b as u64;
    }

    pub fn add_grad_snapshot(&mut self, n: usize) {
        self.grad_raw += n as u64;
        self.grad_paper += n as u64;
    }
}

// ---------------------------------------------------------------------
// Estimator state
// ---------------------------------------------------------------------

/// Hessian estimator backend.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum HessBackend {
    Dense,
    Hutchinson {
        /// Probes per component per incremental step.
        q: usize,
        /// Probes per component at snapshots (the snapshot error enters
        /// every subsequent iterate, so it gets a multiple of `q`).
        q_snapshot: usize,
        dist: ProbeDistribution,
        cap: usize,
    },
}

impl HessBackend {
    pub fn hutchinson(q: usize) -> Self {
        HessBackend::Hutchinson {
            q,
            q_snapshot: 4 * q,
            dist: ProbeDistribution::Rademacher,
            cap: DEFAULT_SKETCH_CAP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradEstimatorState {
    /// Running recursive estimate.
    pub hat: Vec<f64>,
    /// EMA-smoothed estimate (what the model consumes).
    pub ema: Vec<f64>,
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct HessEstimatorState {
    pub hat: HessianRepr,
    pub ema: HessianRepr,
    pub t: usize,
}

/// Full-batch snapshot at `x0`: running and smoothed states coincide and
/// equal the exact full gradient / full Hessian representation.
pub fn snapshot<R: Rng + ?Sized>(
    p: &dyn Problem,
    x0: &[f64],
    backend: HessBackend,
    rng: &mut R,
    counter: &mut OracleCounter,
) -> (GradEstimatorState, HessEstimatorState) {
    let g = problems::full_grad(p, x0);
    let hat_h = match backend {
        HessBackend::Dense => HessianRepr::Dense(problems::full_hess_dense(p, x0)),
        HessBackend::Hutchinson { q_snapshot, dist, cap, .. } => {
            counter.hvp_probes += (p.n() * q_snapshot) as u64;
            HessianRepr::Sketch(hutchinson::sketch_full(p, x0, q_snapshot, dist, rng, cap))
        }
    };
    counter.add_snapshot(p.n());
    (
        GradEstimatorState { hat: g.clone(), ema: g, t: 0 },
        HessEstimatorState { ema: hat_h.clone(), hat: hat_h, t: 0 },
    )
}

/// Draw a mini-batch of size `b` from `{0..n}`. Full batches (`b == n`)
/// enumerate every index once, which makes the recursive estimates
/// exact by telescoping; smaller batches draw i.i.d. with replacement
/// by default (matching the variance analysis), or without replacement
/// behind the flag.
pub fn sample_batch<R: Rng + ?Sized>(
    n: usize,
    b: usize,
    without_replacement: bool,
    rng: &mut R,
) -> Vec<usize> {
    assert!(b >= 1, "batch size must be positive");
    if b == n {
        return (0..n).collect();
    }
    if without_replacement {
        assert!(b <= n, "batch size {b} exceeds n = {n} without replacement");
        // Partial Fisher-Yates over an index arena.
        let mut arena: Vec<usize> = (0..n).collect();
        for k in 0..b {
            let j = k + rng.random_range(0..(n - k));
            arena.swap(k, j);
        }
        arena.truncate(b);
        arena
    } else {
        (0..b).map(|_| rng.random_range(0..n)).collect()
    }
}

/// One recursive update spanning the displacement `x_prev → x_curr`,
/// followed by the EMA mix with weight `α_t`. Costs `2b` component
/// gradient evaluations and `2b` component Hessian(-sketch) evaluations.
#[allow(clippy::too_many_arguments)]
pub fn sarah_step<R: Rng + ?Sized>(
    gs: &mut GradEstimatorState,
    hs: &mut HessEstimatorState,
    p: &dyn Problem,
    x_prev: &[f64],
    x_curr: &[f64],
    batch: &[usize],
    sched: &EmaSchedule,
    t: usize,
    backend: HessBackend,
    rng: &mut R,
    counter: &mut OracleCounter,
) {
    assert!(t >= 1);
    let alpha = sched.alpha(t);
    sarah_step_with_alpha(gs, hs, p, x_prev, x_curr, batch, alpha, t, backend, rng, counter);
}

/// [`sarah_step`] with the mixing weight supplied directly (the
/// optimizer uses this for its test-mode weight override).
#[allow(clippy::too_many_arguments)]
pub fn sarah_step_with_alpha<R: Rng + ?Sized>(
    gs: &mut GradEstimatorState,
    hs: &mut HessEstimatorState,
    p: &dyn Problem,
    x_prev: &[f64],
    x_curr: &[f64],
    batch: &[usize],
    alpha: f64,
    t: usize,
    backend: HessBackend,
    rng: &mut R,
    counter: &mut OracleCounter,
) {
    assert!(t >= 1);
    assert!(alpha > 0.0 && alpha <= 1.0, "mixing weight {alpha} out of (0, 1]");
    let d = p.dim();
    let b = batch.len();
    assert!(b >= 1);
    for &i in batch {
        assert!(i < p.n(), "batch index {i} out of range");
    }
    let w = 1.0 / b as f64;

    // Gradient increment.
    let mut scratch = vec![0.0; d];
    let mut delta_g = vec![0.0; d];
    for &i in batch {
        p.component_grad_into(i, x_curr, &mut scratch);
        linops::axpy(w, &scratch, &mut delta_g);
        p.component_grad_into(i, x_prev, &mut scratch);
        linops::axpy(-w, &scratch, &mut delta_g);
    }
    linops::axpy(1.0, &delta_g, &mut gs.hat);

    // Hessian increment.
    match (&mut hs.hat, backend) {
        (HessianRepr::Dense(hat), HessBackend::Dense) => {
            let mut delta = DenseSym::zeros(d);
            for &i in batch {
                p.component_hess_accumulate(i, x_curr, w, &mut delta);
                p.component_hess_accumulate(i, x_prev, -w, &mut delta);
            }
            hat.add_scaled(&delta, 1.0);
        }
        (HessianRepr::Sketch(hat), HessBackend::Hutchinson { q, dist, cap, .. }) => {
            counter.hvp_probes += (2 * b * q) as u64;
            let mut delta = ProbeSketch::zero(d, cap);
            for &i in batch {
                let inc = hutchinson::sketch_component_diff(p, i, x_curr, x_prev, q, dist, rng, cap);
                delta.absorb(1.0, &inc, w);
            }
            hat.absorb(1.0, &delta, 1.0);
        }
        _ => panic!("estimator state does not match backend"),
    }
    counter.add_sarah_step(b);

    // EMA mix.
    let a = alpha;
    for j in 0..d {
        gs.ema[j] = (1.0 - a) * gs.ema[j] + a * gs.hat[j];
    }
    hs.ema.lin_comb(1.0 - a, &hs.hat, a);
    gs.t = t;
    hs.t = t;
}

/// Exact estimator errors at `x`: `‖g_ema - ∇F(x)‖` and the operator
/// norm of `H_ema - ∇²F(x)` (randomized extremal eigenvalue estimate on
/// the difference operator). Diagnostic only; tallied separately.
pub fn diagnostic_errors(
    gs: &GradEstimatorState,
    hs: &HessEstimatorState,
    p: &dyn Problem,
    x: &[f64],
    counter: &mut OracleCounter,
) -> (f64, f64) {
    let g = problems::full_grad(p, x);
    let eps = linops::norm(&linops::sub(&gs.ema, &g));
    let h = problems::full_hess_dense(p, x);
    counter.diag_grad += p.n() as u64;
    counter.diag_hess += p.n() as u64;
    let diff = LinCombOp::new(vec![(1.0, hs.ema.as_op()), (-1.0, &h as &dyn SymOp)]);
    let sig = linops::lanczos_opnorm(&diff, 2, 40.min(p.dim().max(2)), 0);
    (eps, sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::norm;
    use crate::problems::{full_grad, make_double_well, make_random_quadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_formula() {
        let s = EmaSchedule::new(0.5).unwrap();
        assert_eq!(s.alpha(3), 0.25);
        assert!((s.alpha(1) - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        let s = EmaSchedule::new(0.1).unwrap();
        assert!((s.alpha(99) - 0.01).abs() < 1e-15);
        assert!(EmaSchedule::new(0.6).is_err());
        assert!(EmaSchedule::new(0.0).is_err());
    }

    #[test]
    fn weights_boundary_and_telescoping() {
        let s = EmaSchedule::new(0.5).unwrap();
        assert_eq!(ema_weights(&s, 0), vec![1.0]);
        let w2 = ema_weights(&s, 2);
        let a1 = s.alpha(1);
        let a2 = s.alpha(2);
        assert!((w2[0] - (1.0 - a1) * (1.0 - a2)).abs() < 1e-15);
        assert!((w2[1] - a1 * (1.0 - a2)).abs() < 1e-15);
        assert!((w2[2] - a2).abs() < 1e-15);
        for t in [0, 1, 5, 40, 100] {
            let w = ema_weights(&s, t);
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "t={t} sum={sum}");
        }
    }

    #[test]
    fn profile_matches_explicit_weights() {
        for &c in &[0.1, 0.5] {
            let s = EmaSchedule::new(c).unwrap();
            let prof = squared_weight_profile(c, 50);
            for t in [1usize, 7, 50] {
                let w = ema_weights(&s, t);
                let full: f64 = w.iter().map(|v| v * v).sum();
                let noise: f64 = w[1..].iter().map(|v| v * v).sum();
                let (pf, pn) = prof[t - 1];
                assert!((full - pf).abs() <= 1e-14);
                assert!((noise - pn).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn snapshot_is_exact() {
        let p = make_double_well(8, 3, 0.2, 5);
        let x0 = vec![0.7, -0.4, 1.1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counter = OracleCounter::default();
        let (gs, hs) = snapshot(&p, &x0, HessBackend::Dense, &mut rng, &mut counter);
        let g = full_grad(&p, &x0);
        assert_eq!(gs.hat, g);
        assert_eq!(gs.ema, g);
        let h = crate::problems::full_hess_dense(&p, &x0);
        let mut diff = hs.hat.to_dense();
        diff.add_scaled(&h, -1.0);
        assert!(diff.frob_norm() == 0.0);
        assert_eq!(counter.grad_raw, 8);
        assert_eq!(counter.hess_paper, 8);
    }

    #[test]
    fn full_batch_recursion_stays_exact() {
        // b = n: the recursive estimate telescopes to the exact gradient
        // at every step.
        let p = make_random_quadratic(6, 4, 3, 0.3, 0.4);
        let sched = EmaSchedule::new(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counter = OracleCounter::default();
        let x0 = vec![0.5; 4];
        let (mut gs, mut hs) = snapshot(&p, &x0, HessBackend::Dense, &mut rng, &mut counter);
        let mut x_prev = x0;
        for t in 1..=5 {
            let x_curr: Vec<f64> = x_prev.iter().map(|v| v * 0.8 - 0.05 * t as f64).collect();
            let batch = sample_batch(6, 6, false, &mut rng);
            sarah_step(
                &mut gs, &mut hs, &p, &x_prev, &x_curr, &batch, &sched, t,
                HessBackend::Dense, &mut rng, &mut counter,
            );
            let g = full_grad(&p, &x_curr);
            assert!(norm(&linops::sub(&gs.hat, &g)) <= 1e-12);
            x_prev = x_curr;
        }
    }

    #[test]
    fn zero_displacement_changes_nothing_but_mixing() {
        let p = make_random_quadratic(8, 3, 9, 0.5, 0.5);
        let sched = EmaSchedule::new(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counter = OracleCounter::default();
        let x0 = vec![0.2, -0.1, 0.6];
        let (mut gs, mut hs) = snapshot(&p, &x0, HessBackend::Dense, &mut rng, &mut counter);
        let hat_before = gs.hat.clone();
        let batch = sample_batch(8, 3, false, &mut rng);
        sarah_step(
            &mut gs, &mut hs, &p, &x0, &x0, &batch, &sched, 1, HessBackend::Dense, &mut rng,
            &mut counter,
        );
        assert!(norm(&linops::sub(&gs.hat, &hat_before)) <= 1e-15);
        // ema = (1-a)·hat + a·hat = hat right after a snapshot
        assert!(norm(&linops::sub(&gs.ema, &hat_before)) <= 1e-15);
    }

    #[test]
    fn ema_recursion_matches_weight_reconstruction() {
        // Run 100 steps on a small problem recording every running
        // estimate; the smoothed estimate must equal the weighted sum.
        let p = make_random_quadratic(10, 3, 13, 0.4, 0.6);
        let sched = EmaSchedule::new(0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counter = OracleCounter::default();
        let mut x_prev = vec![0.3, 0.9, -0.2];
        let (mut gs, mut hs) = snapshot(&p, &x_prev, HessBackend::Dense, &mut rng, &mut counter);
        let mut hats = vec![gs.hat.clone()];
        for t in 1..=100 {
            let x_curr: Vec<f64> =
                x_prev.iter().enumerate().map(|(j, v)| v * 0.95 + 0.01 * (j as f64)).collect();
            let batch = sample_batch(10, 4, false, &mut rng);
            sarah_step(
                &mut gs, &mut hs, &p, &x_prev, &x_curr, &batch, &sched, t,
                HessBackend::Dense, &mut rng, &mut counter,
            );
            hats.push(gs.hat.clone());
            x_prev = x_curr;
        }
        let w = ema_weights(&sched, 100);
        let mut recon = vec![0.0; 3];
        for (wj, hat) in w.iter().zip(&hats) {
            linops::axpy(*wj, hat, &mut recon);
        }
        assert!(norm(&linops::sub(&recon, &gs.ema)) <= 1e-12);
    }

    #[test]
    fn martingale_mean_and_batch_scaling() {
        // Monte-Carlo over batches: the increment is unbiased for the
        // full-gradient difference, and its second moment scales as 1/b.
        let p = make_random_quadratic(40, 4, 21, 0.6, 0.8);
        let x_prev = vec![0.4; 4];
        let x_curr = vec![0.1, 0.5, -0.3, 0.2];
        let gdiff = linops::sub(&full_grad(&p, &x_curr), &full_grad(&p, &x_prev));

        let trials = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut scratch = vec![0.0; 4];
        let mut sample_delta = |b: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let batch = sample_batch(40, b, false, rng);
            let w = 1.0 / b as f64;
            let mut delta = vec![0.0; 4];
            for &i in &batch {
                p.component_grad_into(i, &x_curr, &mut scratch);
                linops::axpy(w, &scratch, &mut delta);
                p.component_grad_into(i, &x_prev, &mut scratch);
                linops::axpy(-w, &scratch, &mut delta);
            }
            delta
        };

        // Unbiasedness at b = 4 within 3 standard errors per coordinate.
        let mut mean = vec![0.0; 4];
        let mut m2 = vec![0.0; 4];
        for t in 0..trials {
            let delta = sample_delta(4, &mut rng);
            for j in 0..4 {
                let dj = delta[j] - mean[j];
                mean[j] += dj / (t + 1) as f64;
                m2[j] += dj * (delta[j] - mean[j]);
            }
        }
        for j in 0..4 {
            let se = (m2[j] / (trials as f64 - 1.0) / trials as f64).sqrt();
            assert!(
                (mean[j] - gdiff[j]).abs() <= 3.0 * se + 1e-12,
                "coord {j}: {} vs {}",
                mean[j],
                gdiff[j]
            );
        }

        // Second-moment slope vs b in log-log is -1 ± 0.15.
        let mut pts = Vec::new();
        for &b in &[1usize, 4, 16, 64] {
            let mut acc = 0.0;
            let reps = 4000;
            for _ in 0..reps {
                let delta = sample_delta(b, &mut rng);
                let noise = linops::sub(&delta, &gdiff);
                acc += linops::dot(&noise, &noise) / reps as f64;
            }
            pts.push(((b as f64).ln(), acc.ln()));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
        assert!((slope + 1.0).abs() <= 0.15, "slope {slope}");
    }

    #[test]
    fn diagnostics_zero_after_snapshot() {
        let p = make_double_well(6, 4, 0.1, 2);
        let x = vec![0.4; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counter = OracleCounter::default();
        let (gs, hs) = snapshot(&p, &x, HessBackend::Dense, &mut rng, &mut counter);
        let algo_counts = counter;
        let (e, s) = diagnostic_errors(&gs, &hs, &p, &x, &mut counter);
        assert!(e <= 1e-14);
        assert!(s.abs() <= 1e-10);
        // Diagnostics never touch the algorithmic tallies.
        assert_eq!(counter.grad_raw, algo_counts.grad_raw);
        assert!(counter.diag_grad > 0);
    }

    #[test]
    fn batch_sampler_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_batch(5, 5, false, &mut rng), vec![0, 1, 2, 3, 4]);
        let wo = sample_batch(50, 10, true, &mut rng);
        let mut sorted = wo.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10, "without-replacement must not repeat");
    }
}
