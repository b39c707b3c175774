//! Matrix-free Hessian representation from randomized probes.
//!
//! A component Hessian is sketched as weighted pairs `(y, z)` with
//! `y = A z` for random probes `z` (`E[zzᵀ] = I`), applied in the
//! symmetrized form `v ↦ Σ w·½(y(zᵀv) + z(yᵀv))`, which is unbiased for
//! `A v` and closed under the linear combinations the recursive
//! estimator and its moving average need. Once the number of stored
//! terms exceeds the cap, the oldest terms are folded exactly into a
//! dense accumulator, so compression never changes results beyond
//! floating-point reassociation.
//!
//! Increments between two nearby points reuse the same probes at both
//! points: the pair then sketches the Hessian difference directly and
//! its variance contracts with the squared displacement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linops::{self, rng_normal, DenseSym, SymOp};
use crate::problems::{self, Problem};

/// Probe distribution; both choices satisfy `E[z] = 0`, `E[zzᵀ] = I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDistribution {
    Rademacher,
    Gaussian,
}

pub fn draw_probe<R: Rng + ?Sized>(d: usize, dist: ProbeDistribution, rng: &mut R) -> Vec<f64> {
    match dist {
        ProbeDistribution::Rademacher => {
            (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        }
        ProbeDistribution::Gaussian => (0..d).map(|_| rng_normal(rng)).collect(),
    }
}

#[derive(Clone, Debug)]
struct SketchTerm {
    w: f64,
    y: Vec<f64>,
    z: Vec<f64>,
}

/// Rank-limited representation of a symmetric operator as probe pairs
/// plus an exact dense overflow accumulator.
#[derive(Clone, Debug)]
pub struct ProbeSketch {
    d: usize,
    cap: usize,
    terms: Vec<SketchTerm>,
    fold: Option<DenseSym>,
}

/// Default maximum number of live probe terms before dense folding.
pub const DEFAULT_SKETCH_CAP: usize = 256;

impl ProbeSketch {
    pub fn zero(d: usize, cap: usize) -> Self {
        ProbeSketch { d, cap: cap.max(1), terms: Vec::new(), fold: None }
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn has_fold(&self) -> bool {
        self.fold.is_some()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn push_term(&mut self, w: f64, y: Vec<f64>, z: Vec<f64>) {
        assert_eq!(y.len(), self.d);
        assert_eq!(z.len(), self.d);
        self.terms.push(SketchTerm { w, y, z });
        self.compress_to_cap();
    }

    fn fold_mut(&mut self) -> &mut DenseSym {
        if self.fold.is_none() {
            self.fold = Some(DenseSym::zeros(self.d));
        }
        self.fold.as_mut().unwrap()
    }

    /// Fold oldest terms into the dense accumulator until within cap.
    fn compress_to_cap(&mut self) {
        if self.terms.len() <= self.cap {
            return;
        }
        let excess = self.terms.len() - self.cap;
        let folded: Vec<SketchTerm> = self.terms.drain(0..excess).collect();
        let fold = self.fold_mut();
        for t in &folded {
            fold.sym_outer_update(t.w, &t.y, &t.z);
        }
    }

    /// Scale every stored weight (and the fold) by `w`.
    pub fn scale(&mut self, w: f64) {
        for t in &mut self.terms {
            t.w *= w;
        }
        if let Some(f) = &mut self.fold {
            f.scale(w);
        }
    }

    /// `self = w_self * self + w_other * other`; probe vectors are reused
    /// as-is, only weights change, so no oracle is re-queried.
    pub fn absorb(&mut self, w_self: f64, other: &ProbeSketch, w_other: f64) {
        assert_eq!(self.d, other.d, "sketch combine: dimension mismatch");
        self.scale(w_self);
        if let Some(of) = &other.fold {
            let mut scaled = of.clone();
            scaled.scale(w_other);
            self.fold_mut().add_scaled(&scaled, 1.0);
        }
        for t in &other.terms {
            self.terms.push(SketchTerm { w: w_other * t.w, y: t.y.clone(), z: t.z.clone() });
        }
        self.compress_to_cap();
    }

    /// Exact dense materialization (terms plus fold).
    pub fn to_dense(&self) -> DenseSym {
        let mut m = self.fold.clone().unwrap_or_else(|| DenseSym::zeros(self.d));
        for t in &self.terms {
            m.sym_outer_update(t.w, &t.y, &t.z);
        }
        m
    }
}

/// `combine(a, wa, b, wb) = wa·a + wb·b` as a fresh sketch.
pub fn sketch_combine(a: &ProbeSketch, wa: f64, b: &ProbeSketch, wb: f64) -> ProbeSketch {
    let mut out = a.clone();
    out.absorb(wa, b, wb);
    out
}

impl SymOp for ProbeSketch {
    fn dim(&self) -> usize {
        self.d
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.d, "sketch apply: dimension mismatch");
        match &self.fold {
            Some(f) => f.apply_into(v, out),
            None => out.fill(0.0),
        }
        for t in &self.terms {
            let zv = linops::dot(&t.z, v);
            let yv = linops::dot(&t.y, v);
            let h = 0.5 * t.w;
            for j in 0..self.d {
                out[j] += h * (t.y[j] * zv + t.z[j] * yv);
            }
        }
    }
}

// ---------------------------------------------------------------------
// Sketching oracles
// ---------------------------------------------------------------------

/// `q`-probe sketch of `∇²f_i(x)`; costs `q` Hessian-vector products.
pub fn sketch_component<R: Rng + ?Sized>(
    p: &dyn Problem,
    i: usize,
    x: &[f64],
    q: usize,
    dist: ProbeDistribution,
    rng: &mut R,
    cap: usize,
) -> ProbeSketch {
    assert!(q >= 1, "probe count q >= 1 required");
    let d = p.dim();
    let mut s = ProbeSketch::zero(d, cap);
    let w = 1.0 / q as f64;
    let mut y = vec![0.0; d];
    for _ in 0..q {
        let z = draw_probe(d, dist, rng);
        p.component_hvp_into(i, x, &z, &mut y);
        s.push_term(w, y.clone(), z);
    }
    s
}

/// Sketch of `∇²f_i(x_new) - ∇²f_i(x_old)` with probes shared across the
/// two points, so the variance scales with the squared displacement.
/// Costs `2q` Hessian-vector products.
#[allow(clippy::too_many_arguments)]
pub fn sketch_component_diff<R: Rng + ?Sized>(
    p: &dyn Problem,
    i: usize,
    x_new: &[f64],
    x_old: &[f64],
    q: usize,
    dist: ProbeDistribution,
    rng: &mut R,
    cap: usize,
) -> ProbeSketch {
    assert!(q >= 1);
    let d = p.dim();
    let mut s = ProbeSketch::zero(d, cap);
    let w = 1.0 / q as f64;
    let mut y_new = vec![0.0; d];
    let mut y_old = vec![0.0; d];
    for _ in 0..q {
        let z = draw_probe(d, dist, rng);
        p.component_hvp_into(i, x_new, &z, &mut y_new);
        p.component_hvp_into(i, x_old, &z, &mut y_old);
        let y: Vec<f64> = y_new.iter().zip(&y_old).map(|(a, b)| a - b).collect();
        s.push_term(w, y, z);
    }
    s
}

/// Full-batch snapshot sketch: mean over all components with
/// `q_per_comp` probes each.
pub fn sketch_full<R: Rng + ?Sized>(
    p: &dyn Problem,
    x: &[f64],
    q_per_comp: usize,
    dist: ProbeDistribution,
    rng: &mut R,
    cap: usize,
) -> ProbeSketch {
    assert!(q_per_comp >= 1);
    let d = p.dim();
    let n = p.n();
    let mut s = ProbeSketch::zero(d, cap);
    let w = 1.0 / (n * q_per_comp) as f64;
    let mut y = vec![0.0; d];
    for i in 0..n {
        for _ in 0..q_per_comp {
            let z = draw_probe(d, dist, rng);
            p.component_hvp_into(i, x, &z, &mut y);
            s.push_term(w, y.clone(), z);
        }
    }
    s
}

/// Monte-Carlo mean squared Frobenius error of the batched increment
/// sketch between `x` and `x + s`, against the exact full Hessian
/// difference. Compare with `C · d · L₂² / (b q) · ‖s‖²`.
#[allow(clippy::too_many_arguments)]
pub fn variance_check(
    p: &dyn Problem,
    x: &[f64],
    s: &[f64],
    b: usize,
    q: usize,
    trials: usize,
    dist: ProbeDistribution,
    seed: u64,
) -> f64 {
    use rand::SeedableRng;
    let d = p.dim();
    let mut y = x.to_vec();
    linops::axpy(1.0, s, &mut y);
    let mut truth = problems::full_hess_dense(p, &y);
    let hx = problems::full_hess_dense(p, x);
    truth.add_scaled(&hx, -1.0);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..trials.max(1) {
        let mut sk = ProbeSketch::zero(d, usize::MAX >> 1);
        for _ in 0..b {
            let i = rng.random_range(0..p.n());
            let inc = sketch_component_diff(p, i, &y, x, q, dist, &mut rng, usize::MAX >> 1);
            sk.absorb(1.0, &inc, 1.0 / b as f64);
        }
        let mut err = sk.to_dense();
        err.add_scaled(&truth, -1.0);
        let f = err.frob_norm();
        acc += f * f;
    }
    acc / trials.max(1) as f64
}

// ---------------------------------------------------------------------
// Estimator-facing representation
// ---------------------------------------------------------------------

/// Hessian estimate in either dense or probe-sketch form; both expose
/// [`SymOp`] and are closed under linear combinations.
#[derive(Clone, Debug)]
pub enum HessianRepr {
    Dense(DenseSym),
    Sketch(ProbeSketch),
}

impl HessianRepr {
    pub fn as_op(&self) -> &dyn SymOp {
        match self {
            HessianRepr::Dense(m) => m,
            HessianRepr::Sketch(s) => s,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HessianRepr::Dense(m) => m.dim(),
            HessianRepr::Sketch(s) => s.d,
        }
    }

    /// `self = w_self·self + w_other·other` (same variant on both sides).
    pub fn lin_comb(&mut self, w_self: f64, other: &HessianRepr, w_other: f64) {
        match (self, other) {
            (HessianRepr::Dense(a), HessianRepr::Dense(b)) => {
                a.scale(w_self);
                a.add_scaled(b, w_other);
            }
            (HessianRepr::Sketch(a), HessianRepr::Sketch(b)) => {
                a.absorb(w_self, b, w_other);
            }
            _ => panic!("mixed Hessian representations"),
        }
    }

    pub fn to_dense(&self) -> DenseSym {
        match self {
            HessianRepr::Dense(m) => m.clone(),
            HessianRepr::Sketch(s) => s.to_dense(),
        }
    }
}
