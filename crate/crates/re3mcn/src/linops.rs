//! Dense vectors, symmetric linear operators, and Krylov utilities.
//!
//! Everything downstream (estimators, the cubic subproblem solver, the
//! verification suite) works through the [`SymOp`] trait so that dense
//! matrices and matrix-free probe sketches are interchangeable. All
//! reductions run in a fixed sequential order so results are reproducible
//! bit-for-bit under a fixed seed.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Errors raised by the linear-operator layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LinopsError {
    DimensionMismatch { expected: usize, got: usize },
    NonFinite(&'static str),
    InvalidParam(String),
    NotSymmetric { max_defect: f64 },
}

impl fmt::Display for LinopsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinopsError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            LinopsError::NonFinite(what) => write!(f, "non-finite input: {what}"),
            LinopsError::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            LinopsError::NotSymmetric { max_defect } => {
                write!(f, "matrix not symmetric (max defect {max_defect:.3e})")
            }
        }
    }
}

impl std::error::Error for LinopsError {}

// ---------------------------------------------------------------------
// Vector algebra
// ---------------------------------------------------------------------

/// Dot product with a fixed left-to-right accumulation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// `x *= alpha`.
pub fn scale(x: &mut [f64], alpha: f64) {
    for v in x.iter_mut() {
        *v *= alpha;
    }
}

/// `a - b` as a new vector.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub: length mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// True when every entry is finite.
pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

// ---------------------------------------------------------------------
// Symmetric operators
// ---------------------------------------------------------------------

/// A symmetric linear operator exposed through matrix-vector products.
pub trait SymOp {
    fn dim(&self) -> usize;

    /// `out = A v`. `out` is overwritten.
    fn apply_into(&self, v: &[f64], out: &mut [f64]);

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(v, &mut out);
        out
    }
}

/// Dense symmetric matrix, row-major full storage.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSym {
    d: usize,
    a: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(d: usize) -> Self {
        DenseSym { d, a: vec![0.0; d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Self::zeros(d);
        for (i, &v) in diag.iter().enumerate() {
            m.a[i * d + i] = v;
        }
        m
    }

    /// Build from row-major entries, checking symmetry to `1e-12` relative.
    pub fn from_rows(d: usize, a: Vec<f64>) -> Result<Self, LinopsError> {
        if a.len() != d * d {
            return Err(LinopsError::DimensionMismatch { expected: d * d, got: a.len() });
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut max_defect = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                max_defect = max_defect.max((a[i * d + j] - a[j * d + i]).abs());
            }
        }
        if max_defect > 1e-12 * scale {
            return Err(LinopsError::NotSymmetric { max_defect });
        }
        Ok(DenseSym { d, a })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.d + j] = v;
        self.a[j * self.d + i] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.a
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, other: &DenseSym, w: f64) {
        assert_eq!(self.d, other.d, "add_scaled: dimension mismatch");
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += w * y;
        }
    }

    pub fn scale(&mut self, w: f64) {
        for x in self.a.iter_mut() {
            *x *= w;
        }
    }

    /// `self += w * v vᵀ`.
    pub fn rank_one_update(&mut self, w: f64, v: &[f64]) {
        assert_eq!(v.len(), self.d, "rank_one_update: dimension mismatch");
        for i in 0..self.d {
            let wi = w * v[i];
            let row = &mut self.a[i * self.d..(i + 1) * self.d];
            for j in 0..v.len() {
                row[j] += wi * v[j];
            }
        }
    }

    /// `self += (w/2) (y zᵀ + z yᵀ)`.
    pub fn sym_outer_update(&mut self, w: f64, y: &[f64], z: &[f64]) {
        assert_eq!(y.len(), self.d);
        assert_eq!(z.len(), self.d);
        let h = 0.5 * w;
        for i in 0..self.d {
            let row = &mut self.a[i * self.d..(i + 1) * self.d];
            for j in 0..self.d {
                row[j] += h * (y[i] * z[j] + z[i] * y[j]);
            }
        }
    }

    /// `self += w * I`.
    pub fn add_scaled_identity(&mut self, w: f64) {
        for i in 0..self.d {
            self.a[i * self.d + i] += w;
        }
    }

    /// `self[j][j] += w * diag[j]` for all j.
    pub fn add_scaled_diag(&mut self, w: f64, diag: &[f64]) {
        assert_eq!(diag.len(), self.d);
        for i in 0..self.d {
            self.a[i * self.d + i] += w * diag[i];
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Full symmetric eigendecomposition: eigenvalues ascending plus
    /// matching eigenvectors (each normalized, first significant
    /// coordinate made positive for determinism).
    pub fn eigen(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = nalgebra::DMatrix::from_fn(self.d, self.d, |i, j| self.get(i, j));
        let se = nalgebra::SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..self.d).collect();
        order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
        let mut vals = Vec::with_capacity(self.d);
        let mut vecs = Vec::with_capacity(self.d);
        for &k in &order {
            vals.push(se.eigenvalues[k]);
            let mut v: Vec<f64> = se.eigenvectors.column(k).iter().copied().collect();
            fix_sign(&mut v);
            vecs.push(v);
        }
        (vals, vecs)
    }

    /// Operator norm via the full eigendecomposition.
    pub fn opnorm(&self) -> f64 {
        let (vals, _) = self.eigen();
        vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn lambda_min_exact(&self) -> f64 {
        let (vals, _) = self.eigen();
        vals[0]
    }
}

/// Flip `v` so its first coordinate with significant magnitude is positive.
pub fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return;
    }
    for &x in v.iter() {
        if x.abs() > 1e-12 * scale {
            if x < 0.0 {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

impl SymOp for DenseSym {
    fn dim(&self) -> usize {
        self.d
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.d, "apply: dimension mismatch");
        assert_eq!(out.len(), self.d);
        for i in 0..self.d {
            let row = &self.a[i * self.d..(i + 1) * self.d];
            out[i] = dot(row, v);
        }
    }
}

/// `base + shift * I` without materializing.
pub struct ShiftedOp<'a> {
    pub base: &'a dyn SymOp,
    pub shift: f64,
}

impl SymOp for ShiftedOp<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.base.apply_into(v, out);
        if self.shift != 0.0 {
            axpy(self.shift, v, out);
        }
    }
}

/// Weighted sum of operators, for difference diagnostics like `H_t - ∇²F`.
pub struct LinCombOp<'a> {
    d: usize,
    terms: Vec<(f64, &'a dyn SymOp)>,
}

impl<'a> LinCombOp<'a> {
    pub fn new(terms: Vec<(f64, &'a dyn SymOp)>) -> Self {
        assert!(!terms.is_empty());
        let d = terms[0].1.dim();
        for (_, op) in &terms {
            assert_eq!(op.dim(), d, "lincomb: dimension mismatch");
        }
        LinCombOp { d, terms }
    }
}

impl SymOp for LinCombOp<'_> {
    fn dim(&self) -> usize {
        self.d
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut scratch = vec![0.0; self.d];
        for (w, op) in &self.terms {
            op.apply_into(v, &mut scratch);
            axpy(*w, &scratch, out);
        }
    }
}

// ---------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------

/// Diagnostics from a Krylov solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct KrylovReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    /// Set when a direction of non-positive curvature was met; the solve
    /// exits early and the returned iterate is the last one before the
    /// breakdown.
    pub breakdown_flag: bool,
}

/// Solve `(A + shift I) u = rhs` by conjugate gradients.
///
/// Converges when the residual drops below `rel_tol * ||rhs||`. On a
/// direction `p` with `pᵀ(A + shift I)p <= 0` the breakdown flag is set
/// and the last iterate is returned; indefiniteness is reported, not
/// raised, so callers can react (the secular solver raises its lower
/// bracket).
pub fn cg_solve(
    a: &dyn SymOp,
    rhs: &[f64],
    shift: f64,
    rel_tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, KrylovReport), LinopsError> {
    let d = a.dim();
    if rhs.len() != d {
        return Err(LinopsError::DimensionMismatch { expected: d, got: rhs.len() });
    }
    if !all_finite(rhs) {
        return Err(LinopsError::NonFinite("rhs"));
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(LinopsError::InvalidParam(format!("rel_tol {rel_tol} not in (0,1)")));
    }

    let bnorm = norm(rhs);
    let mut x = vec![0.0; d];
    if bnorm == 0.0 {
        return Ok((x, KrylovReport { iterations: 0, final_residual_norm: 0.0, breakdown_flag: false }));
    }

    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; d];
    let mut rs = dot(&r, &r);
    let tol = rel_tol * bnorm;

    for k in 0..max_iters {
        a.apply_into(&p, &mut ap);
        if shift != 0.0 {
            axpy(shift, &p, &mut ap);
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Ok((
                x,
                KrylovReport { iterations: k, final_residual_norm: norm(&r), breakdown_flag: true },
            ));
        }
        let alpha = rs / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= tol {
            return Ok((
                x,
                KrylovReport {
                    iterations: k + 1,
                    final_residual_norm: rs_new.sqrt(),
                    breakdown_flag: false,
                },
            ));
        }
        let beta = rs_new / rs;
        for i in 0..d {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }

    Ok((
        x,
        KrylovReport { iterations: max_iters, final_residual_norm: norm(&r), breakdown_flag: false },
    ))
}

// ---------------------------------------------------------------------
// Lanczos extremal eigenvalues
// ---------------------------------------------------------------------

/// One standard-normal draw; keeps distribution plumbing in one place.
pub fn rng_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng_normal(rng)).collect()
}

/// One Lanczos sweep with full reorthogonalization. Returns the Ritz
/// values (ascending) and the matching Ritz vectors in the original space.
fn lanczos_sweep(a: &dyn SymOp, v0: &[f64], iters: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.dim();
    let m = iters.min(d).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);

    let mut v = v0.to_vec();
    let n0 = norm(&v);
    assert!(n0 > 0.0, "lanczos: zero start vector");
    scale(&mut v, 1.0 / n0);

    let mut w = vec![0.0; d];
    for j in 0..m {
        basis.push(v.clone());
        a.apply_into(&v, &mut w);
        let alpha = dot(&v, &w);
        alphas.push(alpha);
        // Two reorthogonalization passes keep the basis clean at this scale.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let beta = norm(&w);
        if j + 1 == m || beta < 1e-14 * alpha.abs().max(1.0) {
            break;
        }
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();
    }

    let k = alphas.len();
    let mut tri = DenseSym::zeros(k);
    for i in 0..k {
        tri.set_sym(i, i, alphas[i]);
        if i + 1 < k {
            tri.set_sym(i, i + 1, betas[i]);
        }
    }
    let (vals, ritz) = tri.eigen();
    let vecs = ritz
        .iter()
        .map(|y| {
            let mut out = vec![0.0; d];
            for (c, q) in y.iter().zip(&basis) {
                axpy(*c, q, &mut out);
            }
            out
        })
        .collect();
    (vals, vecs)
}

/// Smallest-eigenvalue estimate from `probes` randomized Lanczos runs.
///
/// For a fixed seed the estimate is monotone non-increasing in `iters`
/// (up to roundoff) since each probe's Krylov subspace only grows.
pub fn lanczos_lambda_min(a: &dyn SymOp, probes: usize, iters: usize, rng_seed: u64) -> f64 {
    lanczos_lambda_min_vec(a, probes, iters, rng_seed).0
}

/// As [`lanczos_lambda_min`], also returning the matching Ritz vector
/// (sign-normalized).
pub fn lanczos_lambda_min_vec(
    a: &dyn SymOp,
    probes: usize,
    iters: usize,
    rng_seed: u64,
) -> (f64, Vec<f64>) {
    assert!(iters >= 1, "lanczos: iters >= 1 required");
    let probes = probes.max(1);
    let mut best = f64::INFINITY;
    let mut best_vec = vec![0.0; a.dim()];
    for p in 0..probes {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(p as u64);
        let v0 = gaussian_vec(a.dim(), &mut rng);
        let (vals, vecs) = lanczos_sweep(a, &v0, iters);
        if vals[0] < best {
            best = vals[0];
            best_vec = vecs[0].clone();
        }
    }
    let n = norm(&best_vec);
    if n > 0.0 {
        scale(&mut best_vec, 1.0 / n);
    }
    fix_sign(&mut best_vec);
    (best, best_vec)
}

/// Operator-norm estimate `max(|λ_min|, |λ_max|)` from Lanczos Ritz values.
pub fn lanczos_opnorm(a: &dyn SymOp, probes: usize, iters: usize, rng_seed: u64) -> f64 {
    assert!(iters >= 1);
    let probes = probes.max(1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in 0..probes {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(p as u64);
        let v0 = gaussian_vec(a.dim(), &mut rng);
        let (vals, _) = lanczos_sweep(a, &v0, iters);
        lo = lo.min(vals[0]);
        hi = hi.max(*vals.last().unwrap());
    }
    lo.abs().max(hi.abs())
}
