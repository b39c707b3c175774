//! Synthetic finite-sum quadratics, mostly used by tests: the average
//! Hessian is constant in `x` (so the Hessian-Lipschitz constant is 0)
//! and the optimum is known in closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::linops::rng_normal;

use crate::linops::{self, DenseSym, SymOp};

use super::{Problem, ProblemConstants};

/// `f_i(x) = ½ xᵀA_i x - b_iᵀx` with `mean(A_i) = A`, `mean(b_i) = b`.
pub struct Quadratic {
    a: Vec<DenseSym>,
    b: Vec<Vec<f64>>,
    a_mean: DenseSym,
    constants: ProblemConstants,
    optimum: Option<(Vec<f64>, f64)>,
}

impl Quadratic {
    /// All components identical to `½‖x‖²` (A = I, b = 0), any `n`.
    pub fn isotropic(n: usize, d: usize) -> Self {
        let a: Vec<DenseSym> = (0..n).map(|_| DenseSym::identity(d)).collect();
        let b = vec![vec![0.0; d]; n];
        Quadratic::from_components(a, b)
    }

    pub fn from_components(a: Vec<DenseSym>, b: Vec<Vec<f64>>) -> Self {
        assert!(!a.is_empty() && a.len() == b.len());
        let n = a.len();
        let d = a[0].dim();
        let mut a_mean = DenseSym::zeros(d);
        let mut b_mean = vec![0.0; d];
        for (ai, bi) in a.iter().zip(&b) {
            a_mean.add_scaled(ai, 1.0 / n as f64);
            linops::axpy(1.0 / n as f64, bi, &mut b_mean);
        }
        let optimum = solve_spd(&a_mean, &b_mean).map(|x| {
            let f = -0.5 * linops::dot(&b_mean, &x);
            (x, f)
        });
        let lh = a_mean.opnorm();
        let mut sigma2_sq = 0.0;
        let mut sigma1_base = 0.0; // gradient variance at x = 0
        for (ai, bi) in a.iter().zip(&b) {
            let mut da = ai.clone();
            da.add_scaled(&a_mean, -1.0);
            let f = da.frob_norm();
            sigma2_sq += f * f / n as f64;
            let db = linops::sub(bi, &b_mean);
            sigma1_base += linops::dot(&db, &db) / n as f64;
        }
        Quadratic {
            a,
            b,
            a_mean,
            constants: ProblemConstants {
                l2: 0.0,
                lh,
                sigma1: sigma1_base.sqrt(),
                sigma2: sigma2_sq.sqrt(),
                r: None,
            },
            optimum,
        }
    }

    pub fn mean_hessian(&self) -> &DenseSym {
        &self.a_mean
    }
}

fn solve_spd(a: &DenseSym, b: &[f64]) -> Option<Vec<f64>> {
    let (vals, vecs) = a.eigen();
    if vals[0] <= 0.0 {
        return None;
    }
    let mut x = vec![0.0; b.len()];
    for (lam, q) in vals.iter().zip(&vecs) {
        let c = linops::dot(q, b) / lam;
        linops::axpy(c, q, &mut x);
    }
    Some(x)
}

/// Random SPD-mean instance: diagonal base spectrum in `[0.5, 2]`, with
/// antithetic symmetric perturbations of size `hess_noise` and linear
/// terms perturbed by `grad_noise`, so the component means are exact.
pub fn make_random_quadratic(
    n: usize,
    d: usize,
    seed: u64,
    hess_noise: f64,
    grad_noise: f64,
) -> Quadratic {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = DenseSym::zeros(d);
    for j in 0..d {
        let v: f64 = rng_normal(&mut rng);
        base.set_sym(j, j, 1.25 + 0.75 * (v / 3.0).clamp(-1.0, 1.0));
    }
    let b_base: Vec<f64> = (0..d).map(|_| rng_normal(&mut rng)).collect();

    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let pairs = n / 2;
    for _ in 0..pairs {
        let mut e = DenseSym::zeros(d);
        for i in 0..d {
            for j in i..d {
                e.set_sym(i, j, hess_noise * rng_normal(&mut rng));
            }
        }
        let db: Vec<f64> =
            (0..d).map(|_| grad_noise * rng_normal(&mut rng)).collect();
        let mut ap = base.clone();
        ap.add_scaled(&e, 1.0);
        let mut am = base.clone();
        am.add_scaled(&e, -1.0);
        let bp: Vec<f64> = b_base.iter().zip(&db).map(|(x, y)| x + y).collect();
        let bm: Vec<f64> = b_base.iter().zip(&db).map(|(x, y)| x - y).collect();
        a.push(ap);
        b.push(bp);
        a.push(am);
        b.push(bm);
    }
    if n % 2 == 1 {
        a.push(base.clone());
        b.push(b_base.clone());
    }
    Quadratic::from_components(a, b)
}

impl Problem for Quadratic {
    fn n(&self) -> usize {
        self.a.len()
    }

    fn dim(&self) -> usize {
        self.a_mean.dim()
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        let ax = self.a[i].apply(x);
        0.5 * linops::dot(x, &ax) - linops::dot(&self.b[i], x)
    }

    fn component_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.a[i].apply_into(x, out);
        linops::axpy(-1.0, &self.b[i], out);
    }

    fn component_hvp_into(&self, i: usize, _x: &[f64], v: &[f64], out: &mut [f64]) {
        self.a[i].apply_into(v, out);
    }

    fn component_hess_accumulate(&self, i: usize, _x: &[f64], w: f64, acc: &mut DenseSym) {
        acc.add_scaled(&self.a[i], w);
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn set_constants(&mut self, c: ProblemConstants) {
        self.constants = c;
    }

    fn known_optimum(&self) -> Option<(Vec<f64>, f64)> {
        self.optimum.clone()
    }
}
