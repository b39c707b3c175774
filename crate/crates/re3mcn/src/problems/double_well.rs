//! Separable double-well testbed with a planted strict saddle.
//!
//! `f_i(x) = Σⱼ ¼(xⱼ - c_{i,j})⁴ - ½xⱼ²` with per-component shifts drawn
//! antithetically so that both the first and third moments across
//! components vanish exactly. The average objective then has a strict
//! saddle at the origin (`∇F(0) = 0`, `λ_min(∇²F(0)) = 3·mean(c²) - 1 < 0`
//! for small shifts), which exercises saddle escape and the second-order
//! stopping guarantee.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::linops::rng_normal;

use crate::linops::DenseSym;

use super::{estimate_constants_with, EstimateCfg, Problem, ProblemConstants};

/// Coordinate box half-width used for the analytic smoothness bounds.
const BOX_HALF_WIDTH: f64 = 2.0;

pub struct DoubleWell {
    n: usize,
    d: usize,
    shifts: Vec<f64>, // n x d row-major
    zero_shifts: bool,
    constants: ProblemConstants,
}

/// Build a double-well instance with `n` components in dimension `d`.
///
/// Shifts are Gaussian with scale `shift_scale`, mirrored in ± pairs
/// (odd `n` gets one zero row) so odd moments cancel exactly. Smoothness
/// constants come from interval bounds on the box `|xⱼ| ≤ 2`; variances
/// are estimated empirically with a seed derived from `seed`.
pub fn make_double_well(n: usize, d: usize, shift_scale: f64, seed: u64) -> DoubleWell {
    assert!(n >= 1, "double well needs n >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shifts = vec![0.0; n * d];
    let pairs = n / 2;
    for p in 0..pairs {
        for j in 0..d {
            let c = shift_scale * rng_normal(&mut rng);
            shifts[2 * p * d + j] = c;
            shifts[(2 * p + 1) * d + j] = -c;
        }
    }
    let cmax = shifts.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Third derivative of each coordinate term is 6(x - c); the Hessian is
    // diagonal, so its Lipschitz modulus on the box is 6(B + cmax).
    let l2 = 6.0 * (BOX_HALF_WIDTH + cmax);
    let lh = (3.0 * (BOX_HALF_WIDTH + cmax).powi(2) - 1.0).abs().max(1.0);
    let mut p = DoubleWell {
        n,
        d,
        shifts,
        zero_shifts: shift_scale == 0.0,
        constants: ProblemConstants { l2, lh, sigma1: 0.0, sigma2: 0.0, r: None },
    };
    let est = estimate_constants_with(
        &p,
        &EstimateCfg { seed: seed.wrapping_add(1), ..EstimateCfg::default() },
    );
    p.constants.sigma1 = est.sigma1 * 1.5;
    p.constants.sigma2 = est.sigma2 * 1.5;
    p
}

impl DoubleWell {
    #[inline]
    fn shift(&self, i: usize, j: usize) -> f64 {
        self.shifts[i * self.d + j]
    }

    /// Smallest Hessian eigenvalue of F at the origin (diagonal, exact).
    pub fn saddle_curvature(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for j in 0..self.d {
            let mut m2 = 0.0;
            for i in 0..self.n {
                let c = self.shift(i, j);
                m2 += c * c;
            }
            m2 /= self.n as f64;
            worst = worst.min(3.0 * m2 - 1.0);
        }
        worst
    }
}

impl Problem for DoubleWell {
    fn n(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.d {
            let u = x[j] - self.shift(i, j);
            acc += 0.25 * u * u * u * u - 0.5 * x[j] * x[j];
        }
        acc
    }

    fn component_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            let u = x[j] - self.shift(i, j);
            out[j] = u * u * u - x[j];
        }
    }

    fn component_hvp_into(&self, i: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        for j in 0..self.d {
            let u = x[j] - self.shift(i, j);
            out[j] = (3.0 * u * u - 1.0) * v[j];
        }
    }

    fn component_hess_accumulate(&self, i: usize, x: &[f64], w: f64, acc: &mut DenseSym) {
        let diag: Vec<f64> = (0..self.d)
            .map(|j| {
                let u = x[j] - self.shift(i, j);
                3.0 * u * u - 1.0
            })
            .collect();
        acc.add_scaled_diag(w, &diag);
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn set_constants(&mut self, c: ProblemConstants) {
        self.constants = c;
    }

    fn known_optimum(&self) -> Option<(Vec<f64>, f64)> {
        if self.zero_shifts {
            Some((vec![1.0; self.d], -0.25 * self.d as f64))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::norm;
    use crate::problems::{full_grad, full_hess_dense, full_value};

    #[test]
    fn zero_shift_scalar_structure() {
        // d=1, zero shifts: F(x) = x⁴/4 - x²/2 with stationary points
        // {-1, 0, 1}, saddle curvature -1, and F* = -1/4 at ±1.
        let p = make_double_well(4, 1, 0.0, 0);
        for s in [-1.0, 0.0, 1.0] {
            assert!(full_grad(&p, &[s])[0].abs() < 1e-15);
        }
        let h0 = full_hess_dense(&p, &[0.0]);
        assert!((h0.get(0, 0) + 1.0).abs() < 1e-15);
        assert!((full_value(&p, &[1.0]) + 0.25).abs() < 1e-15);
        let (xstar, fstar) = p.known_optimum().unwrap();
        assert_eq!(xstar, vec![1.0]);
        assert!((fstar + 0.25).abs() < 1e-15);
    }

    #[test]
    fn origin_is_exact_strict_saddle_with_shifts() {
        let p = make_double_well(9, 5, 0.2, 3);
        let g = full_grad(&p, &[0.0; 5]);
        assert!(norm(&g) < 1e-14, "grad at saddle {:?}", g);
        assert!(p.saddle_curvature() < -0.5);
    }

    #[test]
    fn l2_interval_bound_dominates_samples() {
        // The analytic bound 6(B + cmax) should dominate sampled
        // difference quotients on the box.
        let p = make_double_well(6, 3, 0.1, 1);
        let l2 = p.constants().l2;
        let mut worst: f64 = 0.0;
        let pts = [-2.0, -1.0, -0.3, 0.4, 1.1, 2.0];
        for &a in &pts {
            for &b in &pts {
                if a == b {
                    continue;
                }
                let ha = full_hess_dense(&p, &[a, a, a]);
                let hb = full_hess_dense(&p, &[b, b, b]);
                let mut diff = ha;
                diff.add_scaled(&hb, -1.0);
                // Diagonal Hessians: op norm = max |diagonal|; the
                // displacement along the all-ones direction has norm
                // √3·|a−b|, and per-coordinate Lipschitz bound applies
                // coordinate-wise.
                let op = (0..3).map(|j| diff.get(j, j).abs()).fold(0.0, f64::max);
                worst = worst.max(op / (a - b).abs());
            }
        }
        assert!(worst <= l2 + 1e-9, "worst {worst} vs bound {l2}");
    }
}
