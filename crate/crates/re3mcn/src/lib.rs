//! Variance-reduced stochastic cubic Newton for finite-sum problems.
//!
//! The crate bundles:
//!
//! * recursive (SARAH-style) gradient/Hessian estimators smoothed by a
//!   decaying exponential moving average, with epochal full-batch restarts;
//! * a cubic-regularized subproblem solver (safeguarded secular bisection
//!   plus conjugate gradients) that certifies the accepted step against
//!   explicit inexactness conditions, together with an eigendecomposition
//!   reference solver used as a test oracle;
//! * a matrix-free Hessian backend built from randomized probe sketches;
//! * built-in finite-sum benchmark problems (regularized logistic
//!   regression, a nonconvex variant, a separable double-well, synthetic
//!   quadratics) plus a LIBSVM reader;
//! * baseline optimizers, an executable verification suite for the
//!   method's algebraic identities and statistical scalings, and a CLI
//!   harness that emits reproducible CSV/JSON traces.

// Validation guards use negated comparisons so NaN parameters are
// rejected too; index loops frequently touch several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cubic_solver;
pub mod estimators;
pub mod harness;
pub mod hutchinson;
pub mod linops;
pub mod optimizer;
pub mod problems;
pub mod verification;

pub use linops::{DenseSym, KrylovReport, LinopsError, SymOp};
pub use cubic_solver::{CubicModel, SolveConfig, SolveStatus, SubproblemSolution};
pub use estimators::{EmaSchedule, HessBackend, OracleCounter};
pub use hutchinson::{HessianRepr, ProbeDistribution, ProbeSketch};
pub use optimizer::{BaselineMethod, Regime, RunConfig, RunOutput, RunSummary};
pub use problems::{Problem, ProblemConstants, ProblemError};
pub use verification::CheckResult;
