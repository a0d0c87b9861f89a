// Indexed loops over several arrays at once dominate the matrix assembly
// code, and `!(x > 0.0)` guards are deliberate NaN catches.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Truncated nonsmooth Newton multigrid (TNNMG) for block-separable convex
//! minimization.
//!
//! The solver targets functionals `J(v) = J0(v) + Σ_k φ_k(v_k)` where `J0` is
//! smooth (quadratic or quasilinear) and each `φ_k` is a convex nonsmooth term
//! acting on one block of coefficients: interval and box indicators,
//! Gibbs-simplex indicators, weighted Euclidean norms, or sums of scalar
//! functions with a singularity at zero.
//!
//! One iteration combines
//!
//! 1. a nonlinear block Gauss–Seidel pre-smoother ([`smoother`]),
//! 2. a Newton-type correction on the subspace where `J` is locally `C²`,
//!    assembled by [`truncation`] and solved inexactly by [`linsolve`]
//!    (geometric V-cycle, CG, or a dense pseudo-inverse),
//! 3. a projection of the correction into the domain of `J` followed by a
//!    monotone line search ([`postprocess`]).
//!
//! The energy never increases across any stage. [`driver`] wires the stages
//! together and records a per-iteration convergence report, [`problems`]
//! builds the shipped example problems on structured grids, and [`oracle`]
//! holds independent brute-force reference solvers used by the test suite.

pub mod blocks;
pub mod driver;
pub mod error;
pub mod functional;
pub mod linsolve;
pub mod localsolve;
pub mod matrix;
pub mod nonsmooth;
pub mod oracle;
pub mod postprocess;
pub mod problems;
pub mod smoother;
pub mod truncation;

pub use blocks::{BlockStructure, BlockVector};
pub use error::{Error, Result};
pub use functional::{Energy, SeparableFunctional, SmoothPart};
pub use matrix::{BlockSparseMatrix, DenseBlock, Prolongation};
pub use nonsmooth::NonsmoothTerm;
