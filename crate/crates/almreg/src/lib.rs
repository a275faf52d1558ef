//! Augmented Lagrangian (Bregman) iteration for linear ill-posed problems
//! `Ku = g` with convex penalties, stopped by the discrepancy principle,
//! together with a harness that checks the a-priori and a-posteriori error
//! bounds the method satisfies under a source condition.
//!
//! The crate is organised around six pieces:
//!
//! * [`linop`]: matrix-free linear operators (dense, diagonal, convolution,
//!   sampling masks, compositions) with exact adjoints and a power-iteration
//!   norm estimate,
//! * [`penalty`]: the supported penalties (quadratic, sum of `|u_k|^q`,
//!   total variation), their convex conjugates, Bregman distances and the
//!   inner subproblem solvers,
//! * [`alm`]: the outer iteration, its dual view, and the proximal-point
//!   descent diagnostics,
//! * [`stopping`]: the discrepancy stopping index, the a-priori admissibility
//!   report, the `rho`-overshoot trade-off curve and degenerate-instance
//!   detection,
//! * [`certify`]: source-condition certificates and the per-iterate error
//!   bound checks that the certificates enable,
//! * [`harness`]: seeded test-problem generators, exact-norm noise, noise
//!   sweeps, rate fits and report emission (also the CLI entry points).
//!
//! Runnable walk-throughs for each capability live in `examples/`; start with
//! `scalar_recursion.rs` which traces the method on a problem whose whole
//! trajectory is known in closed form.

pub mod alm;
pub mod certify;
pub mod error;
pub mod harness;
pub mod linop;
pub mod penalty;
pub mod stopping;

pub use error::{AlmregError, Result};
pub use linop::{LinearOperator, Vector};
pub use penalty::Penalty;
