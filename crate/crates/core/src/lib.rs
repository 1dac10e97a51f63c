//! Modified projected Gauss-Newton (MPG-N) for constrained nonlinear least
//! squares.
//!
//! The solver minimizes the sharp merit `‖F(x)‖` over a simple convex set `C`.
//! Each outer step linearizes `F` at the current point and solves
//!
//! ```text
//! min_{y ∈ C} ‖F(x) + ∇F(x)(y − x)‖ + (M/2)‖y − x‖²
//! ```
//!
//! by projected gradient ascent on its dual, with `M` picked by a doubling line
//! search. A projected gradient baseline, a power-flow residual model built
//! from MATPOWER case files, rate diagnostics for convergence traces and an
//! experiment runner are included.

// Negated comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case_io;
pub mod error;
pub mod experiment;
pub mod feasible;
pub mod kl;
pub mod linalg;
pub mod mpgn;
pub mod pgd;
pub mod powerflow;
pub mod residual;
pub mod subproblem;
pub mod trace;

pub use error::{Error, Result};
pub use feasible::{BallSet, BoxSet};
pub use mpgn::{solve_mpgn, MpgnConfig};
pub use pgd::{solve_pgd, PgdConfig};
pub use residual::ResidualModel;
pub use subproblem::{solve_subproblem, SubproblemInstance, SubproblemOptions, SubproblemSolution};
pub use trace::{IterateTrace, IterationRecord, SolveResult, SolveStatus};
