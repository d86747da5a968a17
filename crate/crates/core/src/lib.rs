//! Sparse recovery with squared L1/L2 regularization.
//!
//! The solver core ([`fractional`]) handles general programs of the form
//! `f(x)^2 / g(x) + h1(x) - h2(x)` over a box. [`models`] specializes it to
//! `lambda |x|_1^2 / |x|_2^2 + q(Ax - b)` with quadratic, Lorentzian and
//! trimmed-quadratic losses; [`problem_gen`] and [`harness`] reproduce the
//! randomized benchmark families.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fractional;
pub mod harness;
pub mod instance_io;
pub mod models;
pub mod problem_gen;
pub mod selfcheck;

pub use error::{Error, Result};
pub use fractional::{
    check_nontrivial_init, criticality_residual, evaluate_f, line_search_step, prox_gradient_candidate, solve,
    solve_partial, surrogate_h, FractionalObjective, IterateState, SolveOutcome, SolveTrace, SolverConfig,
    StepsizeRule, TerminationReason,
};
pub use models::{build_objective, BoxBounds, LossModel, SquaredRatioModel};
pub use problem_gen::{Family, GenSpec, GeneratedInstance};
