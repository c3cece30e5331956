//! Policy improvement for infinite-horizon discounted control of diffusions
//! stopped at the exit of a rectangle.
//!
//! The pipeline is: build a [`grid::Grid2D`], describe the control problem
//! with [`problem::ControlProblem`], then [`pia::run_pia`] alternates
//! five-point finite-difference policy evaluation ([`fdm`]) with the closed-form
//! greedy update. [`analysis`] measures how fast successive value functions
//! contract and checks the residual identities that drive the quadratic rate,
//! and [`mc`] is an independent Euler–Maruyama estimator of the payoff of a
//! frozen policy.
//!
//! Data-parallel loops (stencil assembly, Jacobi sweeps, Monte Carlo paths)
//! run on rayon when the `parallel` feature is enabled; see [`exec`].

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod exec;
pub mod fdm;
pub mod grid;
pub mod mc;
pub mod pia;
pub mod problem;

pub use error::{Error, Result};
pub use exec::Execution;
pub use fdm::{SolveOptions, SolveOutcome, SolveStats, StencilSystem, SweepScheme};
pub use grid::{Grid2D, PolicyField, ScalarField};
pub use pia::{IterationRecord, PiaConfig, PiaResult};
pub use problem::{ControlProblem, QuadraticReward, Rect};
