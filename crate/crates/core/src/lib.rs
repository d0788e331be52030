//! Regularized Stein variational gradient descent.
//!
//! The crate provides the particle sampler together with the tooling needed
//! to check it:
//!
//! * [`kernels`]: Gaussian and linear kernels, Gram matrices, median heuristic
//! * [`targets`]: score models for Gaussian, mixture and custom targets
//! * [`linalg`]: Cholesky, conjugate gradients and a Jacobi eigensolver
//! * [`sampler`]: the regularized particle update and run loop
//! * [`diagnostics`]: kernel Stein discrepancies, spectral functionals,
//!   Gaussian KL/Fisher and moment errors
//! * [`gaussian_flow`]: closed-form covariance recursions for Gaussian targets
//! * [`harness`]: configuration, seeded experiments, timing and CSV output

// `!(x > 0.0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod gaussian_flow;
#[cfg(feature = "harness")]
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod matrix;
pub mod sampler;
pub mod targets;

pub use error::{Error, Result};
pub use kernels::{gram, kernel_eval, kernel_grad1, median_heuristic, GramMatrix, KernelSpec};
pub use linalg::{cholesky, solve_spd, sym_eigen, SolveConfig, SymMatrix};
pub use matrix::Mat;
pub use sampler::{
    advance, drift, rsvgd_step, run, svgd_step, BandwidthPolicy, EnsembleState, NuSchedule, RunOptions, StepSchedule,
    Trajectory,
};
pub use targets::{sample_init, true_moment, InitSpec, ScoreModel, TestFunction};
