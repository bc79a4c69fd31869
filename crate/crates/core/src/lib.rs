//! Deterministic simulator for decentralized stochastic minimax optimization.
//!
//! The crate implements the DAMA iteration family (exact diffusion, EXTRA and
//! three gradient-tracking variants expressed through a common `(A, B, C)`
//! design-matrix triple) driven by the GRACE gradient estimator, which mixes a
//! batch refresh with a STORM / SARAH style recursive update through a shared
//! Bernoulli switch.
//!
//! Besides the iteration itself the crate carries the diagnostics needed to
//! check the transformed-recursion analysis numerically: per-eigenmode
//! similarity transforms, coupled error norms, the consensus bound and the
//! hyperparameter conditions.
//!
//! Module map:
//!
//! - [`mixing`]: topologies, Metropolis weights, Jacobi eigensolver, PSD square root
//! - [`strategies`]: the design-matrix triples and block-vector algebra
//! - [`problems`]: synthetic nonconvex–PL objectives
//! - [`grace`]: the gradient estimator
//! - [`engine`]: the main loop and per-round metrics
//! - [`transform`]: coupled-error diagnostics and spectral constants
//! - [`schedules`]: hyperparameter schedules and condition checks
//! - [`harness`]: configuration, experiment orchestration and persistence

pub mod engine;
pub mod error;
pub mod grace;
pub mod harness;
pub mod mixing;
pub mod problems;
pub mod schedules;
pub mod strategies;
pub mod transform;

pub use error::{Error, Result};
