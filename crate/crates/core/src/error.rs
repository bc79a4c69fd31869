use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not symmetric (max |M - M^T| = {residual:e})")]
    NotSymmetric { residual: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {min_eigenvalue:e}); use a lazy mixing matrix")]
    NotPsd { min_eigenvalue: f64 },

    #[error("communication graph is disconnected")]
    Disconnected,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("iterates diverged at round {round} (max |entry| = {max_abs:e})")]
    Divergence { round: usize, max_abs: f64 },

    #[error("non-finite gradient for agent {agent} (sample {sample})")]
    NonFiniteGradient { agent: usize, sample: String },

    #[error("sample index {index} out of range for {n} local samples")]
    SampleOutOfRange { index: usize, n: usize },

    #[error("degenerate eigenmode {mode}: b_j = 0 on a non-principal mode")]
    DegenerateMode { mode: usize },

    #[error("gradient ascent reached its cap of {steps} steps (|grad_y| = {residual:e})")]
    AscentCap { steps: usize, residual: f64 },

    #[error("estimator never refreshes: p = beta = 0 gives beta_bar = 0")]
    ZeroBetaBar,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
