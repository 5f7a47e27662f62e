use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid adjacency: {0}")]
    InvalidAdjacency(String),

    #[error("graph is disconnected")]
    Disconnected,

    /// More than one eigenvalue sits at 1, so the mixing matrix does not
    /// connect all nodes.
    #[error("unit eigenvalue has multiplicity {0}; graph is disconnected")]
    DisconnectedSpectrum(usize),

    #[error("no eigenvalue within tolerance of 1; matrix is not stochastic")]
    NoUnitEigenvalue,

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("iterates diverged at iteration {iteration}{}", trial.map(|t| format!(" (trial {t})")).unwrap_or_default())]
    Divergence {
        trial: Option<usize>,
        iteration: u64,
    },

    #[error("reference solver stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
