use thiserror::Error;

/// Errors raised by the pricing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown regime index {index} (model has {count} regimes)")]
    UnknownRegime { index: usize, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point outside the pricing domain: {0}")]
    Domain(String),

    #[error("model defect: {0}")]
    ModelDefect(String),

    #[error("sojourn root-finder did not converge (target {target}, bracket [{lo}, {hi}])")]
    RootFinding { target: f64, lo: f64, hi: f64 },

    #[error(
        "fixed-point iteration did not converge after {iterations} iterations \
         (final residual {residual:.3e}, estimated contraction {contraction:.4})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        contraction: f64,
    },

    #[error("solver defect: {0}")]
    SolverDefect(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
