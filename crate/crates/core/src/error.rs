use thiserror::Error;

/// Errors produced anywhere in the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative of order {requested} requested but `{name}` only provides up to order {available}")]
    Capability {
        name: String,
        requested: usize,
        available: usize,
    },
    #[error("model `{name}` fails hypothesis checks: {failed}")]
    Hypothesis { name: String, failed: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Bessel function overflow at s = {s}; use the exponentially scaled form")]
    BesselOverflow { s: f64 },
    #[error("divergent origin stub: weight exponent {p} with origin order {m} is not integrable")]
    DivergentStub { p: i32, m: i32 },
    #[error("missing metadata: {0}")]
    MissingMetadata(&'static str),
    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:.3e}); damping history {damping:?}")]
    NewtonDivergence {
        iterations: usize,
        residual: f64,
        damping: Vec<f64>,
    },
    #[error("singular linear system at row {0}")]
    Singular(usize),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("contraction bound {0:.4} is not below 1")]
    NotContractive(f64),
    #[error("fixed-point iteration stalled after {iterations} iterations (update {update:.3e})")]
    FixedPointStalled { iterations: usize, update: f64 },
    #[error("order {k}: |Omega_k| = {omega:.3e} exceeds tolerance {tol:.3e}")]
    TheoremViolation { k: usize, omega: f64, tol: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
