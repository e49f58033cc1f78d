use thiserror::Error;

/// Errors raised by the geometry, solvers and front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the tubular neighbourhood (distance {distance:.3e}, delta0 {delta0:.3e})")]
    OutsideTube { distance: f64, delta0: f64 },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergent { what: String, iterations: usize },

    #[error("point is not on the manifold (distance {0:.3e})")]
    NotOnManifold(f64),

    #[error("growth bound violated: {0}")]
    GrowthViolation(String),

    #[error("integrand hypotheses violated: {}", .0.join("; "))]
    HypothesisViolation(Vec<String>),

    #[error("gradient columns are not tangent to the manifold (residual {0:.3e})")]
    NonTangentInput(f64),

    #[error("jump boundary data is inconsistent: {0}")]
    BoundaryConflict(String),

    #[error("integrand `{0}` has no closed-form recession function")]
    UnsupportedRecession(String),

    #[error("table does not cover the requested point: {0}")]
    TableCoverage(String),

    #[error("structural property violated: {}", .0.join("; "))]
    PropertyViolation(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
