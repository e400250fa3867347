use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The double integral of the base kernel underflowed, so the mean-zero
    /// correction cannot be formed.
    #[error("degenerate lengthscale {lengthscale}: kernel double integral over [{lower}, {upper}] underflowed")]
    DegenerateLengthscale { lengthscale: f64, lower: f64, upper: f64 },

    #[error("{}", describe_not_pd(.feature, .max_jitter))]
    NotPositiveDefinite { feature: Option<usize>, max_jitter: f64 },

    #[error("degenerate truncation: interval carries probability mass {mass:e}")]
    DegenerateTruncation { mass: f64 },

    #[error("degenerate decomposition: every component mean is constant on the grid")]
    DegenerateDecomposition,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("non-finite objective at iteration {iteration} (parameters: {snapshot})")]
    NonFiniteObjective { iteration: usize, snapshot: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn describe_not_pd(feature: &Option<usize>, max_jitter: &f64) -> String {
    match feature {
        Some(j) => format!(
            "covariance of feature {j} is not positive definite (jitter escalated to {max_jitter:e})"
        ),
        None => format!("covariance is not positive definite (jitter escalated to {max_jitter:e})"),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs or the
    /// environment.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateLengthscale { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::DegenerateTruncation { .. }
                | Error::DegenerateDecomposition
                | Error::NonFiniteObjective { .. }
        )
    }

    /// Attach the feature index to a factorization failure.
    pub fn for_feature(self, feature: usize) -> Self {
        match self {
            Error::NotPositiveDefinite { max_jitter, .. } => Error::NotPositiveDefinite {
                feature: Some(feature),
                max_jitter,
            },
            other => other,
        }
    }
}
