use thiserror::Error;

pub type Result<T, E = DeerError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeerError {
    /// Caller violated a shape or length contract.
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context} at {location}")]
    NonFinite {
        context: &'static str,
        location: String,
    },

    #[error("matrix is numerically singular: pivot {pivot:e} below threshold {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },

    /// The fixed-point iteration blew up.
    #[error("iteration diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl DeerError {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        DeerError::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
