use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("matrix is not positive definite after jitter ({dim}x{dim})")]
    NotPositiveDefinite { dim: usize },

    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("objective is not finite at probe {index} (value {value})")]
    NonFiniteProbe { index: usize, value: f64 },

    #[error("non-finite state encountered in {context}")]
    BlowUp { context: &'static str },

    #[error("state dimension {dim} is too small (need at least {min})")]
    DimTooSmall { dim: usize, min: usize },

    #[error("dimension error: {0}")]
    Dim(String),

    #[error("ensemble of size {0} is too small (need at least 2)")]
    EnsembleTooSmall(usize),

    #[error("3DVar-K requires a time-invariant observation operator")]
    StaticObservationRequired,

    #[error("observation ratio {ratio} with d_x = {dim} observes no components")]
    EmptyObservation { ratio: f64, dim: usize },

    #[error("the Kalman filter oracle is only available for linear systems (got {0})")]
    LinearOnly(String),

    #[error("non-finite gradient for parameter `{0}`")]
    GradientBlowUp(String),

    #[error("training diverged: {0}")]
    DivergedRun(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed data file {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), message: message.into() }
    }

    /// True for failures that mark a training window as diverged rather than a
    /// programming or configuration error.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::GradientBlowUp(_)
                | Error::NonFiniteProbe { .. }
        )
    }
}
