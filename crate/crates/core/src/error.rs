use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Each variant names the module it came from
/// so that the CLI can report module-qualified messages and pick an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("records: row {row}, field `{field}`: {message}")]
    InvalidRow {
        row: usize,
        field: String,
        message: String,
    },
    #[error("records: {0}")]
    Records(String),
    #[error("records: unknown format `{0}` (expected csv or json)")]
    UnknownFormat(String),
    #[error("records: task `{task}` not found; available tasks: {available}")]
    UnknownTask { task: String, available: String },
    #[error("binning: {0}")]
    Binning(String),
    #[error("estimators: {0}")]
    Estimator(String),
    #[error("estimators: z-values are degenerate ({0}); use the constant family instead")]
    DegenerateZ(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("design: {0}")]
    Design(String),
    #[error("design: information matrix is numerically singular (condition number {condition:.3e})")]
    SingularInformation { condition: f64 },
    #[error("diagnostics: {0}")]
    Diagnostics(String),
    #[error("diagnostics: design matrix is collinear (condition number {condition:.3e})")]
    Collinear { condition: f64 },
    #[error("synth: {0}")]
    Synth(String),
    #[error("config: {0}")]
    Config(String),
    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (singular systems, non-finite
    /// objectives) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularInformation { .. } | Error::Collinear { .. } | Error::Numerical { .. }
        )
    }

    pub(crate) fn numerical(context: &str, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.to_string(),
            message: message.into(),
        }
    }
}
