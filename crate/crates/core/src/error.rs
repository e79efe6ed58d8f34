//! Error type shared by every module of the toolkit.

use thiserror::Error;

/// Failures raised by linear algebra, model evaluation, adapter handling and
/// the analyses built on top of them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes.
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension { op: &'static str, lhs: String, rhs: String },

    /// A primitive was evaluated at a point where it is not differentiable
    /// (for example RMS normalisation of the zero vector).
    #[error("degenerate input to {op}: {detail}")]
    Degenerate { op: &'static str, detail: String },

    /// A caller-supplied value is out of range (token ids, grids, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration field is missing or invalid.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An adapter targets a site the model does not have, or has the wrong
    /// shape for that site.
    #[error("invalid site {site}: {reason}")]
    Site { site: String, reason: String },

    /// An activation trace was used with a model or input it was not
    /// recorded from.
    #[error("stale trace: {0}")]
    Stale(String),

    /// A log-log fit was requested with fewer than two usable rows.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A non-finite value appeared where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Malformed serialized model, adapter, config or report.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: impl Into<String>, rhs: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
