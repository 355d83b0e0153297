//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by model construction, fitting, sampling, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated its precondition (non-positive bandwidth,
    /// oversized stencil radius, invalid clamp indices, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violated an invariant (non-finite entries, empty matrix,
    /// dimension mismatch, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// Sinkhorn scaling failed to reach the requested tolerance.
    /// `coordinate` identifies the offending local bridge when the failure
    /// occurred inside a per-coordinate fit.
    #[error("Sinkhorn did not converge after {iterations} iterations (residual {residual:.3e}{})",
            coordinate.map(|a| format!(", coordinate {a}")).unwrap_or_default())]
    SinkhornDiverged {
        residual: f64,
        iterations: usize,
        coordinate: Option<usize>,
    },

    /// A dense linear-algebra routine failed (eigendecomposition,
    /// factorization of a precision matrix, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A chain state left the guarded region (|x| > 1e6) or became
    /// non-finite; carries the step index at which it happened.
    #[error("chain blew up at step {step}")]
    BlowUp { step: usize },

    /// File I/O failure, annotated with the path involved.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A persisted file failed validation (bad magic, truncated payload,
    /// version mismatch, dataset hash mismatch, ...).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
