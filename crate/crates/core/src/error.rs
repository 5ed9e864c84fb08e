use thiserror::Error;

use crate::soc::AoReport;

/// Errors raised by the model, solver and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions or malformed structural input.
    #[error("structural error: {0}")]
    Structure(String),

    /// A documented precondition does not hold (e.g. R not positive definite).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A recursion produced a non-finite value or lost positive definiteness.
    #[error("numerical blow-up in {stage} at t = {t}")]
    NumericalBlowup { stage: &'static str, t: usize },

    /// Alternating optimization hit its sweep cap.
    #[error("alternating optimization did not converge after {} sweeps", .report.sweeps)]
    NonConvergence { report: Box<AoReport> },

    /// A VAF denominator is zero for the named channel.
    #[error("degenerate channel {channel}: ground-truth values are constant over time")]
    DegenerateChannel { channel: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structure(msg: impl Into<String>) -> Error {
    Error::Structure(msg.into())
}
