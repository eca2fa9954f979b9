//! Error taxonomy shared by every module in the crate.
//!
//! The split mirrors who is at fault: `Domain` for arguments outside an
//! operation's contract, `Contract` for incompatible data fed between
//! pipeline stages, `Config`/`Validation` for scenario files, `Corrupt`
//! for damaged persisted artifacts, `Ingest` for external measurement
//! files. Fit failures and solver non-convergence are *not* errors; they
//! are explicit markers on results so batch runs keep going.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's stated domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two pieces of pipeline data do not belong together (grid mismatch,
    /// un-normalized input where normalized is required, and so on).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A scenario file could not be parsed.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario parsed but its values are inconsistent or unsafe.
    #[error("validation error: {0}")]
    Validation(String),

    /// A persisted artifact is damaged or truncated.
    #[error("corrupt artifact: {0}")]
    Corrupt(String),

    /// An external measurement file was rejected. `row` is 1-based.
    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
