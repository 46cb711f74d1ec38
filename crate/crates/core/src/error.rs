//! Error taxonomy shared by the whole pipeline.

use thiserror::Error;

/// Errors raised by any pipeline stage.
///
/// The variants map onto the CLI exit-code scheme: I/O-shaped problems
/// (missing or malformed input files, bad checkpoints) exit with code 2,
/// configuration problems with code 3 and numerical failures with code 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A file failed to parse; `line` is 1-based and includes the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input violated the documented file schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input parsed but carried invalid values (non-finite, negative mass, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A configuration value is out of its documented range.
    #[error("config error: {0}")]
    Config(String),

    /// An algorithm parameter is invalid (e.g. non-positive gamma).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Matrix/vector shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Numerical failure: solver non-convergence, divergence, non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Checkpoint file is unreadable, corrupted or of an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class: 2 I/O, 3 config, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::Data(_)
            | Error::Checkpoint(_) => 2,
            Error::Config(_) | Error::Parameter(_) | Error::Dimension(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
