use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the two-stage pipeline.
///
/// The variants map one-to-one onto the CLI exit-code classes: `Domain`,
/// `Input` and `Format` are caller problems, `Numerical` means a sampler
/// produced a non-finite value.
#[derive(Debug, Error)]
pub enum H2sError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported bank format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage 1 failed for group(s) {group_ids:?}: {first}")]
    Stage1Failed { group_ids: Vec<u64>, first: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl H2sError {
    pub fn domain(msg: impl Into<String>) -> Self {
        H2sError::Domain(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        H2sError::Input(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        H2sError::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        H2sError::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by malformed input rather than by a sampler.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, H2sError::Numerical(_))
    }
}

pub type Result<T, E = H2sError> = std::result::Result<T, E>;
