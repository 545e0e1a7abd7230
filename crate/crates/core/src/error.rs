use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file header could not be parsed.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite sample at band {band}, pixel {pixel}")]
    NonFinite { band: usize, pixel: usize },

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid mask ratio: {0}")]
    Ratio(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("training error in parameter block `{block}`: {message}")]
    Training { block: &'static str, message: String },

    #[error("training diverged at epoch {epoch} ({})", match .last_good {
        Some(e) => format!("last good epoch {e}"),
        None => "no finite epoch completed".to_string(),
    })]
    Divergence { epoch: usize, last_good: Option<usize> },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 usage/validation, 3 data error, 4 training divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Ratio(_) | Error::Spec(_) => 2,
            Error::Format { .. }
            | Error::Truncated { .. }
            | Error::Data(_)
            | Error::NonFinite { .. }
            | Error::Bounds(_)
            | Error::Shape(_)
            | Error::Comparison(_) => 3,
            Error::Training { .. } | Error::Divergence { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Io(_) => 1,
        }
    }
}
