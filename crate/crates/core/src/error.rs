use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GipError>;

#[derive(Debug, Error)]
pub enum GipError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("ingestion error in {}{}: {msg}", file.display(), line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Ingestion {
        file: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("version error: {0}")]
    Version(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("training aborted at step {step} (graphs {batch:?}): {msg}")]
    Training {
        step: usize,
        batch: Vec<usize>,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GipError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        GipError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
