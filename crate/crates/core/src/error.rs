use thiserror::Error;

/// Errors produced anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vector norm {0:e} is too small to normalize")]
    DegenerateNorm(f64),
    #[error("id mismatch: {0}")]
    IdMismatch(String),
    #[error("no valid partition: {0}")]
    NoValidPartition(String),
    #[error("labels required: {0}")]
    LabelsRequired(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
