use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no full window: {len} samples available, window length is {window}")]
    NoFullWindow { len: usize, window: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid stream {source_id}: {reason}")]
    InvalidStream { source_id: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Manifest { path: PathBuf, msg: String },

    #[error("{}: class ids must be contiguous from 1, class {missing} is missing", path.display())]
    NonContiguousClasses { path: PathBuf, missing: u32 },

    #[error("{}: referenced data file not found: {}", manifest.display(), file.display())]
    DanglingReference { manifest: PathBuf, file: PathBuf },

    #[error("{}: missing column \"{column}\"", path.display())]
    MissingColumn { path: PathBuf, column: String },

    #[error("{}: non-numeric value {value:?} at row {row}, column \"{column}\"", path.display())]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{}: unequal stream lengths ({detail})", path.display())]
    UnequalLengths { path: PathBuf, detail: String },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("recording {file_id}: source \"{source_id}\" not present")]
    MissingSource { file_id: String, source_id: String },

    #[error("inconsistent source sets: {0}")]
    InconsistentSources(String),

    #[error("split: {0}")]
    Split(String),

    #[error("data leakage: {0}")]
    Leakage(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("binary format: {0}")]
    Format(String),
}

impl Error {
    /// Stable short name of the variant, for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoFullWindow { .. } => "no_full_window",
            Error::Config(_) => "config",
            Error::InvalidStream { .. } => "invalid_stream",
            Error::Io { .. } => "io",
            Error::Manifest { .. } => "manifest",
            Error::NonContiguousClasses { .. } => "non_contiguous_classes",
            Error::DanglingReference { .. } => "dangling_reference",
            Error::MissingColumn { .. } => "missing_column",
            Error::NonNumeric { .. } => "non_numeric",
            Error::UnequalLengths { .. } => "unequal_lengths",
            Error::Csv { .. } => "csv",
            Error::MissingSource { .. } => "missing_source",
            Error::InconsistentSources(_) => "inconsistent_sources",
            Error::Split(_) => "split",
            Error::Leakage(_) => "leakage",
            Error::Divergence { .. } => "divergence",
            Error::Shape(_) => "shape",
            Error::Format(_) => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
