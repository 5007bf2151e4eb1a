use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems with the binary containers (`QTNW` checkpoints, `QTNS` slices).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("file truncated: needed {needed} bytes, only {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("unknown dtype code {0}")]
    DType(u8),
    #[error("unknown record kind {0}")]
    Kind(u8),
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("invalid class id {value} at pixel {index}")]
    InvalidClass { value: u8, index: usize },
    #[error("malformed record: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("manifest: {0}")]
    ManifestInvalid(String),

    #[error("split leakage: patient {patient} appears in both {first} (row {first_row}) and {second} (row {row})")]
    SplitLeakage {
        patient: String,
        first: String,
        first_row: usize,
        second: String,
        row: usize,
    },

    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at epoch {epoch} (non-finite loss); last good checkpoint: {}",
        last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Divergence { epoch: usize, last_good: Option<PathBuf> },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("ROC for class {class} needs both positive and negative pixels")]
    SingleClass { class: usize },

    #[error("infer-mode batch norm requires populated running statistics")]
    MissingRunningStats,

    #[error("gradient check: {0}")]
    GradCheck(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }

    /// True for problems with user-supplied data or files (as opposed to
    /// runtime failures such as divergence or an unwritable output).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Manifest { .. }
                | Error::ManifestInvalid(_)
                | Error::SplitLeakage { .. }
                | Error::Shape(_)
                | Error::Empty(_)
                | Error::Config(_)
        )
    }
}
