use std::path::PathBuf;

/// Failure of a pipeline step, mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] emm_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    FormatIn { path: PathBuf, source: FormatError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format_in(path: impl Into<PathBuf>, source: FormatError) -> Self {
        AppError::FormatIn {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use emm_core::Error as E;
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::Io { .. } => 3,
            AppError::Format(_) | AppError::FormatIn { .. } => 6,
            AppError::Core(e) => match e {
                E::Config(_) | E::Usage(_) | E::TailMismatch { .. } | E::NotApplicable => 2,
                E::Data(_) | E::TaskMismatch(_) | E::Undefined(_) => 3,
                E::NoCommonStructure { .. } => 4,
                E::Dimension(_) | E::EncoderMismatch { .. } => 5,
                E::NonFiniteLoss { .. } | E::NonFinite(_) => 1,
            },
        }
    }
}

/// Problems reading a model file.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("not a model file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file ends early while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
