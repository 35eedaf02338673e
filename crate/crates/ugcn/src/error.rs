use std::path::{Path, PathBuf};

/// Errors from file handling, configuration and experiments.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: parse error: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{}: schema mismatch: {msg}", path.display())]
    SchemaMismatch { path: PathBuf, msg: String },
    #[error("{}: non-finite value in frame {frame}", path.display())]
    NonFiniteValue { path: PathBuf, frame: usize },
    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),
    #[error(transparent)]
    Core(#[from] ugcn_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use ugcn_core::Error as C;
        match self {
            Self::Config(_) => exit::CONFIG,
            Self::GradCheckFailed(_) => exit::NUMERIC,
            Self::Core(C::InvalidConfig(_) | C::IntervalTooLarge { .. } | C::InvalidParams(_) | C::InvalidMirror(_)) => {
                exit::CONFIG
            }
            Self::Core(C::NonFiniteLoss { .. }) => exit::NUMERIC,
            _ => exit::DATA,
        }
    }
}
