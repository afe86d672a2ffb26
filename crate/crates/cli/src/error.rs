use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a latent file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported latent file version {version}")]
    BadVersion { path: PathBuf, version: u16 },
    #[error("{path}: declared shape {dims:?} overflows or disagrees with the file size")]
    ShapeOverflow { path: PathBuf, dims: [u32; 4] },
    #[error("cannot render {0} channels (supported: 1, 3, 4)")]
    UnsupportedChannels(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{} check(s) failed:\n  {}", .0.len(), .0.join("\n  "))]
    CheckFailed(Vec<String>),
    #[error(transparent)]
    Core(#[from] elevator_core::Error),
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
