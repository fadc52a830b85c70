use std::io;
use std::path::PathBuf;

use spnet_core::multiview::MultiviewError;
use spnet_core::nn::NnError;
use spnet_core::render::RenderError;
use spnet_core::MeshError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: {msg}")]
    Config { path: PathBuf, line: usize, msg: String },
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("stage `{stage}` needs {missing}; run `spnet {producer}` first")]
    StageDependency { stage: &'static str, missing: PathBuf, producer: &'static str },
    #[error("{0}")]
    Mesh(#[from] MeshError),
    #[error("{0}")]
    Render(#[from] RenderError),
    #[error("{0}")]
    Nn(#[from] NnError),
    #[error("{0}")]
    Multiview(#[from] MultiviewError),
    #[error("{0}")]
    Png(#[from] png::EncodingError),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0} record(s) failed")]
    Records(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
