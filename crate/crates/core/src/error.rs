use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the world-model pipeline.
#[derive(Debug, Error)]
pub enum ToposError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("input {0} contains no records")]
    EmptyInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown context `{0}`")]
    UnknownContext(String),

    #[error("unknown cover `{0}`")]
    UnknownCover(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("intervention target missing: {0}")]
    MissingTarget(String),

    #[error("substrate error: {0}")]
    Substrate(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ToposError>,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ToposError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags errors with the pipeline stage they came from.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            ToposError::Stage { .. } => e,
            other => ToposError::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}

pub type Result<T> = std::result::Result<T, ToposError>;
