use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged in {stage} at epoch {epoch}")]
    Divergence { stage: String, epoch: usize },
    #[error("{file}:{row}: {message}")]
    Ingestion { file: String, row: usize, message: String },
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("query drugs are not connected: {0:?}")]
    Disconnected(Vec<Vec<usize>>),
    #[error("unknown drug id {0}")]
    UnknownDrug(usize),
    #[error("format: {0}")]
    Format(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
