use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{0}")]
    Trial(String),
    #[error(transparent)]
    Library(#[from] labelshift::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
