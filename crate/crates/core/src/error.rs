use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingest { row: usize, column: String, message: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("session state error: {0}")]
    State(String),

    #[error("invalid revision: {0}")]
    Validation(String),

    #[error("reviser failed: {0}")]
    Reviser(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
