use thiserror::Error;

use crate::cube::CellId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown cell id {0}")]
    UnknownCell(CellId),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("no candidate cells remain")]
    Exhausted,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("exhaustive search needs {required} subset evaluations, above the limit of {limit}")]
    SearchTooLarge { required: u128, limit: u128 },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
