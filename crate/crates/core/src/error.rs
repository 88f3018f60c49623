use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unlabelable dialogue: {0}")]
    Unlabelable(String),
    #[error("node {0} has an empty neighbourhood")]
    EmptyNeighbourhood(usize),
    #[error("no embedding for relation id {0}")]
    MissingRelation(usize),
    #[error("unknown entity id {0}")]
    UnknownEntity(usize),
    #[error("unknown relation id {0}")]
    UnknownRelation(usize),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    Shape { what: String, expected: (usize, usize), found: (usize, usize) },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
