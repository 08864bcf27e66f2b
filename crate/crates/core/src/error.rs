use thiserror::Error;

use crate::equilibrium::PicardFailure;
use crate::oseen::OseenFailure;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid body: {0}")]
    InvalidBody(String),

    #[error("body does not fit in the box: {0}")]
    BodyTooLarge(String),

    #[error("fluid region is disconnected ({components} components)")]
    DisconnectedFluid { components: usize },

    #[error("invalid lifting configuration: {0}")]
    InvalidLifting(String),

    #[error("boundary layer of the Leray lifting is not resolved: {message} (smallest admissible eps = {eps_min:.6})")]
    UnresolvableLayer { message: String, eps_min: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{0}")]
    OseenNonConvergence(Box<OseenFailure>),

    #[error("{0}")]
    PicardNonConvergence(Box<PicardFailure>),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("invalid sweep plan: {0}")]
    InvalidSweep(String),

    #[error("invalid norm specification: {0}")]
    InvalidNorm(String),

    #[error("configuration parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),

    #[error("field dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
