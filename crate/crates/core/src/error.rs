use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {field} = {value} (sides must be positive and all coordinates finite)")]
    InvalidBox { field: &'static str, value: f64 },

    #[error("raster resolution {0} is below the minimum of 16")]
    ResolutionTooSmall(usize),

    #[error("finite-difference step {step} would make {field} non-positive")]
    DegeneratePerturbation { field: &'static str, step: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("unknown loss variant `{0}`")]
    UnknownLoss(String),

    #[error("IOU tensor needs {needed} bytes, over the {budget}-byte budget; use streaming mode")]
    MemoryBudget { needed: u64, budget: u64 },

    #[error("config: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
