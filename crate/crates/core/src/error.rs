use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fully-visible Boltzmann machine needs 1 <= p <= 12, got p = {0}")]
    VisibleUnitsOutOfRange(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("state space is not the binary hypercube {{0,1}}^p: {0}")]
    NonBinaryStateSpace(String),

    #[error("parameter {0:?} lies outside the box")]
    OutsideBox(Vec<f64>),

    #[error("kernel is not reversible with respect to p_theta (worst detailed-balance gap {0:e})")]
    NotReversible(f64),

    #[error("kernel power needs m >= 1")]
    NonPositivePower,

    #[error("state {0:?} is not in the state space")]
    UnknownState(Vec<i32>),

    #[error("state index {index} out of range for {states} states")]
    StateIndexOutOfRange { index: usize, states: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("maximum likelihood estimate does not exist: {0}")]
    MleNonExistent(String),

    #[error("hypotheses unmet: {0}")]
    HypothesesUnmet(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("cannot write to {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
