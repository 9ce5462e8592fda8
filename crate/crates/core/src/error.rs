use std::path::PathBuf;

use thiserror::Error;

use crate::solver::SolverResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("support {support:?} is rank deficient")]
    SupportInvalid { support: Vec<usize> },

    #[error("sampler stuck: {consecutive} consecutive rank-deficient proposals (state size {state_size})")]
    SamplerStuck {
        consecutive: usize,
        state_size: usize,
    },

    #[error("first-stage solver did not converge after {} sweeps (kkt {:.3e})", .partial.iterations, .partial.kkt_violation)]
    NotConverged { partial: Box<SolverResult> },

    #[error("need at least {needed} samples, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("exact enumeration refused: {0}")]
    Refused(String),

    #[error("no records found in {0}")]
    EmptyInput(PathBuf),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
