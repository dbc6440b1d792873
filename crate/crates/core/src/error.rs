use std::io;

use thiserror::Error;

use crate::spectral::EigenPair;

pub type Result<T, E = MscError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MscError {
    #[error("index {index} out of range for mode {mode} of size {size}")]
    Range { mode: usize, index: usize, size: usize },

    #[error("invalid mode {0}, expected 1, 2 or 3")]
    InvalidMode(usize),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last: EigenPair,
    },

    #[error("mode {mode}, slice {index}: {source}")]
    Slice {
        mode: usize,
        index: usize,
        #[source]
        source: Box<MscError>,
    },

    #[error("rank {rank}: {source}")]
    Rank {
        rank: usize,
        #[source]
        source: Box<MscError>,
    },

    #[error("startup error: {0}")]
    Startup(String),

    #[error("communication error: {0}")]
    Comm(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MscError {
    pub fn at_slice(self, mode: usize, index: usize) -> Self {
        MscError::Slice {
            mode,
            index,
            source: Box::new(self),
        }
    }

    pub fn at_rank(self, rank: usize) -> Self {
        MscError::Rank {
            rank,
            source: Box::new(self),
        }
    }

    /// Strips rank/slice annotations.
    pub fn root_cause(&self) -> &MscError {
        match self {
            MscError::Slice { source, .. } | MscError::Rank { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
