use thiserror::Error;

use crate::convex::SolveState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver returned {state:?} while solving {context}")]
    Solver { context: String, state: SolveState },

    #[error("integration diverged after t = {last_valid_time}")]
    Divergence { last_valid_time: f64 },

    #[error("assignment {0} carries no moment block")]
    MissingMomentBlock(usize),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn mismatch(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
