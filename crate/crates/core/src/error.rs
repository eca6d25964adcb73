use thiserror::Error;

/// Errors produced by the bandit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("arm index {index} out of range for {arms} arms")]
    ArmOutOfRange { index: usize, arms: usize },

    #[error("matrix is not positive definite after jitter retry ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("polyhedron is infeasible")]
    Infeasible,

    #[error("polyhedron is unbounded")]
    Unbounded,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("run {run}, task {task}, round {round}: {source}")]
    AtCoordinate {
        run: usize,
        task: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    InRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ (Error::InRound { .. } | Error::AtCoordinate { .. }) => e,
            e => Error::InRound {
                round,
                source: Box::new(e),
            },
        }
    }

    /// Attaches `(run, task)`; the round is taken from an inner
    /// [`Error::InRound`] when present and is 0 otherwise.
    pub(crate) fn locate(self, run: usize, task: usize) -> Self {
        match self {
            e @ Error::AtCoordinate { .. } => e,
            Error::InRound { round, source } => Error::AtCoordinate {
                run,
                task,
                round,
                source,
            },
            e => Error::AtCoordinate {
                run,
                task,
                round: 0,
                source: Box::new(e),
            },
        }
    }
}
