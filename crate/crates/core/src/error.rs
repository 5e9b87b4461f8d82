use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("pool '{pool}' is empty{context}")]
    EmptyPool { pool: String, context: String },

    #[error("trajectory '{trajectory_id}' step {step}: no task-relevant object keypoint present")]
    MissingKeypoint { trajectory_id: String, step: usize },

    #[error("feature track '{trajectory_id}' has {len} steps; at least 2 required")]
    TrackTooShort { trajectory_id: String, len: usize },

    #[error("budget violation: {0}")]
    BudgetDeficit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("record error at {path}:{line}: {reason}")]
    Record {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("pool '{pool}' violates invariant: {reason}")]
    PoolInvariant { pool: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
