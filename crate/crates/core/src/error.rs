use thiserror::Error;

/// Errors raised by the discovery and transfer machinery.
#[derive(Debug, Error)]
pub enum SlideError {
    /// A distribution, parameter vector or network does not match its schema.
    #[error("structural error in `{param}`: {reason}")]
    Structural { param: String, reason: String },

    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was applied in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),

    /// A loss or gradient became NaN or infinite; the step was not applied.
    #[error("non-finite value in {0}; update aborted")]
    NonFinite(String),

    /// Not enough data yet (e.g. replay buffer below batch size). Retryable.
    #[error("not ready: {0}")]
    NotReady(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Error raised inside the discovery loop, tagged with the iteration.
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: u64,
        #[source]
        source: Box<SlideError>,
    },
}

impl SlideError {
    pub fn structural(param: impl Into<String>, reason: impl Into<String>) -> Self {
        SlideError::Structural {
            param: param.into(),
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SlideError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn at_iteration(self, iteration: u64) -> Self {
        match self {
            e @ SlideError::AtIteration { .. } => e,
            e => SlideError::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping iteration context.
    pub fn root(&self) -> &SlideError {
        match self {
            SlideError::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, SlideError>;
