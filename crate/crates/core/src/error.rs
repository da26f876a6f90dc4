use thiserror::Error;

pub type Result<T> = std::result::Result<T, HermitError>;

#[derive(Debug, Error)]
pub enum HermitError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt input: {malformed} of {total} lines malformed")]
    CorruptInput { malformed: usize, total: usize },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("degenerate range: cannot fit min-max normalizer on constant data ({0})")]
    DegenerateRange(f64),

    #[error("state error: {0}")]
    State(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("graph is complete; no negative pairs available")]
    CompleteGraph,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> HermitError {
    HermitError::InvalidArgument(msg.into())
}
