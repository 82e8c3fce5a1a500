use thiserror::Error;

/// Errors produced anywhere in the audit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible domain (s, t, expression range, ...).
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// A face model violates one of its structural invariants.
    #[error("invalid face model: {0}")]
    ModelValidation(String),

    /// A model container could not be decoded.
    #[error("malformed model container: {0}")]
    ModelFormat(String),

    #[error("render error: {0}")]
    Render(String),

    /// Configuration values that are inconsistent or out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A statistical test received input without any variance to test.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The objective returned NaN or infinity.
    #[error("objective returned {value} at {point:?}")]
    NonFiniteObjective { value: f64, point: Vec<f64> },

    /// A classifier evaluation failed for a specific intervention cell.
    #[error("classifier failed at s={s}, t={t}: {source}")]
    Cell {
        s: f64,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    /// Retryable failure talking to a bridge process.
    #[error("transport error: {0}")]
    Transport(String),

    /// The peer sent a frame that violates the wire protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("classifier does not declare label `{0}`")]
    UnknownLabel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the transport to a bridge, looking through
    /// per-cell wrappers.
    pub fn is_transport(&self) -> bool {
        match self {
            Error::Transport(_) | Error::Protocol(_) => true,
            Error::Cell { source, .. } => source.is_transport(),
            _ => false,
        }
    }

    /// True only for transport failures, which are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Cell { source, .. } => source.is_retryable(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
