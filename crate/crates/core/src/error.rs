use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("agent index {index} out of range for {n_agents} agents")]
    AgentOutOfRange { index: usize, n_agents: usize },

    #[error("self-loop on agent {0} is not allowed")]
    SelfLoop(usize),

    #[error("base topology is not connected")]
    BaseDisconnected,

    #[error("window starting at step {window_start} failed joint connectivity after {attempts} attempts")]
    CertificationFailed {
        window_start: usize,
        attempts: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("agent {agent} would transmit negative state {value} under the abort policy")]
    NegativeStateUnderAbortPolicy { agent: usize, value: f64 },

    #[error("inadmissible step-size schedule: {0}")]
    InadmissibleSchedule(String),

    #[error("explicit step-size schedule has no value for step {0}")]
    ScheduleExhausted(usize),

    #[error("horizon too short to bound products: {0}")]
    HorizonTooShort(String),

    #[error("scenarios differ outside the swept field `{sweep}`: {paths:?}")]
    ScenarioMismatch { sweep: String, paths: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
