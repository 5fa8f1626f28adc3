use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },

    #[error("hazard value {0} outside [0, 1]")]
    HazardOutOfRange(f64),

    #[error("cannot step a dead agent")]
    DeadAgent,

    #[error("action {action} outside 0..{n_actions}")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("unknown agent {0}")]
    UnknownAgent(usize),

    #[error("transition id {0} already present in the buffer")]
    DuplicateTransition(u64),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter layout mismatch")]
    LayoutMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("episode {0} has no recorded outcome")]
    MissingOutcome(u64),

    #[error("total absolute TD mass over the subset is zero")]
    ZeroTdMass,

    #[error("rank correlation undefined for a constant list")]
    ConstantInput,

    #[error("cluster {cluster} has {alive} alive members, {needed} required")]
    NotEnoughAlive {
        cluster: usize,
        alive: usize,
        needed: usize,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
