use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("history window has length {actual}, rule expects memory {expected}")]
    WindowLength { expected: usize, actual: usize },

    #[error("user index {user} out of range for a protocol with {users} users")]
    UserOutOfRange { user: usize, users: usize },

    #[error("mission-aware protocols require f_norm(busy) = 0, got {0}")]
    BusyNotZero(f64),

    #[error("protocol cannot guarantee channel capture: {0}")]
    CaptureNotGuaranteed(String),

    #[error("chain has {} closed communicating classes: {classes:?}", classes.len())]
    MultipleClosedClasses { classes: Vec<Vec<usize>> },

    #[error("full outcome chain supports at most {max} users, got {users}")]
    ChainTooLarge { users: usize, max: usize },

    #[error("linear system for the stationary distribution is singular")]
    Singular,

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("delay bound is unbounded because f_norm(failure) = 1")]
    UnboundedDelay,

    #[error("unsupported scenario: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::ProbabilityOutOfRange { name, value })
    }
}

pub(crate) fn check_users(users: usize) -> Result<usize> {
    if users >= 2 {
        Ok(users)
    } else {
        Err(Error::InvalidParameter(format!(
            "number of users must be at least 2, got {users}"
        )))
    }
}
