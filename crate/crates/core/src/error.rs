use thiserror::Error;

/// A single violated invariant, keyed by the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid profile `{name}`: {}", join(.violations))]
    InvalidProfile { name: String, violations: Vec<Violation> },

    #[error("invalid platform: {}", join(.0))]
    InvalidPlatform(Vec<Violation>),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid limits: {0}")]
    InvalidLimits(String),

    #[error("ways {ways} out of range 1..={total}")]
    WaysOutOfRange { ways: u32, total: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("LQoS unreachable: {0}")]
    Unreachable(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
