use std::fmt;

/// A gene outside its choice set, or a structural mismatch with the search space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub block: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {} field {}: {}", self.block, self.field, self.message)
    }
}

fn join(vs: &[Violation]) -> String {
    vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {}", join(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("invalid search space: {0}")]
    InvalidSpec(String),
    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: u64,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    ParseLine {
        path: String,
        line: u64,
        message: String,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("no genome satisfies params < {bound} (smallest achievable is {min_params})")]
    Infeasible { bound: u64, min_params: u64 },
    #[error("{0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
