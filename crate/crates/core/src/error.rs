use std::fmt;

/// Errors produced while parsing, validating and planning.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("coupling constraint violated for class [{}]: {detail}", .class.join(", "))]
    Constraint { class: Vec<String>, detail: String },

    #[error("channel bound violated for `{layer}`: {value} not in [1, {max}]")]
    Bound { layer: String, value: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("stats do not cover layer `{layer}`: {detail}")]
    Coverage { layer: String, detail: String },

    #[error("stats shape mismatch for `{layer}`: expected {expected} scores, got {got}")]
    Shape { layer: String, expected: usize, got: usize },

    #[error("group {group} has zero output channels")]
    DegeneratePartition { group: usize },

    #[error("infeasible budget: {budget} flops is below the minimal network cost of {minimum} flops")]
    Infeasible { budget: u64, minimum: u64 },

    #[error("importance provider failed in round {round}: {source}")]
    Provider {
        round: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable tag for the error category.
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorCode::FileNotFound,
            Error::Io { .. } => ErrorCode::Io,
            Error::Parse { .. } | Error::Graph(_) | Error::Coverage { .. } | Error::Shape { .. } => ErrorCode::Parse,
            Error::Infeasible { .. } => ErrorCode::Infeasible,
            Error::Constraint { .. }
            | Error::Bound { .. }
            | Error::Partition(_)
            | Error::DegeneratePartition { .. } => ErrorCode::Constraint,
            Error::Domain(_) => ErrorCode::Domain,
            Error::Provider { .. } => ErrorCode::Provider,
        }
    }
}

/// Error categories, each mapped to a distinct process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Usage,
    FileNotFound,
    Io,
    Parse,
    Infeasible,
    Constraint,
    Domain,
    Provider,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Usage => "usage",
            ErrorCode::FileNotFound => "file-not-found",
            ErrorCode::Io => "io",
            ErrorCode::Parse => "parse",
            ErrorCode::Infeasible => "infeasible",
            ErrorCode::Constraint => "constraint",
            ErrorCode::Domain => "domain",
            ErrorCode::Provider => "provider",
        }
    }

    pub fn exit_status(self) -> i32 {
        match self {
            ErrorCode::Usage => 2,
            ErrorCode::FileNotFound => 3,
            ErrorCode::Io => 4,
            ErrorCode::Parse => 5,
            ErrorCode::Infeasible => 6,
            ErrorCode::Constraint => 7,
            ErrorCode::Domain => 8,
            ErrorCode::Provider => 9,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
