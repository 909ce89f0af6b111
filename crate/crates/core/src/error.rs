use std::fmt;

/// Broad failure classes. Each maps onto a process exit code and a C ABI status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    ScorerUnavailable,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::ScorerUnavailable => 4,
            ErrorCategory::Numeric => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::ScorerUnavailable => "scorer-unavailable",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("n-gram order {0} outside 1..=4")]
    InvalidOrder(usize),
    #[error("corpus has no items")]
    EmptyCorpus,
    #[error("no reference captions supplied")]
    MissingReference,
    #[error("no candidate for corpus item `{0}`")]
    IncompleteCandidates(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("word id {id} outside vocabulary of size {size}")]
    Vocab { id: usize, size: usize },
    #[error("trace was recorded under different parameters")]
    StaleTrace,
    #[error("trace/target alignment: {0}")]
    Alignment(String),
    #[error("ensemble members disagree: {0}")]
    Ensemble(String),
    #[error("entailment scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidOrder(_) => ErrorCategory::Config,
            Error::ScorerUnavailable(_) | Error::MalformedResponse(_) => ErrorCategory::ScorerUnavailable,
            Error::NonFinite(_) => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
