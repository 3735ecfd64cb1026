use thiserror::Error;

/// Errors produced by the dereverberation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed at {context}: {reason} (condition estimate {condition:.3e})")]
    Solver {
        context: String,
        reason: String,
        condition: f64,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("missing compressed data from node {neighbor}")]
    MissingData { neighbor: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("time lag undefined: {0}")]
    UndefinedLag(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    /// Prefixes the error with the location it was raised from.
    pub fn context(self, ctx: impl AsRef<str>) -> Self {
        let ctx = ctx.as_ref();
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Solver {
                context,
                reason,
                condition,
            } => Error::Solver {
                context: format!("{ctx}, {context}"),
                reason,
                condition,
            },
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::Protocol(m) => Error::Protocol(format!("{ctx}: {m}")),
            Error::UndefinedLag(m) => Error::UndefinedLag(format!("{ctx}: {m}")),
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{ctx}: {m}")),
            e @ Error::MissingData { .. } => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
