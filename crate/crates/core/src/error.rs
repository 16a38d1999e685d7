use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure{}: {message}", fmt_iteration(*.iteration))]
    NumericFailure {
        message: String,
        iteration: Option<usize>,
    },

    #[error("training failed at iteration {iteration}: loss = {loss}")]
    TrainingFailure { iteration: usize, loss: f64 },

    #[error("patch score failed for slices {indices:?}: {source}")]
    Patch {
        indices: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("reconstruction failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_iteration(iteration: Option<usize>) -> String {
    match iteration {
        Some(i) => format!(" at iteration {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure {
            message: msg.into(),
            iteration: None,
        }
    }

    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: msg.into(),
        }
    }

    /// Innermost error, skipping the patch/step context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Patch { source, .. } | Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the root cause is a numerical problem rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::NumericFailure { .. } | Error::TrainingFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
