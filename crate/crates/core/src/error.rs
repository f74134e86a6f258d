use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge within {iterations} iterations (last change {last_change:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("{what} has {size} entries, above the configured limit of {limit}")]
    Capacity {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("failed to generate {what} after {attempts} attempts")]
    Generation { what: &'static str, attempts: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("training of variant {variant} diverged at episode {episode}")]
    Diverged { variant: String, episode: usize },

    #[error("runs are not comparable: {0}")]
    Comparability(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
