use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Malformed or invariant-violating input; `path` locates the offending
    /// field (`skin_weights[12]`, `line 7: state.theta`, ...).
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("missing value: {0}")]
    MissingValue(String),

    #[error("rank deficient system: rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("training failed at step {step}: {message}")]
    TrainingFailure { step: usize, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::EmptyInput(_)
                | Error::MissingValue(_)
        )
    }
}
