use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter specification: {0}")]
    InvalidSpec(String),

    #[error("empty input")]
    EmptyInput,

    #[error("decimation ratio {from_hz} Hz -> {to_hz} Hz is not an integer")]
    NonIntegerRatio { from_hz: f64, to_hz: f64 },

    #[error("channel '{0}' is constant and cannot be standardized")]
    ConstantChannel(String),

    #[error("channel count mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("warp path out of range: {0}")]
    PathOutOfRange(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unknown phoneme label '{0}'")]
    UnknownLabel(String),

    #[error("utterance '{0}' contains no speech spans")]
    AllSilence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear system is singular or not positive definite")]
    Singular,

    #[error("zero-variance input to correlation")]
    ZeroVariance,

    #[error("fisher transform undefined for |r| = 1")]
    FisherDomain,

    #[error("cannot form {folds} folds from {sentences} sentences")]
    TooFewSentences { sentences: usize, folds: usize },

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("results were computed under different fold plans")]
    FoldPlanMismatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
