use thiserror::Error;

/// Errors raised anywhere in the extraction / training / scoring pipeline.
#[derive(Debug, Error)]
pub enum HrgError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("rule not in grammar: {0}")]
    UnknownRule(String),

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("tree likelihood is zero; unknown rules need smoothing")]
    ZeroLikelihood,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HrgError>;
