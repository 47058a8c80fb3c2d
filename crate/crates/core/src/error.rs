use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary shortfall: requested {requested} words but the stream has only {available} distinct words")]
    VocabularyShortfall { requested: usize, available: usize },

    #[error("no in-vocabulary co-occurrences: {0}")]
    EmptyStream(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max |M - M^T| = {max_deviation:e})")]
    Asymmetric { max_deviation: f64 },

    #[error("reweighting scheme is asymmetric; use the weighted path instead ({0})")]
    AsymmetricReweight(String),

    #[error(
        "eigenvalue {value:e} of mode {mode} is negative; only {non_negative} of the computed eigenvalues are non-negative"
    )]
    NegativeEigenvalue { mode: usize, value: f64, non_negative: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("out-of-vocabulary words: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),

    #[error("integration diverged at t = {time}: loss kept increasing after {halvings} step halvings")]
    Divergence { time: f64, halvings: usize },

    #[error("non-finite embedding entries after step {step}")]
    NonFinite { step: usize },

    #[error("matrix of dimension {dim} exceeds the configured cap of {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
