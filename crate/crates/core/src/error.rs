use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown muscle `{0}`")]
    UnknownMuscle(String),

    #[error("numerical fault at t = {t:.4} s: {detail}")]
    NumericalFault { t: f64, detail: String },

    #[error("planning failure: {0}")]
    PlanningFailure(String),

    #[error("Gram matrix not positive definite after jitter {jitter:e} (n = {n}, min diagonal {min_diag:e})")]
    NotPositiveDefinite { jitter: f64, n: usize, min_diag: f64 },

    #[error("no balanced trials to analyze")]
    NoBalancedTrials,

    #[error("trial log mismatch: {0}")]
    LogMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
