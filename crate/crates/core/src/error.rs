use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("wavelet/noise pairing error: {0}")]
    Pairing(String),

    #[error("argument {value} outside tabulated range [{lo}, {hi}] at scale {scale}")]
    Range { value: f64, lo: f64, hi: f64, scale: u32 },

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("missing diagnostics for resolution index {0:?}")]
    MissingIndex(Vec<u32>),

    #[error("{0}")]
    Run(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
