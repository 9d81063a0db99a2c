use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("value outside domain: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("not an equilibrium: residual {residual:e} exceeds {tolerance:e}")]
    NotEquilibrium { residual: f64, tolerance: f64 },
    #[error("singular derivative at boundary for item {item}")]
    Singular { item: usize },
    #[error("size error: {0}")]
    Size(String),
    #[error("integration left the simplex at t={time}: {detail}")]
    StepSize { time: f64, detail: String },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("schema error in {file} row {row}: {message}")]
    Schema {
        file: String,
        row: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
