use thiserror::Error;

/// Errors surfaced by the library.
///
/// The CLI maps these onto exit codes: `Config` is a usage error (1),
/// `Shape`/`Data`/`Io`/`Json` are data errors (2), `Numeric` is a numeric
/// failure (3).
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor shape or index violated an operator precondition.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value or unparseable config document.
    #[error("config error: {0}")]
    Config(String),

    /// Bad or missing input data (files, datasets, checkpoints).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or a failed numeric verification.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
