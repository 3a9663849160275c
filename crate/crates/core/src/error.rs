use thiserror::Error;

/// Errors raised by the fitting, prediction and data layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown level `{level}` for categorical variable `{variable}`")]
    UnknownLevel { variable: String, level: String },

    #[error("covariate `{0}` has the wrong kind for this tree")]
    CovariateKind(String),

    #[error("invalid node {0}")]
    InvalidNode(usize),

    #[error("edit rejected: {0}")]
    EditRejected(String),

    #[error("zero predicted variance with residual {residual} in leaf {leaf}")]
    ZeroVariance { leaf: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
