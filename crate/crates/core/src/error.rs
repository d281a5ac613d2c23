use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// Each variant maps to a stable process exit code through [`CirError::exit_code`].
#[derive(Debug, Error)]
pub enum CirError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Non-finite loss during training, with the global iteration index.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
}

impl CirError {
    /// 0 success, 2 user/config error, 3 IO error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CirError::Io(_) => 3,
            CirError::Numeric(_) | CirError::Diverged { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CirError>;

pub(crate) fn config_err(msg: impl Into<String>) -> CirError {
    CirError::Config(msg.into())
}

pub(crate) fn shape_err(msg: impl Into<String>) -> CirError {
    CirError::Shape(msg.into())
}
