use std::fmt;

/// CLI failure classes, mapped onto process exit codes:
/// 2 = configuration error, 3 = data error, 4 = numeric failure.
#[derive(Debug)]
pub enum AppError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numeric(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(msg) => write!(f, "configuration error: {msg}"),
            AppError::Data(msg) => write!(f, "data error: {msg}"),
            AppError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<limark::Error> for AppError {
    fn from(e: limark::Error) -> Self {
        AppError::Numeric(e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;
