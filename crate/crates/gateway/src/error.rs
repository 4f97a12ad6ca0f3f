use thiserror::Error;

/// Process exit statuses of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const INTERNAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] contestable::Error),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },
    #[error("{0}")]
    Internal(String),
}

pub type GatewayResult<T> = std::result::Result<T, GatewayError>;

impl GatewayError {
    pub fn exit_code(&self) -> i32 {
        use contestable::Error as E;
        match self {
            GatewayError::Usage(_) | GatewayError::ConfigFile { .. } => exit::USAGE,
            GatewayError::Core(E::Config(_)) => exit::USAGE,
            GatewayError::Core(E::Shape { .. } | E::State(_)) => exit::INTERNAL,
            GatewayError::Core(_) | GatewayError::File { .. } => exit::DATA,
            GatewayError::Internal(_) => exit::INTERNAL,
        }
    }

    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        GatewayError::File {
            path: path.display().to_string(),
            source,
        }
    }
}
