use std::io;

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error(transparent)]
    Core(#[from] odmr_core::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    /// Malformed or corrupted file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Config(String),
    /// Bad or missing command-line arguments.
    #[error("usage error: {0}")]
    Usage(String),
}

impl ForgeError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(_) => "domain",
            Self::Io(_) => "io",
            Self::Format(_) | Self::Csv(_) => "format",
            Self::Config(_) => "config",
            Self::Usage(_) => "usage",
        }
    }

    /// Process exit code: 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON object for the error stream.
    pub fn machine_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, ForgeError>;

pub(crate) fn format_err(msg: impl Into<String>) -> ForgeError {
    ForgeError::Format(msg.into())
}
