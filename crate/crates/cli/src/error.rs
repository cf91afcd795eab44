use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, request fields or config keys.
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Incompatible(String),

    #[error(transparent)]
    Core(#[from] hyperedit::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 for anything the caller can fix by changing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Incompatible(_) => 2,
            CliError::Core(
                hyperedit::Error::Config(_)
                | hyperedit::Error::IncompatibleCheckpoints(_)
                | hyperedit::Error::InvalidInput(_)
                | hyperedit::Error::LevelMismatch { .. }
                | hyperedit::Error::UnknownPlugin(_),
            ) => 2,
            _ => 1,
        }
    }

    /// Whether the failure came from the request rather than the server.
    pub fn is_client_error(&self) -> bool {
        self.exit_code() == 2
    }
}
