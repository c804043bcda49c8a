use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] r2audit_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("journal entry {seq}: {reason}")]
    Tampered { seq: u64, reason: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("version conflict: request expected version {expected}, audit is at {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    /// Process exit code: 2 for usage errors, 3 for data errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use r2audit_core::Error as E;
        match self {
            ServiceError::Usage(_)
            | ServiceError::Core(E::Usage(_) | E::Domain(_) | E::Config(_)) => 2,
            ServiceError::Core(E::Data { .. } | E::Invariant(_))
            | ServiceError::Io(_)
            | ServiceError::Json(_)
            | ServiceError::Tampered { .. }
            | ServiceError::NotFound(_) => 3,
            _ => 1,
        }
    }
}
