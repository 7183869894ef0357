use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid argument (ranges, shapes described in the message).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Shapes of two objects do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A Gram matrix was numerically singular.
    #[error("singular system: smallest eigenvalue {min_eig:.3e} (largest {max_eig:.3e})")]
    Singular { min_eig: f64, max_eig: f64 },

    /// An iterative routine exhausted its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A closed-form bound was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exact routine was called beyond its guarded size.
    #[error("size guard: {0}")]
    SizeGuard(String),

    /// File or serialization failure in the experiment harness.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}
