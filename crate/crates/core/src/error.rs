use thiserror::Error;

/// Errors raised by the solver library.
///
/// Every variant names the module that raised it and, where meaningful, the
/// grid or step index involved.
#[derive(Debug, Error)]
pub enum VpfpError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {module}: expected {expected}, got {got}")]
    Dimension {
        module: &'static str,
        expected: String,
        got: String,
    },

    #[error("range error in {module}: {detail}")]
    Range {
        module: &'static str,
        detail: String,
    },

    #[error("singular system in {module} at index {index}: {detail}")]
    Singular {
        module: &'static str,
        index: usize,
        detail: String,
    },

    #[error("basis not orthonormal in {module}: Gram deviation {deviation:.3e}")]
    NotOrthonormal {
        module: &'static str,
        deviation: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("at time step {step}: {source}")]
    AtStep { step: usize, source: Box<VpfpError> },
}

impl VpfpError {
    pub(crate) fn dim(module: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        VpfpError::Dimension {
            module,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures caused by bad input configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            VpfpError::AtStep { source, .. } => source.is_config(),
            other => matches!(other, VpfpError::Config(_) | VpfpError::Dimension { .. }),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        VpfpError::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, VpfpError>;
