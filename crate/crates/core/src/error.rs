use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(&'static str),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("disturbance too large: X (-) R(1) is empty or misses the regulation target")]
    DisturbanceTooLarge,

    #[error("RCIS check failed: {0}")]
    Rcis(String),

    #[error(
        "certificate unavailable: no horizon in [1, {max_horizon}] reaches the contraction bound \
         {bound:.6} (best gamma {best:.6}); consider shrinking the state constraint set to reduce \
         Gamma_max"
    )]
    CertificateUnavailable {
        max_horizon: usize,
        bound: f64,
        best: f64,
    },

    #[error("no valid terminal region: {0}")]
    NoTerminalRegion(String),

    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),

    #[error("controller fault: {0}")]
    ControllerFault(String),

    #[error("unknown preset or built-in plant `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
