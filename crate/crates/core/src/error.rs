use thiserror::Error;

/// Errors raised by the simulator, the attack pipeline and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("row {row} is at the edge of the row address space and has no neighbor on the {side} side")]
    Edge { row: u32, side: &'static str },

    #[error("calibration infeasible at {temp} °C: target {target:.3} flips exceeds the {available} vulnerable cells")]
    Calibration { temp: i32, target: f64, available: u64 },

    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),

    #[error("observed row adjacency matches no known mapping (best match fraction {best:.3})")]
    UnknownMapping { best: f64 },

    #[error("unknown temperature: {0}")]
    UnknownTemperature(String),

    #[error("underdetermined fit: need at least 4 distinct temperatures, got {0}")]
    Underdetermined(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fingerprint mismatch: donor is manufacturer {donor}, victim is manufacturer {victim}")]
    FingerprintMismatch { donor: String, victim: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
