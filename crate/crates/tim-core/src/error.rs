//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the transition calculus, the network, and persistence.
#[derive(Debug, Error)]
pub enum TimError {
    /// A time argument fell outside the transport's valid range.
    #[error("time {t} outside transport range [{t_min}, {t_max}]")]
    TimeOutOfRange { t: f64, t_min: f64, t_max: f64 },

    /// A denominator of the transition algebra vanished.
    #[error("degenerate coefficient in {context}: |{value:e}| below threshold")]
    Degenerate { context: &'static str, value: f64 },

    /// A warp function was evaluated at (or beyond) its pole.
    #[error("time warp pole: {warp} is undefined at t = {t}")]
    WarpPole { warp: &'static str, t: f64 },

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Tensor / batch shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value appeared where finite math was required.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// Parameter store layout disagreement (wrong length or manifest).
    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    /// Dataset statistics not available or unusable.
    #[error("dataset statistics: {0}")]
    Stats(String),

    /// Checkpoint encoding/decoding failure.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training aborted on a numeric fault; carries a diagnostic summary.
    #[error("numeric abort at iteration {iteration}: {diagnostic}")]
    NumericAbort { iteration: u64, diagnostic: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TimError>;
