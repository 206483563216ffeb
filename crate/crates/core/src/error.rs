//! Library error type.
//!
//! Two failure classes matter to callers: bad input (configuration,
//! malformed trace files) and a simulation that left the numeric domain.
//! The CLI maps the former to exit code 1 and the latter to exit code 2.

use thiserror::Error;

/// Errors produced by scenario loading, simulation, and analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or scenario parameters.
    #[error("configuration: {0}")]
    Config(String),

    /// A state or derivative stopped being finite during integration.
    /// The partial trace up to the previous accepted step is preserved.
    #[error("integration aborted at t = {t} s: generator {generator}: {quantity} is not finite")]
    NonFinite {
        /// Simulation time of the failed step [s].
        t: f64,
        /// Zero-based generator index (leader = 0).
        generator: usize,
        /// Name of the offending state or derived quantity.
        quantity: &'static str,
    },

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// A trace file did not match the documented CSV layout.
    #[error("trace parse: {0}")]
    TraceParse(String),
}

impl Error {
    /// Convenience constructor for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
