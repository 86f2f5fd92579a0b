use thiserror::Error;

/// Errors produced by solvers, metrics and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (non-finite input,
    /// unnormalized measure, bad index, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration (e.g. restricted mode with an
    /// x-dependent weight dynamics, unknown kernel name, bad sizes).
    #[error("configuration error: {0}")]
    Config(String),

    /// The integrator produced a non-finite state.
    #[error("solution blew up at step {step} (t = {t})")]
    BlowUp { step: usize, t: f64 },

    /// Fibered objects with incompatible grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Sampling produced a point outside the declared support box.
    #[error("initialization error: {0}")]
    Init(String),

    #[error("unknown kernel: {0}")]
    UnknownKernel(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
