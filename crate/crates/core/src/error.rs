use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument `{name}` out of domain: {detail}")]
    Domain { name: &'static str, detail: String },

    #[error("grid depth {have} is too shallow, depth >= {need} required")]
    GridDepth { have: u32, need: u32 },

    #[error("index {index} is outside the stored spectrum of length {len}")]
    SpectrumRange { index: usize, len: usize },

    #[error("invalid spectrum: {0}")]
    Spectrum(String),

    #[error("time grid is not monotone at position {position}")]
    NonMonotoneTime { position: usize },

    #[error("partition point {time} is not a node of the path time grid")]
    PartitionNotNested { time: f64 },

    #[error("lag {delta} is not a positive integer multiple of the time step {step}")]
    LagMismatch { delta: f64, step: f64 },

    #[error("time grid must be uniform for this operation")]
    NonUniformGrid,

    #[error("path carries no noise record; simulate with noise retention enabled")]
    MissingNoise,

    #[error("cylindrical function `{name}`: supplied {what} disagrees with finite differences ({detail})")]
    PartialMismatch {
        name: String,
        what: &'static str,
        detail: String,
    },

    #[error("quadrature did not converge: estimate {estimate}, error estimate {error}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("bracketing failed: {0}")]
    Bracket(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(name: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        name,
        detail: detail.into(),
    }
}
