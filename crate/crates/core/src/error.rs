use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid source {index}: {reason}")]
    InvalidSource { index: usize, reason: String },

    #[error("source rectangles {first} and {second} overlap")]
    OverlappingSources { first: usize, second: usize },

    #[error("source layout does not fit the domain: {0}")]
    SourceLayout(String),

    #[error("CFL number {cfl:.6} exceeds 1")]
    Cfl { cfl: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    #[error("step mismatch: prediction is at step {pred}, expected {expected}")]
    StepMismatch { pred: u64, expected: u64 },

    #[error("loss mask selects no cells")]
    EmptyMask,

    #[error("relative error undefined: reference field is zero over the mask")]
    ZeroReference,

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("non-finite loss at pool entry {entry} (step {step}): {detail}")]
    NonFiniteLoss { entry: usize, step: u64, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format in field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { field, reason: reason.into() }
    }
}
