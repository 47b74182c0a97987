use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("layer `{layer}`: axis {axis} has length {len}, not divisible by block size {m}")]
    Divisibility {
        layer: String,
        axis: usize,
        len: usize,
        m: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attach a layer name to a divisibility error raised by a name-agnostic helper.
    pub fn with_layer(self, name: &str) -> Self {
        match self {
            Error::Divisibility { axis, len, m, .. } => Error::Divisibility {
                layer: name.to_string(),
                axis,
                len,
                m,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
