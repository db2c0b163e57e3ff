use std::fmt;

/// Tensor axis named in shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Freq,
    Channels,
    Length,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Time => "time",
            Axis::Freq => "freq",
            Axis::Channels => "channels",
            Axis::Length => "length",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KwsError {
    #[error("{op}: {axis} mismatch (expected {expected}, found {found})")]
    Shape {
        op: &'static str,
        axis: Axis,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient audio: {samples} samples, need at least {needed}")]
    InsufficientAudio { samples: usize, needed: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid architecture at layer {layer}: {reason}")]
    InvalidArch { layer: usize, reason: String },

    #[error("weights do not match architecture (missing: {missing:?}, mis-shaped: {misshaped:?})")]
    WeightMismatch {
        missing: Vec<String>,
        misshaped: Vec<String>,
    },

    #[error("parameter cap {cap} is infeasible: smallest model has {min_params} parameters")]
    BudgetInfeasible { cap: u64, min_params: u64 },

    #[error("label {label} out of range for {labels} classes")]
    LabelOutOfRange { label: usize, labels: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("not a KWSM file")]
    NotAModelFile,

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated model file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Unreadable, malformed or unsupported input data.
    Data,
    /// Divergence or non-finite numerics.
    Numeric,
}

impl KwsError {
    pub fn class(&self) -> ErrorClass {
        match self {
            KwsError::Diverged { .. } => ErrorClass::Numeric,
            KwsError::InvalidConfig(_) | KwsError::InvalidArch { .. } => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = KwsError> = std::result::Result<T, E>;
