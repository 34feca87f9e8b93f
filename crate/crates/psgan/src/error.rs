use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by tensor ops, layers, the data pipeline and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("reduction over zero elements in {op}")]
    EmptyReduction { op: &'static str },

    #[error("degenerate patch: mask has {active} active pixels (need at least 2)")]
    DegeneratePatch { active: usize },

    #[error("masks {first} and {second} overlap")]
    OverlappingMasks { first: usize, second: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: loss_g={loss_g}, loss_d={loss_d}")]
    NonFiniteLoss { step: u64, loss_g: f32, loss_d: f32 },

    #[error("placement failed after {attempts} rejection-sampling attempts")]
    PlacementFailed { attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
