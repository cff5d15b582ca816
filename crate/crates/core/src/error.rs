use std::path::PathBuf;

/// Errors produced anywhere in the separation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-invertible configuration: {0}")]
    NonInvertible(String),
    #[error("context exceeds segment: T={frames} must be greater than 2*L={}", 2 * context)]
    ContextExceedsSegment { frames: usize, context: usize },
    #[error("insufficient coverage: {have} output frames for {need} required")]
    InsufficientCoverage { have: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("negative entry in {0}")]
    NegativeEntry(&'static str),
    #[error("alpha {0} outside (0, 2]")]
    AlphaOutOfRange(f64),
    #[error("strategy requires two checkpoints")]
    MissingSecondModel,
    #[error("zero-energy target source")]
    ZeroEnergyTarget,
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("wav {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
