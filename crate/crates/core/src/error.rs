use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("fitted separator has a zero normal")]
    DegenerateSeparator,

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("inputs have zero variance")]
    ZeroVariance,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("unrelated-pair gradient baseline is zero on layer {layer}")]
    ZeroBaseline { layer: usize },

    #[error("distance range of the central mass is degenerate")]
    DegenerateRange,

    #[error("layer index {layer} out of range for {layers} layers")]
    InvalidLayer { layer: usize, layers: usize },

    #[error("orderings are not permutations of the same index set")]
    NotPermutation,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
