use thiserror::Error;

/// Errors produced by the registration core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate configuration: weighted source points are coincident or collinear")]
    DegenerateConfiguration,

    #[error("invalid correspondence weight {0}: weights must be finite and non-negative")]
    InvalidWeights(f64),

    #[error("need at least {needed} correspondences with positive total weight, got {found}")]
    TooFewCorrespondences { needed: usize, found: usize },

    #[error("anchor list is empty")]
    EmptyAnchors,

    #[error("k = {k} exceeds the {available} available reference points")]
    KTooLarge { k: usize, available: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid point cloud: {0}")]
    InvalidPointCloud(&'static str),

    #[error("invalid transform: {0}")]
    InvalidTransform(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    #[error("input contains non-finite entries")]
    NonFiniteInput,

    #[error("matrix has zero total mass after clamping")]
    ZeroMassInput,

    #[error("ground-truth correspondence list is empty")]
    EmptyGroundTruth,

    #[error("timestep {t} outside the valid range {min}..={max}")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("noise draw contains non-finite entries")]
    NonFiniteNoise,

    #[error("reverse step must go backwards in time (from {from} to {to})")]
    TimestepOrder { from: usize, to: usize },

    #[error("1 - alpha_bar at timestep {0} is numerically zero")]
    DegenerateAlphaBar(usize),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("both clouds must carry descriptors of the same dimension")]
    MissingDescriptors,

    #[error("backward pass requested without a cached forward pass")]
    MissingForwardCache,

    #[error("cannot realise overlap {requested:.3} (best achievable {achieved:.3})")]
    InfeasibleOverlap { requested: f64, achieved: f64 },

    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = core::result::Result<T, Error>;
