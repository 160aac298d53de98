use thiserror::Error;

/// Errors produced by the discovery and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("feature dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("insufficient images: need at least 2, found {found}")]
    InsufficientImages { found: usize },

    #[error("unknown patch id {0}")]
    UnknownPatch(u64),

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("duplicate patch id {0}")]
    DuplicatePatch(u64),

    #[error("patch {patch} box lies outside image {image}")]
    PatchOutsideImage { patch: u64, image: u64 },

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("configuration patches must overlap or abut")]
    DisjointConfigurationPatches,

    #[error("patch box must lie inside the foreground estimate")]
    PatchOutsideForeground,

    #[error("instance too large for exhaustive search: {size} nodes (limit {limit})")]
    SizeGuard { size: usize, limit: usize },

    #[error("no clusters available")]
    NoClusters,

    #[error("P nonempty required: dataset has no positive images")]
    NoPositiveImages,

    #[error("training set has an empty {0} class")]
    EmptyClass(&'static str),

    #[error("non-finite training objective")]
    NonFiniteLoss,

    #[error("no shared image keys between estimates and ground truth")]
    DisjointKeySets,

    #[error("ground truth is empty")]
    EmptyGroundTruth,

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
