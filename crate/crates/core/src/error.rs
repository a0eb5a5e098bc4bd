use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("bad magic: not an NPY v1.0 file")]
    BadMagic,

    #[error("unsupported dtype {0:?}: only little-endian f32 is accepted")]
    UnsupportedDtype(String),

    #[error("fortran-ordered arrays are not supported")]
    FortranOrderUnsupported,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("label {0} exceeds 255 and cannot be stored in an 8-bit mask")]
    LabelOverflow(usize),

    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),

    #[error("malformed config JSON: {0}")]
    MalformedJson(String),

    #[error("invariant violated for `{field}`: {reason}")]
    InvariantViolation { field: &'static str, reason: String },

    #[error("all raw affinities are identical; min-max normalization is undefined")]
    DegenerateAffinity,

    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("non-finite intermediate value in {0}")]
    NonFiniteIntermediate(&'static str),

    #[error("cluster {0} has (near) zero volume")]
    EmptyClusterVolume(usize),

    #[error("row {0} of the assignment matrix has zero norm")]
    ZeroRowNorm(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no populated partition to refine against")]
    NoPopulatedPartition,

    #[error("depth weight is nonzero but no depth field was provided")]
    MissingDepthWithNonzeroWeight,

    #[error("non-finite cost at ({0}, {1})")]
    NonFiniteCost(usize, usize),

    #[error("many-to-one matching requires a background class")]
    BackgroundClassRequired,

    #[error("graph has {nodes} nodes; exhaustive search is limited to {max}")]
    TooLarge { nodes: usize, max: usize },

    #[error("cannot split {nodes} nodes into {k} nonempty parts")]
    InsufficientNodes { nodes: usize, k: usize },
}
