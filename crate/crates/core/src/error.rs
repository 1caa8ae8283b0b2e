//! Error types shared across the solver pipeline.

use thiserror::Error;

/// Errors produced by geometry, ingestion, solvers, and the stability lab.
#[derive(Debug, Error)]
pub enum PoseError {
    /// A point projected with non-positive depth (behind or on the camera plane).
    #[error("projected depth {depth} is not positive")]
    DepthNonPositive { depth: f64 },

    /// A document failed schema validation (missing/extra/ill-typed fields).
    #[error("schema error: {0}")]
    SchemaError(String),

    /// Observation counts do not match the referenced object model.
    #[error("count mismatch: expected {expected} {what}, got {got}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Camera intrinsics are invalid (non-positive focal length).
    #[error("invalid intrinsics: fx={fx}, fy={fy}")]
    IntrinsicsInvalid { fx: f64, fy: f64 },

    /// The constraint system has too low a rank to extract a null basis.
    #[error("degenerate constraint system: rank {rank} < {required}")]
    DegenerateSystem { rank: usize, required: usize },

    /// The translation block of the constraint matrix is rank-deficient.
    #[error("translation recovery is rank-deficient: sigma_min/sigma_max = {ratio:.3e}")]
    RankDeficientTranslation { ratio: f64 },

    /// The normal equations could not be solved even with damping.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The information matrix of the stability analysis is rank-deficient.
    #[error("singular information matrix: {null_space_dim} null direction(s) {null_directions:?}")]
    SingularInformation {
        null_space_dim: usize,
        null_directions: Vec<[f64; 6]>,
    },

    /// A noiseless projection left the configured viewing frustum.
    #[error("frustum violation: point projects to ({x:.4}, {y:.4}) outside half-extent {half_extent}")]
    FrustumViolation { x: f64, y: f64, half_extent: f64 },

    /// A configuration value is out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Every probed parameter left a scene's Hessian numerically singular.
    #[error("conditioning failure: {0}")]
    ConditioningFailure(String),

    /// Model definition is inconsistent (edge indices, diameter, normal length, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Underlying file I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, PoseError>;
