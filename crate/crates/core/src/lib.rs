//! Robust 6D object-pose estimation from hybrid 2D observations.
//!
//! The pipeline fits a rigid transform (canonical object frame → camera
//! frame) to three kinds of 2D evidence expressed in normalized camera
//! coordinates:
//!
//! - **keypoints** — projections of a sparse 3D keypoint template,
//! - **edge vectors** — 2D displacements between keypoint projections
//!   along a pre-defined (by default complete) keypoint graph,
//! - **symmetry correspondences** — pixel pairs that are projections of
//!   surface points mirrored across the object's reflection-symmetry
//!   plane, constrained through an epipolar-style scalar residual.
//!
//! Solving proceeds in two stages: a linear initializer that extracts a
//! null-space basis of a stacked constraint matrix and alternates between
//! combination coefficients and an SO(3) projection ([`init_solver`]),
//! followed by robust Gauss-Newton refinement of projection residuals
//! under a generalized Geman-McClure weight ([`refine_solver`]).
//!
//! The crate also ships the surrounding laboratory: a synthetic scene
//! generator and evaluation metrics ([`synth`]), hyper-parameter tuning
//! on a validation set ([`hyper_tuner`]), a first-order covariance
//! predictor with Monte-Carlo validation ([`stability`]), and JSON file
//! formats ([`io`]).

pub mod error;
pub mod geometry;
pub mod hyper_tuner;
pub mod init_solver;
pub mod io;
pub mod observations;
pub mod refine_solver;
pub mod residuals;
pub mod stability;
pub mod synth;

pub use error::{PoseError, Result};
pub use geometry::{
    apply_delta, exp_so3, project, CameraIntrinsics, LocalPoseDelta, ObjectModel, Pose, Rotation,
    SymmetryPlane,
};
pub use observations::{EdgeObs, KeypointObs, Scene, SymCorrObs};
pub use residuals::{ElementCovariances, GroupMask, RobustParams, RobustWeights};
