//! Constraint residuals, robust weighting, and analytic Jacobians.
//!
//! Two residual families are used at different pipeline stages:
//!
//! - **Cross form** (linear in `R` and `t`, used by the initializer):
//!   - keypoint: `p̂_k × (R p̄_k + t)` (3-vector),
//!   - edge: `v̂_e × (R p̄_t + t) + p̂_s × (R v̄_e)` (3-vector), where the
//!     homogeneous edge vector is `v̂_e = (v_x, v_y, 0)`,
//!   - symmetry: `(q̂_1 × q̂_2)ᵀ R n̄` (scalar; `n̄` = canonical plane
//!     normal). All three vanish exactly on noiseless observations at
//!     the generating pose.
//!
//! - **Projection form** (used by the refiner):
//!   - keypoint: `P(p̄_k) - p_k`,
//!   - edge: `(P(p̄_t) - P(p̄_s)) - v_e`,
//!   - symmetry: identical to the cross form.
//!
//! The residual sign convention is *predicted minus observed*; the
//! analytic Jacobians below follow that convention and are pinned by
//! finite-difference tests.
//!
//! Robust weighting uses the generalized Geman-McClure function
//! `ρ(x, β) = β₁² / (β₂² + x²)`, evaluated on the unweighted Euclidean
//! residual norm. Group sums are rescaled by `|K|/|E|` and `|K|/|S|` so
//! each observation family carries comparable total weight.

use nalgebra::{Matrix2, SMatrix, Vector2, Vector3};

use crate::error::Result;
use crate::geometry::{project, skew, ObjectModel, Pose};
use crate::observations::Scene;

/// 2×6 Jacobian of a 2D residual with respect to the pose tangent `(c, c_bar)`.
pub type PoseJacobian2 = SMatrix<f64, 2, 6>;
/// 1×6 Jacobian of a scalar residual with respect to the pose tangent.
pub type PoseJacobian1 = SMatrix<f64, 1, 6>;
/// 1×2 Jacobian of the symmetry residual with respect to its pixel noise.
pub type SymNoiseJacobian = SMatrix<f64, 1, 2>;

/// Parameters of the generalized Geman-McClure weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustParams {
    pub beta1: f64,
    pub beta2: f64,
}

impl RobustParams {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        assert!(beta1 > 0.0 && beta2 > 0.0, "robust parameters must be positive");
        RobustParams { beta1, beta2 }
    }

    /// Weight at zero residual, `β₁²/β₂²`.
    pub fn weight_at_zero(&self) -> f64 {
        (self.beta1 / self.beta2).powi(2)
    }
}

/// `ρ(x, β) = β₁² / (β₂² + x²)` — strictly positive, monotone
/// decreasing in `|x|`, with bounded influence `ρ(x)·x² ≤ β₁²`.
pub fn gm_weight(x: f64, params: &RobustParams) -> f64 {
    params.beta1 * params.beta1 / (params.beta2 * params.beta2 + x * x)
}

/// One robust parameter pair per observation family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustWeights {
    pub keypoint: RobustParams,
    pub edge: RobustParams,
    pub symmetry: RobustParams,
}

impl Default for RobustWeights {
    fn default() -> Self {
        // Normalized-coordinate units; overridable, normally tuned. All
        // groups share the zero-residual weight (β₁/β₂)² = 400, but the
        // symmetry pair is scaled down: its scalar residuals are
        // intrinsically smaller than pixel offsets and its family is the
        // outlier-prone one, and the GM tail influence β₁²/x only drops
        // with β₁.
        RobustWeights {
            keypoint: RobustParams::new(1.0, 0.05),
            edge: RobustParams::new(1.0, 0.05),
            symmetry: RobustParams::new(0.1, 0.005),
        }
    }
}

impl RobustWeights {
    /// Quasi-quadratic limit: weights are 1 for any realistic residual.
    pub fn quadratic() -> Self {
        let p = RobustParams::new(1e6, 1e6);
        RobustWeights {
            keypoint: p,
            edge: p,
            symmetry: p,
        }
    }
}

/// Per-element 2×2 covariances attached to keypoint and edge residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementCovariances {
    pub sigma_k: Vec<Matrix2<f64>>,
    pub sigma_e: Vec<Matrix2<f64>>,
}

impl ElementCovariances {
    /// The default: identity covariance for every element.
    pub fn identity(n_keypoints: usize, n_edges: usize) -> Self {
        ElementCovariances {
            sigma_k: vec![Matrix2::identity(); n_keypoints],
            sigma_e: vec![Matrix2::identity(); n_edges],
        }
    }
}

/// Which observation families participate in an objective/solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMask {
    pub keypoints: bool,
    pub edges: bool,
    pub symmetry: bool,
}

impl GroupMask {
    pub fn all() -> Self {
        GroupMask {
            keypoints: true,
            edges: true,
            symmetry: true,
        }
    }

    pub fn keypoints_only() -> Self {
        GroupMask {
            keypoints: true,
            edges: false,
            symmetry: false,
        }
    }
}

/// Stacked residuals for one scene, in one of the two forms.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualStack {
    Cross {
        keypoint: Vec<Vector3<f64>>,
        edge: Vec<Vector3<f64>>,
        symmetry: Vec<f64>,
    },
    Projection {
        keypoint: Vec<Vector2<f64>>,
        edge: Vec<Vector2<f64>>,
        symmetry: Vec<f64>,
    },
}

impl ResidualStack {
    /// Largest absolute entry over all blocks.
    pub fn inf_norm(&self) -> f64 {
        let fold3 = |acc: f64, v: &Vector3<f64>| acc.max(v.abs().max());
        let fold2 = |acc: f64, v: &Vector2<f64>| acc.max(v.abs().max());
        match self {
            ResidualStack::Cross {
                keypoint,
                edge,
                symmetry,
            } => {
                let m = keypoint.iter().fold(0.0, fold3);
                let m = edge.iter().fold(m, fold3);
                symmetry.iter().fold(m, |acc, s| acc.max(s.abs()))
            }
            ResidualStack::Projection {
                keypoint,
                edge,
                symmetry,
            } => {
                let m = keypoint.iter().fold(0.0, fold2);
                let m = edge.iter().fold(m, fold2);
                symmetry.iter().fold(m, |acc, s| acc.max(s.abs()))
            }
        }
    }
}

fn homogeneous(p: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Symmetry residual `(q̂_1 × q̂_2)ᵀ R n̄` shared by both stacks.
fn symmetry_residual(pose: &Pose, model: &ObjectModel, q1: &Vector2<f64>, q2: &Vector2<f64>) -> f64 {
    let cross = homogeneous(q1).cross(&homogeneous(q2));
    cross.dot(&pose.rotation.apply(&model.symmetry.normal))
}

/// Cross-form residuals (linear in the pose parameters; no division,
/// total on any finite pose).
pub fn cross_residuals(pose: &Pose, model: &ObjectModel, scene: &Scene) -> ResidualStack {
    let r = pose.rotation;
    let t = pose.translation;
    let keypoint = scene
        .keypoints
        .iter()
        .map(|obs| homogeneous(&obs.image_point).cross(&(r.apply(&model.keypoints[obs.index]) + t)))
        .collect();
    let edge = scene
        .edges
        .iter()
        .map(|obs| {
            let (es, et) = model.edges[obs.edge_index];
            let v_hat = Vector3::new(obs.vector.x, obs.vector.y, 0.0);
            let p_hat_s = homogeneous(&scene.keypoints[es].image_point);
            v_hat.cross(&(r.apply(&model.keypoints[et]) + t))
                + p_hat_s.cross(&r.apply(&model.edge_vector(obs.edge_index)))
        })
        .collect();
    let symmetry = scene
        .sym_corrs
        .iter()
        .map(|c| symmetry_residual(pose, model, &c.q1, &c.q2))
        .collect();
    ResidualStack::Cross {
        keypoint,
        edge,
        symmetry,
    }
}

/// Projection-form residuals; fails when any model keypoint projects
/// with non-positive depth at `pose`.
pub fn projection_residuals(pose: &Pose, model: &ObjectModel, scene: &Scene) -> Result<ResidualStack> {
    let mut projected = Vec::with_capacity(model.keypoint_count());
    for p in &model.keypoints {
        projected.push(project(pose, p)?.0);
    }
    let keypoint = scene
        .keypoints
        .iter()
        .map(|obs| projected[obs.index] - obs.image_point)
        .collect();
    let edge = scene
        .edges
        .iter()
        .map(|obs| {
            let (es, et) = model.edges[obs.edge_index];
            (projected[et] - projected[es]) - obs.vector
        })
        .collect();
    let symmetry = scene
        .sym_corrs
        .iter()
        .map(|c| symmetry_residual(pose, model, &c.q1, &c.q2))
        .collect();
    Ok(ResidualStack::Projection {
        keypoint,
        edge,
        symmetry,
    })
}

/// The robust refinement objective:
///
/// `Σ_k ρ(‖r_k‖, β_K) ‖r_k‖²_{Σ_k}
///  + (|K|/|E|) Σ_e ρ(‖r_e‖, β_E) ‖r_e‖²_{Σ_e}
///  + (|K|/|S|) Σ_s ρ(|r_s|, β_S) r_s²`
///
/// with `‖x‖²_A = xᵀAx`. Empty families contribute zero.
pub fn robust_objective(
    pose: &Pose,
    model: &ObjectModel,
    scene: &Scene,
    betas: &RobustWeights,
    covs: &ElementCovariances,
) -> Result<f64> {
    robust_objective_masked(pose, model, scene, betas, covs, &GroupMask::all())
}

/// [`robust_objective`] restricted to the families enabled in `mask`.
pub fn robust_objective_masked(
    pose: &Pose,
    model: &ObjectModel,
    scene: &Scene,
    betas: &RobustWeights,
    covs: &ElementCovariances,
    mask: &GroupMask,
) -> Result<f64> {
    let stack = projection_residuals(pose, model, scene)?;
    let ResidualStack::Projection {
        keypoint,
        edge,
        symmetry,
    } = stack
    else {
        unreachable!()
    };
    let mut total = 0.0;
    if mask.keypoints {
        for (r, sigma) in keypoint.iter().zip(&covs.sigma_k) {
            total += gm_weight(r.norm(), &betas.keypoint) * (r.transpose() * sigma * r)[0];
        }
    }
    if mask.edges && !edge.is_empty() {
        let scale = group_scale(scene.keypoint_count(), edge.len());
        for (r, sigma) in edge.iter().zip(&covs.sigma_e) {
            total += scale * gm_weight(r.norm(), &betas.edge) * (r.transpose() * sigma * r)[0];
        }
    }
    if mask.symmetry && !symmetry.is_empty() {
        let scale = group_scale(scene.keypoint_count(), symmetry.len());
        for &r in &symmetry {
            total += scale * gm_weight(r.abs(), &betas.symmetry) * r * r;
        }
    }
    Ok(total)
}

/// `|K| / n`, the per-family renormalization of the objective.
pub fn group_scale(n_keypoints: usize, n_elements: usize) -> f64 {
    if n_elements == 0 {
        0.0
    } else {
        n_keypoints as f64 / n_elements as f64
    }
}

/// Analytic Jacobians of the projection-form residuals at a pose, with
/// respect to the pose tangent and to each element's observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianStack {
    /// 2×6 pose blocks, one per keypoint.
    pub keypoint_pose: Vec<PoseJacobian2>,
    /// 2×2 noise blocks, one per keypoint (`-I₂` under this convention).
    pub keypoint_noise: Vec<Matrix2<f64>>,
    /// 2×6 pose blocks, one per edge (difference of endpoint blocks).
    pub edge_pose: Vec<PoseJacobian2>,
    /// 2×2 noise blocks, one per edge (`-I₂`).
    pub edge_noise: Vec<Matrix2<f64>>,
    /// 1×6 pose blocks, one per correspondence; the translation columns
    /// are exactly zero.
    pub sym_pose: Vec<PoseJacobian1>,
    /// 1×2 noise blocks for the perturbed correspondence endpoint `q2`.
    pub sym_noise: Vec<SymNoiseJacobian>,
}

/// 2×6 block `[J_c | J_c̄]` of a projected point at normalized
/// coordinates `(x, y)` and depth `z`:
///
/// `J_c = [[-xy, 1+x², -y], [-1-y², xy, x]]`,
/// `J_c̄ = (1/z) [[1, 0, -x], [0, 1, -y]]`.
pub fn point_pose_jacobian(x: f64, y: f64, z: f64) -> PoseJacobian2 {
    let iz = 1.0 / z;
    PoseJacobian2::from_row_slice(&[
        -x * y,
        1.0 + x * x,
        -y,
        iz,
        0.0,
        -x * iz,
        -1.0 - y * y,
        x * y,
        x,
        0.0,
        iz,
        -y * iz,
    ])
}

/// Evaluates all Jacobian blocks at `pose`. Fails when a model keypoint
/// projects with non-positive depth.
pub fn analytic_jacobians(pose: &Pose, model: &ObjectModel, scene: &Scene) -> Result<JacobianStack> {
    let mut per_keypoint = Vec::with_capacity(model.keypoint_count());
    for p in &model.keypoints {
        let (uv, z) = project(pose, p)?;
        per_keypoint.push(point_pose_jacobian(uv.x, uv.y, z));
    }

    let keypoint_pose: Vec<PoseJacobian2> = scene
        .keypoints
        .iter()
        .map(|obs| per_keypoint[obs.index])
        .collect();
    let keypoint_noise = vec![-Matrix2::identity(); keypoint_pose.len()];

    let edge_pose: Vec<PoseJacobian2> = scene
        .edges
        .iter()
        .map(|obs| {
            let (es, et) = model.edges[obs.edge_index];
            per_keypoint[et] - per_keypoint[es]
        })
        .collect();
    let edge_noise = vec![-Matrix2::identity(); edge_pose.len()];

    let n_cam = pose.rotation.apply(&model.symmetry.normal);
    let mut sym_pose = Vec::with_capacity(scene.sym_corr_count());
    let mut sym_noise = Vec::with_capacity(scene.sym_corr_count());
    for c in &scene.sym_corrs {
        let q1 = homogeneous(&c.q1);
        let cross = q1.cross(&homogeneous(&c.q2));
        // d/dc of (q̂₁×q̂₂)ᵀ exp(c×) n = ((R n̄) × (q̂₁×q̂₂))ᵀ, camera-frame normal.
        let dc = skew(&n_cam) * cross;
        sym_pose.push(PoseJacobian1::from_row_slice(&[
            dc.x, dc.y, dc.z, 0.0, 0.0, 0.0,
        ]));
        // Perturbing q2 by (dx, dy, 0): (q̂₁ × e_i)ᵀ n.
        sym_noise.push(SymNoiseJacobian::from_row_slice(&[
            n_cam.y - n_cam.z * q1.y,
            -(n_cam.x - n_cam.z * q1.x),
        ]));
    }

    Ok(JacobianStack {
        keypoint_pose,
        keypoint_noise,
        edge_pose,
        edge_noise,
        sym_pose,
        sym_noise,
    })
}
