//! First-order stability analysis of the refinement optimum.
//!
//! Near a noiseless optimum, the refined pose tangent responds linearly
//! to observation noise: `x*(y) ≈ -A⁻¹ B y`, where `A` is the
//! Gauss-Newton Hessian of the objective over the pose tangent and `B`
//! its cross-Hessian with the observation vector. The output covariance
//! is therefore `Var(x*) ≈ A⁻¹ B Var(y) Bᵀ A⁻¹`.
//!
//! With per-family relative weights `(1, β_E, β_S)` and identity element
//! covariances this specializes to
//!
//! `A = Σ J_kᵀJ_k + β_E Σ J_eᵀJ_e + β_S Σ J_sᵀJ_s`,
//!
//! and the middle matrix picks up `σ²` per family; the scalar symmetry
//! residual maps its 2D endpoint noise through its own noise Jacobian,
//! contributing `β_S² σ_S² ‖N_s‖² J_sᵀJ_s` per correspondence.
//!
//! The module also ships a Monte-Carlo validator, a closed-form worked
//! example on a planar square template, an optimal-edge-weight scan,
//! the variance-reduction direction check, and an implicit-function
//! sensitivity check against re-solving.

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{PoseError, Result};
use crate::geometry::{ObjectModel, Pose, Rotation, SymmetryPlane};
use crate::observations::{EdgeObs, KeypointObs, Scene, SymCorrObs};
use crate::refine_solver::{gauss_newton_refine, RefineConfig};
use crate::residuals::{analytic_jacobians, group_scale, JacobianStack, RobustWeights};
use crate::synth::mix_seed;

/// Independent per-family Gaussian noise levels (normalized units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_k: f64,
    pub sigma_e: f64,
    pub sigma_s: f64,
}

impl NoiseModel {
    pub fn new(sigma_k: f64, sigma_e: f64, sigma_s: f64) -> Self {
        assert!(
            sigma_k >= 0.0 && sigma_e >= 0.0 && sigma_s >= 0.0,
            "noise levels must be non-negative"
        );
        NoiseModel {
            sigma_k,
            sigma_e,
            sigma_s,
        }
    }
}

/// Stacked Jacobians and the covariance prediction they induce.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// 6×2|K| stack; each element contributes its transposed pose block.
    pub j_k: DMatrix<f64>,
    /// 6×2|E| stack.
    pub j_e: DMatrix<f64>,
    /// 6×|S| stack; the translation rows are zero.
    pub j_s: DMatrix<f64>,
    /// Information matrix `A` at the given relative weights.
    pub a_mat: Matrix6<f64>,
    pub predicted_cov: Matrix6<f64>,
    pub empirical_cov: Option<Matrix6<f64>>,
    pub trials: usize,
}

fn stack_transposed(jac: &JacobianStack) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let nk = jac.keypoint_pose.len();
    let ne = jac.edge_pose.len();
    let ns = jac.sym_pose.len();
    let mut j_k = DMatrix::zeros(6, 2 * nk);
    let mut j_e = DMatrix::zeros(6, 2 * ne);
    let mut j_s = DMatrix::zeros(6, ns);
    for (i, j) in jac.keypoint_pose.iter().enumerate() {
        for row in 0..6 {
            j_k[(row, 2 * i)] = j[(0, row)];
            j_k[(row, 2 * i + 1)] = j[(1, row)];
        }
    }
    for (i, j) in jac.edge_pose.iter().enumerate() {
        for row in 0..6 {
            j_e[(row, 2 * i)] = j[(0, row)];
            j_e[(row, 2 * i + 1)] = j[(1, row)];
        }
    }
    for (i, j) in jac.sym_pose.iter().enumerate() {
        for row in 0..6 {
            j_s[(row, i)] = j[(0, row)];
        }
    }
    (j_k, j_e, j_s)
}

/// `A = Σ J_kᵀJ_k + β_E Σ J_eᵀJ_e + β_S Σ J_sᵀJ_s` from a Jacobian stack.
pub fn information_matrix(jac: &JacobianStack, beta_e: f64, beta_s: f64) -> Matrix6<f64> {
    let mut a = Matrix6::<f64>::zeros();
    for j in &jac.keypoint_pose {
        a += j.transpose() * j;
    }
    for j in &jac.edge_pose {
        a += beta_e * j.transpose() * j;
    }
    for j in &jac.sym_pose {
        a += beta_s * j.transpose() * j;
    }
    a
}

fn invert_information(a: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let eig = nalgebra::SymmetricEigen::new(*a);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let null: Vec<[f64; 6]> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &e)| e <= 1e-12 * max || max == 0.0)
        .map(|(i, _)| {
            let col = eig.eigenvectors.column(i);
            [col[0], col[1], col[2], col[3], col[4], col[5]]
        })
        .collect();
    if !null.is_empty() {
        return Err(PoseError::SingularInformation {
            null_space_dim: null.len(),
            null_directions: null,
        });
    }
    a.try_inverse()
        .ok_or_else(|| PoseError::NumericalFailure("information matrix inversion failed".into()))
}

/// Predicts the 6×6 covariance of the pose tangent at the ground truth
/// for the given relative weights and noise model. The scene must be
/// noiseless at `gt_pose` (the Jacobians are evaluated there).
pub fn predict_covariance(
    model: &ObjectModel,
    gt_pose: &Pose,
    scene: &Scene,
    beta_e: f64,
    beta_s: f64,
    noise: &NoiseModel,
) -> Result<StabilityReport> {
    let jac = analytic_jacobians(gt_pose, model, scene)?;
    let a = information_matrix(&jac, beta_e, beta_s);
    let a_inv = invert_information(&a)?;

    let mut mid = Matrix6::<f64>::zeros();
    let sk2 = noise.sigma_k * noise.sigma_k;
    let se2 = noise.sigma_e * noise.sigma_e;
    let ss2 = noise.sigma_s * noise.sigma_s;
    for j in &jac.keypoint_pose {
        mid += sk2 * j.transpose() * j;
    }
    for j in &jac.edge_pose {
        mid += beta_e * beta_e * se2 * j.transpose() * j;
    }
    for (j, n) in jac.sym_pose.iter().zip(&jac.sym_noise) {
        mid += beta_s * beta_s * ss2 * n.norm_squared() * j.transpose() * j;
    }

    let cov = a_inv * mid * a_inv;
    let (j_k, j_e, j_s) = stack_transposed(&jac);
    Ok(StabilityReport {
        j_k,
        j_e,
        j_s,
        a_mat: a,
        predicted_cov: 0.5 * (cov + cov.transpose()),
        empirical_cov: None,
        trials: 0,
    })
}

/// Cross-Hessian stack `B` (6 × observation dimension) with the column
/// layout `[keypoints (2 each) | edges (2 each) | correspondences (2 each)]`.
pub fn cross_hessian(jac: &JacobianStack, beta_e: f64, beta_s: f64) -> DMatrix<f64> {
    let nk = jac.keypoint_pose.len();
    let ne = jac.edge_pose.len();
    let ns = jac.sym_pose.len();
    let mut b = DMatrix::zeros(6, 2 * (nk + ne + ns));
    for (i, j) in jac.keypoint_pose.iter().enumerate() {
        // noise Jacobian is -I₂
        for row in 0..6 {
            b[(row, 2 * i)] = -j[(0, row)];
            b[(row, 2 * i + 1)] = -j[(1, row)];
        }
    }
    for (i, j) in jac.edge_pose.iter().enumerate() {
        let c = 2 * (nk + i);
        for row in 0..6 {
            b[(row, c)] = -beta_e * j[(0, row)];
            b[(row, c + 1)] = -beta_e * j[(1, row)];
        }
    }
    for (i, (j, n)) in jac.sym_pose.iter().zip(&jac.sym_noise).enumerate() {
        let c = 2 * (nk + ne + i);
        for row in 0..6 {
            b[(row, c)] = beta_s * j[(0, row)] * n[(0, 0)];
            b[(row, c + 1)] = beta_s * j[(0, row)] * n[(0, 1)];
        }
    }
    b
}

/// Covariance prediction for an arbitrary observation covariance
/// `var_y` (supports cross-correlated families), in the column layout
/// of [`cross_hessian`].
pub fn predict_covariance_with_var_y(
    model: &ObjectModel,
    gt_pose: &Pose,
    scene: &Scene,
    beta_e: f64,
    beta_s: f64,
    var_y: &DMatrix<f64>,
) -> Result<Matrix6<f64>> {
    let jac = analytic_jacobians(gt_pose, model, scene)?;
    let a = information_matrix(&jac, beta_e, beta_s);
    let a_inv = invert_information(&a)?;
    let b = cross_hessian(&jac, beta_e, beta_s);
    let mid = &b * var_y * b.transpose();
    let mut cov = Matrix6::<f64>::zeros();
    for i in 0..6 {
        for j in 0..6 {
            cov[(i, j)] = mid[(i, j)];
        }
    }
    let out = a_inv * cov * a_inv;
    Ok(0.5 * (out + out.transpose()))
}

/// Adds fresh Gaussian noise to a (noiseless) scene: keypoints, edge
/// vectors, and the second endpoint of each correspondence.
pub fn scene_with_noise(scene: &Scene, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Scene {
    let mut out = scene.clone();
    let mut draw2 = |sigma: f64| -> Vector2<f64> {
        let x: f64 = StandardNormal.sample(rng);
        let y: f64 = StandardNormal.sample(rng);
        Vector2::new(x * sigma, y * sigma)
    };
    for kp in out.keypoints.iter_mut() {
        kp.image_point += draw2(noise.sigma_k);
    }
    for e in out.edges.iter_mut() {
        e.vector += draw2(noise.sigma_e);
    }
    for c in out.sym_corrs.iter_mut() {
        c.q2 += draw2(noise.sigma_s);
    }
    out
}

/// Offsets a scene's observations along a direction in the
/// [`cross_hessian`] column layout, scaled by `eps`.
pub fn scene_with_offset(scene: &Scene, direction: &DVector<f64>, eps: f64) -> Scene {
    let nk = scene.keypoint_count();
    let ne = scene.edge_count();
    let ns = scene.sym_corr_count();
    assert_eq!(direction.len(), 2 * (nk + ne + ns), "direction length");
    let mut out = scene.clone();
    for (i, kp) in out.keypoints.iter_mut().enumerate() {
        kp.image_point += eps * Vector2::new(direction[2 * i], direction[2 * i + 1]);
    }
    for (i, e) in out.edges.iter_mut().enumerate() {
        let c = 2 * (nk + i);
        e.vector += eps * Vector2::new(direction[c], direction[c + 1]);
    }
    for (i, c) in out.sym_corrs.iter_mut().enumerate() {
        let col = 2 * (nk + ne + i);
        c.q2 += eps * Vector2::new(direction[col], direction[col + 1]);
    }
    out
}

/// Monte-Carlo estimate of the refined-pose tangent covariance.
#[derive(Debug, Clone)]
pub struct McReport {
    pub covariance: Matrix6<f64>,
    pub trials: usize,
    /// Trials whose solve failed (excluded from the estimate).
    pub failures: usize,
}

/// Runs `trials` noisy solves of the same measurement design (fresh
/// noise on `scene` each trial, refinement started at the ground truth
/// for locality) and accumulates the sample covariance of the tangent
/// difference from `gt_pose`. Deterministic under `seed`.
pub fn monte_carlo_covariance(
    model: &ObjectModel,
    gt_pose: &Pose,
    scene: &Scene,
    noise: &NoiseModel,
    refine: &RefineConfig,
    trials: usize,
    seed: u64,
) -> Result<McReport> {
    if trials < 2 {
        return Err(PoseError::InvalidConfig("need at least two trials".into()));
    }
    let deltas: Vec<Option<Vector6<f64>>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trial));
            rng.set_stream(3);
            let noisy = scene_with_noise(scene, noise, &mut rng);
            gauss_newton_refine(gt_pose, model, &noisy, refine)
                .ok()
                .map(|report| report.pose.delta_from(gt_pose).to_vector())
        })
        .collect();

    let used: Vec<&Vector6<f64>> = deltas.iter().flatten().collect();
    let failures = trials - used.len();
    if used.len() < 2 {
        return Err(PoseError::NumericalFailure(
            "too few successful Monte-Carlo trials".into(),
        ));
    }
    let mut mean = Vector6::<f64>::zeros();
    for d in &used {
        mean += **d;
    }
    mean /= used.len() as f64;
    let mut cov = Matrix6::<f64>::zeros();
    for d in &used {
        let c = **d - mean;
        cov += c * c.transpose();
    }
    cov /= (used.len() - 1) as f64;

    Ok(McReport {
        covariance: cov,
        trials,
        failures,
    })
}

/// The planar-square worked example: per-family averaged Gauss-Newton
/// Hessian blocks.
#[derive(Debug, Clone)]
pub struct SquareExample {
    pub delta: f64,
    /// `(1/8) Σ J_kᵀ J_k` over the eight keypoints.
    pub h_k: Matrix6<f64>,
    /// `(1/28) Σ J_eᵀ J_e` over the complete graph.
    pub h_e: Matrix6<f64>,
    /// Area-normalized integral of `J_sᵀ J_s` over the correspondence
    /// region.
    pub h_s: Matrix6<f64>,
}

/// The eight-keypoint square template at unit depth: image coordinates
/// `(±δ, {0, ±δ})` minus the center, symmetric across the `x = 0` plane.
pub fn square_model(delta: f64) -> ObjectModel {
    let coords = [
        (delta, delta),
        (delta, 0.0),
        (delta, -delta),
        (0.0, delta),
        (0.0, -delta),
        (-delta, delta),
        (-delta, 0.0),
        (-delta, -delta),
    ];
    let keypoints: Vec<nalgebra::Vector3<f64>> = coords
        .iter()
        .map(|&(x, y)| nalgebra::Vector3::new(x, y, 1.0))
        .collect();
    let plane = SymmetryPlane::new(
        nalgebra::Vector3::new(1.0, 0.0, 0.0),
        nalgebra::Vector3::new(0.0, 0.0, 1.0),
    )
    .unwrap();
    let g = 9;
    let mut samples = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let x = -delta + 2.0 * delta * i as f64 / (g - 1) as f64;
            let y = -delta + 2.0 * delta * j as f64 / (g - 1) as f64;
            samples.push(nalgebra::Vector3::new(x, y, 1.0));
        }
    }
    ObjectModel::new(keypoints, None, plane, samples, true).unwrap()
}

/// Noiseless square scene at the identity pose with a midpoint-rule
/// grid of symmetry correspondences `(δu, δv) ↔ (-δu, δv)` over the
/// parameter region `u ∈ [0, 1], v ∈ [-1, 1]`.
pub fn square_scene(delta: f64, corr_grid: usize) -> (ObjectModel, Pose, Scene) {
    let model = square_model(delta);
    let pose = Pose::new(Rotation::identity(), nalgebra::Vector3::zeros());

    let keypoints: Vec<KeypointObs> = model
        .keypoints
        .iter()
        .enumerate()
        .map(|(index, p)| KeypointObs {
            index,
            image_point: Vector2::new(p.x, p.y),
        })
        .collect();
    let edges: Vec<EdgeObs> = model
        .edges
        .iter()
        .enumerate()
        .map(|(edge_index, &(s, t))| EdgeObs {
            edge_index,
            vector: keypoints[t].image_point - keypoints[s].image_point,
        })
        .collect();
    let mut sym_corrs = Vec::with_capacity(corr_grid * corr_grid);
    for i in 0..corr_grid {
        let u = (i as f64 + 0.5) / corr_grid as f64;
        for j in 0..corr_grid {
            let v = -1.0 + 2.0 * (j as f64 + 0.5) / corr_grid as f64;
            sym_corrs.push(SymCorrObs {
                q1: Vector2::new(delta * u, delta * v),
                q2: Vector2::new(-delta * u, delta * v),
            });
        }
    }

    let scene = Scene {
        intrinsics: crate::geometry::CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        },
        keypoints,
        edges,
        sym_corrs,
        gt_pose: Some(pose),
        noise_meta: None,
    };
    (model, pose, scene)
}

/// Assembles the square example numerically from the same Jacobians the
/// solver uses. The keypoint and edge blocks are plain per-family means;
/// the correspondence block is the midpoint-rule integral normalized by
/// the parameter-region area 2.
pub fn square_example(delta: f64, corr_grid: usize) -> SquareExample {
    assert!(delta > 0.0 && corr_grid >= 1);
    let (model, pose, scene) = square_scene(delta, corr_grid);
    let jac = analytic_jacobians(&pose, &model, &scene).expect("unit-depth square");

    let mut h_k = Matrix6::<f64>::zeros();
    for j in &jac.keypoint_pose {
        h_k += j.transpose() * j;
    }
    h_k /= jac.keypoint_pose.len() as f64;

    let mut h_e = Matrix6::<f64>::zeros();
    for j in &jac.edge_pose {
        h_e += j.transpose() * j;
    }
    h_e /= jac.edge_pose.len() as f64;

    // Uniform midpoint grid over a region of area 2: the normalized
    // integral is exactly the grid mean.
    let mut h_s = Matrix6::<f64>::zeros();
    for j in &jac.sym_pose {
        h_s += j.transpose() * j;
    }
    h_s /= jac.sym_pose.len() as f64;

    SquareExample {
        delta,
        h_k,
        h_e,
        h_s,
    }
}

/// Closed forms for the square example: `H_K`, `H_E`, and the nonzero
/// eigenvalues of the area-normalized `H_S` (ascending).
pub fn square_closed_forms(delta: f64) -> (Matrix6<f64>, Matrix6<f64>, [f64; 2]) {
    let d2 = delta * delta;
    let d4 = d2 * d2;
    let c1 = (8.0 + 12.0 * d2 + 10.0 * d4) / 8.0;
    let c2 = (8.0 + 6.0 * d2) / 8.0;
    let mut h_k = Matrix6::<f64>::zeros();
    h_k[(0, 0)] = c1;
    h_k[(1, 1)] = c1;
    h_k[(2, 2)] = 12.0 * d2 / 8.0;
    h_k[(3, 3)] = 1.0;
    h_k[(4, 4)] = 1.0;
    h_k[(5, 5)] = 12.0 * d2 / 8.0;
    h_k[(0, 4)] = -c2;
    h_k[(4, 0)] = -c2;
    h_k[(1, 3)] = c2;
    h_k[(3, 1)] = c2;

    let mut h_e = Matrix6::<f64>::zeros();
    h_e[(0, 0)] = 11.0 / 7.0 * d4;
    h_e[(1, 1)] = 11.0 / 7.0 * d4;
    h_e[(2, 2)] = 24.0 / 7.0 * d2;
    h_e[(5, 5)] = 24.0 / 7.0 * d2;

    let mut eig = [4.0 / 9.0 * d4, 4.0 / 3.0 * d2];
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (h_k, h_e, eig)
}

/// Closed-form rotation-z variance entry of the keypoint+edge square
/// example as a function of the edge weight.
pub fn a8_closed_form(beta_e: f64, delta: f64, sigma_k: f64, sigma_e: f64) -> f64 {
    let d2 = delta * delta;
    let hk = 12.0 / 8.0 * d2;
    let he = 24.0 / 7.0 * d2;
    (sigma_k * sigma_k * hk + beta_e * beta_e * sigma_e * sigma_e * he) / (hk + beta_e * he).powi(2)
}

/// One grid point of an edge-weight scan.
#[derive(Debug, Clone, Copy)]
pub struct A8Point {
    pub beta_e: f64,
    pub a8_closed: f64,
    /// `(6,6)` entry of the predicted covariance on the square scene.
    pub cov_66: f64,
}

/// Result of scanning the edge weight on the square example.
#[derive(Debug, Clone)]
pub struct A8Scan {
    pub points: Vec<A8Point>,
    pub best_beta_closed: f64,
    pub best_beta_cov: f64,
    /// The analytic optimum `σ_K²/σ_E²`.
    pub analytic_optimum: f64,
}

/// Evaluates both the closed form and the covariance route over
/// `beta_grid` (keypoints + edges only) and reports both minimizers.
pub fn a8_scan(delta: f64, sigma_k: f64, sigma_e: f64, beta_grid: &[f64]) -> Result<A8Scan> {
    assert!(!beta_grid.is_empty());
    let (model, pose, scene) = square_scene(delta, 4);
    let noise = NoiseModel::new(sigma_k, sigma_e, 0.0);
    let mut points = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let report = predict_covariance(&model, &pose, &scene, beta, 0.0, &noise)?;
        points.push(A8Point {
            beta_e: beta,
            a8_closed: a8_closed_form(beta, delta, sigma_k, sigma_e),
            cov_66: report.predicted_cov[(5, 5)],
        });
    }
    let argmin = |key: fn(&A8Point) -> f64| -> f64 {
        points
            .iter()
            .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
            .unwrap()
            .beta_e
    };
    Ok(A8Scan {
        best_beta_closed: argmin(|p| p.a8_closed),
        best_beta_cov: argmin(|p| p.cov_66),
        analytic_optimum: sigma_k * sigma_k / (sigma_e * sigma_e),
        points,
    })
}

/// Forward-difference check of the variance-reduction direction when
/// edges are introduced with weight `0⁺`.
#[derive(Debug, Clone, Copy)]
pub struct VarianceReductionReport {
    pub trace_at_zero: f64,
    pub trace_at_step: f64,
    pub derivative: f64,
    /// True when adding an infinitesimal edge weight reduces the trace.
    pub reduced: bool,
}

/// Estimates `d trace(Var)/dβ_E` at `β_E = 0⁺` by forward difference
/// with step `step`. Under independent keypoint/edge noise the
/// derivative is negative.
pub fn variance_reduction_check(
    model: &ObjectModel,
    gt_pose: &Pose,
    scene: &Scene,
    noise: &NoiseModel,
    step: f64,
) -> Result<VarianceReductionReport> {
    let at_zero = predict_covariance(model, gt_pose, scene, 0.0, 0.0, noise)?
        .predicted_cov
        .trace();
    let at_step = predict_covariance(model, gt_pose, scene, step, 0.0, noise)?
        .predicted_cov
        .trace();
    let derivative = (at_step - at_zero) / step;
    Ok(VarianceReductionReport {
        trace_at_zero: at_zero,
        trace_at_step: at_step,
        derivative,
        reduced: derivative < 0.0,
    })
}

/// Comparison of the implicit-function pose sensitivity against a
/// re-solve.
#[derive(Debug, Clone)]
pub struct ImplicitDerivativeReport {
    /// `-A⁻¹ B d` for the perturbation direction `d`.
    pub analytic: Vector6<f64>,
    /// Central-difference re-solve sensitivity.
    pub numeric: Vector6<f64>,
    pub relative_error: f64,
    /// The raw cross-Hessian response `B d` (its translation rows are
    /// exactly zero for pure correspondence perturbations).
    pub cross_term: Vector6<f64>,
}

/// Checks `∂x*/∂y = -A⁻¹ B` at a noiseless optimum against re-solving
/// with the observation vector perturbed by `±eps·direction`.
pub fn implicit_derivative_check(
    model: &ObjectModel,
    gt_pose: &Pose,
    scene: &Scene,
    betas: &RobustWeights,
    direction: &DVector<f64>,
    eps: f64,
) -> Result<ImplicitDerivativeReport> {
    let jac = analytic_jacobians(gt_pose, model, scene)?;
    // Effective per-family weights of the refinement objective at zero
    // residual: GM weight at zero times the group renormalization.
    let w_k = betas.keypoint.weight_at_zero();
    let w_e = betas.edge.weight_at_zero()
        * group_scale(scene.keypoint_count(), scene.edge_count());
    let w_s = betas.symmetry.weight_at_zero()
        * group_scale(scene.keypoint_count(), scene.sym_corr_count());
    let beta_e = w_e / w_k;
    let beta_s = w_s / w_k;

    let a = information_matrix(&jac, beta_e, beta_s);
    let a_inv = invert_information(&a)?;
    let b = cross_hessian(&jac, beta_e, beta_s);
    let bd = &b * direction;
    let cross_term = Vector6::from_iterator(bd.iter().copied());
    let analytic = -(a_inv * cross_term);

    let config = RefineConfig {
        betas: *betas,
        step_tol: 1e-14,
        max_iters: 80,
        ..RefineConfig::default()
    };
    let solve = |scene: &Scene| -> Result<Vector6<f64>> {
        let report = gauss_newton_refine(gt_pose, model, scene, &config)?;
        Ok(report.pose.delta_from(gt_pose).to_vector())
    };
    let plus = solve(&scene_with_offset(scene, direction, eps))?;
    let minus = solve(&scene_with_offset(scene, direction, -eps))?;
    let numeric = (plus - minus) / (2.0 * eps);

    let relative_error = (analytic - numeric).norm() / analytic.norm().max(1e-12);
    Ok(ImplicitDerivativeReport {
        analytic,
        numeric,
        relative_error,
        cross_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{demo_model, generate_scene, random_model, sample_pose, GenConfig};
    use approx::assert_abs_diff_eq;

    fn noiseless(seed: u64) -> (ObjectModel, Pose, Scene) {
        let model = demo_model();
        let gen = GenConfig {
            seed,
            ..Default::default()
        };
        let pose = sample_pose(&model, &gen);
        let scene = generate_scene(&model, &pose, &gen).unwrap();
        (model, pose, scene)
    }

    #[test]
    fn zero_noise_predicts_zero_covariance() {
        let (model, pose, scene) = noiseless(1);
        let report =
            predict_covariance(&model, &pose, &scene, 1.0, 1.0, &NoiseModel::new(0.0, 0.0, 0.0))
                .unwrap();
        assert_eq!(report.predicted_cov, Matrix6::zeros());
    }

    #[test]
    fn keypoints_only_reduces_to_direct_formula() {
        let (model, pose, scene) = noiseless(2);
        let sigma = 1e-3;
        let report = predict_covariance(
            &model,
            &pose,
            &scene,
            0.0,
            0.0,
            &NoiseModel::new(sigma, 0.0, 0.0),
        )
        .unwrap();
        let jac = analytic_jacobians(&pose, &model, &scene).unwrap();
        let a = information_matrix(&jac, 0.0, 0.0);
        let direct = sigma * sigma * a.try_inverse().unwrap();
        assert_abs_diff_eq!(report.predicted_cov, direct, epsilon = 1e-12);
    }

    #[test]
    fn covariance_scales_linearly_in_noise_variance() {
        let (model, pose, scene) = noiseless(3);
        let c1 = predict_covariance(&model, &pose, &scene, 0.0, 0.0, &NoiseModel::new(1e-3, 0.0, 0.0))
            .unwrap()
            .predicted_cov;
        let c2 = predict_covariance(&model, &pose, &scene, 0.0, 0.0, &NoiseModel::new(2e-3, 0.0, 0.0))
            .unwrap()
            .predicted_cov;
        assert_abs_diff_eq!(c2, 4.0 * c1, epsilon = 1e-12 * c1.norm().max(1e-30));
    }

    #[test]
    fn predicted_covariance_is_psd() {
        for seed in 0..10 {
            let (model, pose, scene) = noiseless(10 + seed);
            let report = predict_covariance(
                &model,
                &pose,
                &scene,
                0.7,
                0.3,
                &NoiseModel::new(1e-3, 2e-3, 1e-3),
            )
            .unwrap();
            let eig = nalgebra::SymmetricEigen::new(report.predicted_cov);
            for e in eig.eigenvalues.iter() {
                assert!(*e >= -1e-12, "eigenvalue {e}");
            }
        }
    }

    #[test]
    fn general_var_y_path_matches_block_diagonal_path() {
        let (model, pose, scene) = noiseless(4);
        let noise = NoiseModel::new(1e-3, 2e-3, 1.5e-3);
        let blocked = predict_covariance(&model, &pose, &scene, 0.5, 0.25, &noise)
            .unwrap()
            .predicted_cov;
        let dim = 2 * (scene.keypoint_count() + scene.edge_count() + scene.sym_corr_count());
        let mut var_y = DMatrix::zeros(dim, dim);
        for i in 0..scene.keypoint_count() * 2 {
            var_y[(i, i)] = noise.sigma_k * noise.sigma_k;
        }
        let off = 2 * scene.keypoint_count();
        for i in 0..scene.edge_count() * 2 {
            var_y[(off + i, off + i)] = noise.sigma_e * noise.sigma_e;
        }
        let off = off + 2 * scene.edge_count();
        for i in 0..scene.sym_corr_count() * 2 {
            var_y[(off + i, off + i)] = noise.sigma_s * noise.sigma_s;
        }
        let general =
            predict_covariance_with_var_y(&model, &pose, &scene, 0.5, 0.25, &var_y).unwrap();
        assert_abs_diff_eq!(blocked, general, epsilon = 1e-12 * blocked.norm());
    }

    #[test]
    fn keypoint_free_configuration_reports_null_directions() {
        let (model, pose, mut scene) = noiseless(5);
        scene.keypoints.clear();
        scene.edges.clear();
        // symmetry alone constrains at most two rotation directions
        let err = predict_covariance(&model, &pose, &scene, 0.0, 1.0, &NoiseModel::new(0.0, 0.0, 1e-3))
            .unwrap_err();
        match err {
            PoseError::SingularInformation { null_space_dim, .. } => {
                assert!(null_space_dim >= 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_and_zero_for_zero_noise() {
        let (model, pose, scene) = noiseless(6);
        let noise = NoiseModel::new(0.0, 0.0, 0.0);
        let cfg = RefineConfig::default();
        let a = monte_carlo_covariance(&model, &pose, &scene, &noise, &cfg, 50, 7).unwrap();
        let b = monte_carlo_covariance(&model, &pose, &scene, &noise, &cfg, 50, 7).unwrap();
        assert_eq!(a.covariance, b.covariance);
        assert!(a.covariance.norm() <= 1e-16);
        assert_eq!(a.failures, 0);
    }

    #[test]
    fn monte_carlo_scaling_law() {
        let (model, pose, scene) = noiseless(7);
        let cfg = RefineConfig {
            betas: RobustWeights::quadratic(),
            step_tol: 1e-13,
            ..RefineConfig::default()
        };
        let c1 = monte_carlo_covariance(
            &model,
            &pose,
            &scene,
            &NoiseModel::new(1e-3, 0.0, 0.0),
            &cfg,
            800,
            11,
        )
        .unwrap()
        .covariance;
        let c2 = monte_carlo_covariance(
            &model,
            &pose,
            &scene,
            &NoiseModel::new(2e-3, 0.0, 0.0),
            &cfg,
            800,
            13,
        )
        .unwrap()
        .covariance;
        for i in 0..6 {
            let ratio = c2[(i, i)] / c1[(i, i)];
            assert!(
                (ratio - 4.0).abs() <= 0.6,
                "diagonal {i}: ratio {ratio} (expected 4)"
            );
        }
    }

    #[test]
    fn square_example_matches_closed_forms() {
        for &delta in &[0.25, 0.5, 1.0] {
            let example = square_example(delta, 200);
            let (h_k, h_e, eig_s) = square_closed_forms(delta);
            assert_abs_diff_eq!(example.h_k, h_k, epsilon = 1e-9);
            assert_abs_diff_eq!(example.h_e, h_e, epsilon = 1e-9);

            let eig = nalgebra::SymmetricEigen::new(example.h_s);
            let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // four zero eigenvalues, then the two nonzero ones ascending
            for &v in &vals[..4] {
                assert!(v.abs() < 1e-9, "expected zero eigenvalue, got {v}");
            }
            assert_abs_diff_eq!(vals[4], eig_s[0], epsilon = 1e-4);
            assert_abs_diff_eq!(vals[5], eig_s[1], epsilon = 1e-4);
        }
    }

    #[test]
    fn square_example_spot_values() {
        let example = square_example(0.5, 150);
        assert_abs_diff_eq!(example.h_k[(0, 0)], 1.453125, epsilon = 1e-9);
        assert_abs_diff_eq!(example.h_k[(1, 3)], 1.1875, epsilon = 1e-9);
        assert_abs_diff_eq!(example.h_k[(2, 2)], 0.375, epsilon = 1e-9);
        assert_abs_diff_eq!(example.h_e[(0, 0)], 11.0 / 7.0 * 0.0625, epsilon = 1e-9);
        assert_abs_diff_eq!(example.h_e[(2, 2)], 24.0 / 7.0 * 0.25, epsilon = 1e-9);
        // translation block of the edge Hessian vanishes except (6,6)
        assert_eq!(example.h_e[(3, 3)], 0.0);
        assert_eq!(example.h_e[(4, 4)], 0.0);
    }

    #[test]
    fn a8_minimizer_matches_analytic_optimum() {
        let grid: Vec<f64> = (0..=100)
            .map(|i| 0.25 * 10f64.powf(-1.0 + 2.0 * i as f64 / 100.0))
            .collect();
        let scan = a8_scan(0.5, 0.01, 0.02, &grid).unwrap();
        assert_eq!(scan.analytic_optimum, 0.25);
        let log_step = 2.0 / 100.0;
        assert!(
            (scan.best_beta_closed.log10() - 0.25f64.log10()).abs() <= log_step + 1e-12,
            "closed-form minimizer {}",
            scan.best_beta_closed
        );
        assert_eq!(scan.best_beta_closed, scan.best_beta_cov);
    }

    #[test]
    fn variance_reduction_direction_is_negative_for_independent_noise() {
        for seed in 0..5 {
            let model = random_model(seed);
            let gen = GenConfig {
                seed: 40 + seed,
                ..Default::default()
            };
            let pose = sample_pose(&model, &gen);
            let scene = generate_scene(&model, &pose, &gen).unwrap();
            let report = variance_reduction_check(
                &model,
                &pose,
                &scene,
                &NoiseModel::new(1e-3, 1e-3, 0.0),
                1e-6,
            )
            .unwrap();
            assert!(report.reduced, "derivative {}", report.derivative);
        }
    }

    #[test]
    fn correlated_noise_can_flip_the_direction_sign() {
        // Fully correlated keypoint/edge noise violates the independence
        // hypothesis; the derivative sign is merely reported.
        let (model, pose, scene) = noiseless(8);
        let nk = scene.keypoint_count();
        let ne = scene.edge_count();
        let ns = scene.sym_corr_count();
        let dim = 2 * (nk + ne + ns);
        let sigma = 1e-3;
        // Edge noise exactly equals the difference of its endpoint noises:
        // build Var(y) from y_e = y_{target} - y_{source}.
        let mut l = DMatrix::zeros(dim, 2 * nk);
        for i in 0..2 * nk {
            l[(i, i)] = sigma;
        }
        for (e, &(s, t)) in model.edges.iter().enumerate() {
            for d in 0..2 {
                l[(2 * (nk + e) + d, 2 * t + d)] = sigma;
                l[(2 * (nk + e) + d, 2 * s + d)] = -sigma;
            }
        }
        let var_y = &l * l.transpose();
        let t0 = predict_covariance_with_var_y(&model, &pose, &scene, 1e-9, 0.0, &var_y)
            .unwrap()
            .trace();
        let t1 = predict_covariance_with_var_y(&model, &pose, &scene, 1e-3, 0.0, &var_y)
            .unwrap()
            .trace();
        let derivative = (t1 - t0) / 1e-3;
        assert!(derivative.is_finite());
    }

    #[test]
    fn too_noisy_edges_hurt_at_fixed_weight() {
        let (model, pose, scene) = noiseless(9);
        let base = predict_covariance(&model, &pose, &scene, 0.0, 0.0, &NoiseModel::new(1e-3, 0.0, 0.0))
            .unwrap()
            .predicted_cov
            .trace();
        let noisy_edges =
            predict_covariance(&model, &pose, &scene, 0.01, 0.0, &NoiseModel::new(1e-3, 1.0, 0.0))
                .unwrap()
                .predicted_cov
                .trace();
        assert!(noisy_edges > base);
    }

    #[test]
    fn implicit_derivative_matches_resolve() {
        let (model, pose, scene) = noiseless(10);
        let dim = 2 * (scene.keypoint_count() + scene.edge_count() + scene.sym_corr_count());
        let betas = RobustWeights::default();
        // perturb one keypoint x-coordinate
        let mut dir = DVector::zeros(dim);
        dir[0] = 1.0;
        let report =
            implicit_derivative_check(&model, &pose, &scene, &betas, &dir, 1e-6).unwrap();
        assert!(
            report.relative_error <= 1e-3,
            "relative error {}",
            report.relative_error
        );
    }

    #[test]
    fn null_space_perturbations_do_not_move_the_pose() {
        let (model, pose, scene) = noiseless(11);
        let jac = analytic_jacobians(&pose, &model, &scene).unwrap();
        // same effective relative weights the default refinement uses
        let beta_e = group_scale(scene.keypoint_count(), scene.edge_count());
        let beta_s = group_scale(scene.keypoint_count(), scene.sym_corr_count());
        let b = cross_hessian(&jac, beta_e, beta_s);
        // project a random direction onto the null space of B
        let svd = b.clone().svd(false, true);
        let v_t = svd.v_t.unwrap();
        let dim = b.ncols();
        let mut dir = DVector::from_fn(dim, |i, _| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5);
        for r in 0..v_t.nrows() {
            let row = v_t.row(r).transpose();
            let coeff = dir.dot(&row);
            dir -= coeff * row;
        }
        assert!((&b * &dir).norm() < 1e-10 * dir.norm());
        dir /= dir.norm();

        // perturbing along the null direction must not move the refined
        // pose to first order
        let config = RefineConfig {
            step_tol: 1e-14,
            max_iters: 80,
            ..RefineConfig::default()
        };
        for eps in [1e-6, -1e-6] {
            let perturbed = scene_with_offset(&scene, &dir, eps);
            let report = gauss_newton_refine(&pose, &model, &perturbed, &config).unwrap();
            let moved = report.pose.delta_from(&pose).norm();
            assert!(moved <= 1e-8, "eps {eps}: moved by {moved}");
        }
    }

    #[test]
    fn symmetry_perturbations_have_zero_translation_cross_term() {
        let (model, pose, scene) = noiseless(12);
        let nk = scene.keypoint_count();
        let ne = scene.edge_count();
        let dim = 2 * (nk + ne + scene.sym_corr_count());
        let betas = RobustWeights::default();
        let mut dir = DVector::zeros(dim);
        dir[2 * (nk + ne)] = 1.0; // first correspondence, x component
        dir[2 * (nk + ne) + 3] = -0.5; // second correspondence, y component
        let report =
            implicit_derivative_check(&model, &pose, &scene, &betas, &dir, 1e-6).unwrap();
        for row in 3..6 {
            assert_eq!(report.cross_term[row], 0.0);
        }
    }
}
