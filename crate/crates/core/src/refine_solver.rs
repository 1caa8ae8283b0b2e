//! Robust Gauss-Newton refinement of an initial pose.
//!
//! Each iteration freezes the Geman-McClure weights at the current
//! residuals (an iteratively-reweighted treatment), solves the 6×6
//! weighted normal equations over the pose tangent, and accepts the
//! step only if the full robust objective decreases, halving the step
//! otherwise. The accepted-step rule makes the objective trace strictly
//! non-increasing; a noiseless scene's generating pose is a fixed point.

use nalgebra::{Matrix6, Vector6};

use crate::error::{PoseError, Result};
use crate::geometry::{apply_delta, LocalPoseDelta, ObjectModel, Pose};
use crate::observations::Scene;
use crate::residuals::{
    analytic_jacobians, gm_weight, group_scale, projection_residuals, robust_objective_masked,
    ElementCovariances, GroupMask, ResidualStack, RobustWeights,
};

/// Refinement settings.
#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub betas: RobustWeights,
    /// Per-element covariances; `None` means identity.
    pub covs: Option<ElementCovariances>,
    pub max_iters: usize,
    /// Convergence threshold on the tangent step norm.
    pub step_tol: f64,
    /// Levenberg damping added to the normal matrix; the solver falls
    /// back to `1e-6` if the undamped matrix is singular.
    pub damping: f64,
    /// Observation families included in the solve.
    pub mask: GroupMask,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            betas: RobustWeights::default(),
            covs: None,
            max_iters: 100,
            step_tol: 1e-10,
            damping: 0.0,
            mask: GroupMask::all(),
        }
    }
}

/// Outcome of a refinement run.
#[derive(Debug, Clone)]
pub struct RefineReport {
    pub pose: Pose,
    pub iterations: usize,
    /// Objective after the initial evaluation and after each accepted step.
    pub objective_trace: Vec<f64>,
    /// True when the step-norm criterion fired.
    pub converged: bool,
    pub final_gradient_norm: f64,
}

/// Weighted normal-equation pieces at a pose: `H = Jᵀ W J`,
/// `g = Jᵀ W r` with `W` carrying frozen robust weights, group scales,
/// and element covariances.
pub(crate) fn normal_equations(
    pose: &Pose,
    model: &ObjectModel,
    scene: &Scene,
    config: &RefineConfig,
    covs: &ElementCovariances,
) -> Result<(Matrix6<f64>, Vector6<f64>)> {
    let stack = projection_residuals(pose, model, scene)?;
    let jac = analytic_jacobians(pose, model, scene)?;
    let ResidualStack::Projection {
        keypoint,
        edge,
        symmetry,
    } = stack
    else {
        unreachable!()
    };

    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    if config.mask.keypoints {
        for ((r, j), sigma) in keypoint.iter().zip(&jac.keypoint_pose).zip(&covs.sigma_k) {
            let w = gm_weight(r.norm(), &config.betas.keypoint);
            h += w * j.transpose() * sigma * j;
            g += w * j.transpose() * sigma * r;
        }
    }
    if config.mask.edges && !edge.is_empty() {
        let scale = group_scale(scene.keypoint_count(), edge.len());
        for ((r, j), sigma) in edge.iter().zip(&jac.edge_pose).zip(&covs.sigma_e) {
            let w = scale * gm_weight(r.norm(), &config.betas.edge);
            h += w * j.transpose() * sigma * j;
            g += w * j.transpose() * sigma * r;
        }
    }
    if config.mask.symmetry && !symmetry.is_empty() {
        let scale = group_scale(scene.keypoint_count(), symmetry.len());
        for (&r, j) in symmetry.iter().zip(&jac.sym_pose) {
            let w = scale * gm_weight(r.abs(), &config.betas.symmetry);
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
    }
    Ok((h, g))
}

fn solve_damped(h: &Matrix6<f64>, g: &Vector6<f64>, damping: f64) -> Option<Vector6<f64>> {
    let mut lhs = *h;
    for i in 0..6 {
        lhs[(i, i)] += damping;
    }
    lhs.cholesky().map(|chol| chol.solve(&(-g)))
}

/// Refines `init` under the masked robust objective.
pub fn gauss_newton_refine(
    init: &Pose,
    model: &ObjectModel,
    scene: &Scene,
    config: &RefineConfig,
) -> Result<RefineReport> {
    let covs = config
        .covs
        .clone()
        .unwrap_or_else(|| ElementCovariances::identity(scene.keypoint_count(), scene.edge_count()));

    let mut pose = *init;
    let mut objective =
        robust_objective_masked(&pose, model, scene, &config.betas, &covs, &config.mask)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;
    let mut gradient_norm = f64::NAN;

    for iter in 1..=config.max_iters {
        iterations = iter;
        let (h, g) = normal_equations(&pose, model, scene, config, &covs)?;
        gradient_norm = g.norm();

        let delta = match solve_damped(&h, &g, config.damping) {
            Some(d) => d,
            None => solve_damped(&h, &g, config.damping.max(1e-6)).ok_or_else(|| {
                PoseError::NumericalFailure("normal matrix singular even after damping".into())
            })?,
        };

        if delta.norm() < config.step_tol {
            converged = true;
            break;
        }

        // Step halving against the full (unfrozen) robust objective.
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=20 {
            let candidate = apply_delta(&pose, &LocalPoseDelta::from_vector(&(delta * scale)));
            match robust_objective_masked(&candidate, model, scene, &config.betas, &covs, &config.mask)
            {
                Ok(obj) if obj < objective => {
                    pose = candidate;
                    objective = obj;
                    trace.push(obj);
                    accepted = true;
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }

    // Gradient at the returned pose (the loop's copy may be stale).
    if let Ok((_, g)) = normal_equations(&pose, model, scene, config, &covs) {
        gradient_norm = g.norm();
    }

    Ok(RefineReport {
        pose,
        iterations,
        objective_trace: trace,
        converged,
        final_gradient_norm: gradient_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use crate::init_solver::initialize_pose;
    use crate::stability::NoiseModel;
    use crate::synth::{demo_model, generate_scene, pose_errors, sample_pose, GenConfig};
    use nalgebra::{DMatrix, DVector, Vector3};

    fn fixture(seed: u64, noise: f64) -> (ObjectModel, Pose, Scene) {
        let model = demo_model();
        let gen = GenConfig {
            seed,
            noise: NoiseModel::new(noise, noise, noise),
            ..Default::default()
        };
        let pose = sample_pose(&model, &gen);
        let scene = generate_scene(&model, &pose, &gen).unwrap();
        (model, pose, scene)
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let (model, pose, scene) = fixture(1, 0.0);
        let report = gauss_newton_refine(&pose, &model, &scene, &RefineConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!(report.objective_trace[0] <= 1e-20);
        assert!(report.final_gradient_norm <= 1e-10);
        assert_eq!(report.pose.translation, pose.translation);
    }

    #[test]
    fn objective_trace_is_strictly_non_increasing() {
        for seed in 0..10 {
            let (model, _, scene) = fixture(seed, 0.005);
            let init = initialize_pose(&model, &scene, 1.0, 1.0).unwrap();
            let report =
                gauss_newton_refine(&init, &model, &scene, &RefineConfig::default()).unwrap();
            for w in report.objective_trace.windows(2) {
                assert!(w[1] < w[0], "trace not decreasing: {:?}", report.objective_trace);
            }
        }
    }

    #[test]
    fn refinement_tracks_first_order_accuracy() {
        // At small Gaussian noise the linear initializer is already near
        // the first-order accuracy floor of the refinement objective, so
        // per-scene improvement is not guaranteed; what must hold is that
        // the refined estimate achieves that floor and never degrades the
        // initialization by more than noise-level jitter.
        let mut init_sq = 0.0;
        let mut ref_sq = 0.0;
        let mut floor_sq = 0.0;
        let mut bounded = 0;
        let n = 100;
        for seed in 0..n {
            let (model, gt, scene) = fixture(300 + seed, 0.001);
            let init = initialize_pose(&model, &scene, 1.0, 1.0).unwrap();
            let report =
                gauss_newton_refine(&init, &model, &scene, &RefineConfig::default()).unwrap();
            let (e_init, _) = pose_errors(&gt, &init, model.diameter);
            let (e_ref, _) = pose_errors(&gt, &report.pose, model.diameter);
            init_sq += e_init * e_init;
            ref_sq += e_ref * e_ref;
            // no catastrophic moves (a mirror flip would sit near π)
            if e_ref <= e_init.max(0.05) {
                bounded += 1;
            }
            let pred = crate::stability::predict_covariance(
                &model,
                &gt,
                &scene,
                group_scale(scene.keypoint_count(), scene.edge_count()),
                group_scale(scene.keypoint_count(), scene.sym_corr_count()),
                &NoiseModel::new(0.001, 0.001, 0.001),
            )
            .unwrap();
            floor_sq += pred.predicted_cov[(0, 0)]
                + pred.predicted_cov[(1, 1)]
                + pred.predicted_cov[(2, 2)];
        }
        let rms_init = (init_sq / n as f64).sqrt();
        let rms_ref = (ref_sq / n as f64).sqrt();
        let rms_floor = (floor_sq / n as f64).sqrt();
        assert!(
            rms_ref <= 1.15 * rms_floor,
            "refined rms {rms_init} vs floor {rms_floor}"
        );
        assert!(
            rms_ref <= 1.15 * rms_init.max(rms_floor),
            "refined rms {rms_ref} vs init {rms_init}"
        );
        assert_eq!(bounded, n, "catastrophic refinement moves");
    }

    #[test]
    fn gradient_matches_frozen_model_finite_differences() {
        let (model, gt, scene) = fixture(17, 0.004);
        let pose = apply_delta(
            &gt,
            &LocalPoseDelta {
                rotation: Vector3::new(0.02, -0.01, 0.03),
                translation: Vector3::new(0.01, 0.02, -0.01),
            },
        );
        let config = RefineConfig::default();
        let covs = ElementCovariances::identity(scene.keypoint_count(), scene.edge_count());
        let (_, g) = normal_equations(&pose, &model, &scene, &config, &covs).unwrap();

        // Frozen-weight quadratic model m(δ) = Σ w_i ‖r_i(pose ⊕ δ)‖²_Σ,
        // whose gradient at δ = 0 is 2 Jᵀ W r.
        let frozen = |p: &Pose| -> f64 {
            let stack = projection_residuals(p, &model, &scene).unwrap();
            let jac_pose = projection_residuals(&pose, &model, &scene).unwrap();
            let (ResidualStack::Projection { keypoint, edge, symmetry },
                 ResidualStack::Projection { keypoint: k0, edge: e0, symmetry: s0 }) =
                (stack, jac_pose)
            else {
                unreachable!()
            };
            let mut total = 0.0;
            for (r, r0) in keypoint.iter().zip(&k0) {
                total += gm_weight(r0.norm(), &config.betas.keypoint) * r.norm_squared();
            }
            let scale_e = group_scale(scene.keypoint_count(), e0.len());
            for (r, r0) in edge.iter().zip(&e0) {
                total += scale_e * gm_weight(r0.norm(), &config.betas.edge) * r.norm_squared();
            }
            let scale_s = group_scale(scene.keypoint_count(), s0.len());
            for (r, r0) in symmetry.iter().zip(&s0) {
                total += scale_s * gm_weight(r0.abs(), &config.betas.symmetry) * r * r;
            }
            total
        };

        let h = 1e-6;
        for dim in 0..6 {
            let mut v = Vector6::zeros();
            v[dim] = h;
            let fp = frozen(&apply_delta(&pose, &LocalPoseDelta::from_vector(&v)));
            v[dim] = -h;
            let fm = frozen(&apply_delta(&pose, &LocalPoseDelta::from_vector(&v)));
            let fd = (fp - fm) / (2.0 * h);
            let analytic = 2.0 * g[dim];
            let scale = analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic - fd).abs() <= 1e-5 * scale,
                "dim {dim}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn directional_derivative_vanishes_at_noiseless_optimum() {
        let (model, pose, scene) = fixture(19, 0.0);
        let config = RefineConfig::default();
        let covs = ElementCovariances::identity(scene.keypoint_count(), scene.edge_count());
        let h = 1e-6;
        for dim in 0..6 {
            let mut v = Vector6::zeros();
            v[dim] = h;
            let fp = robust_objective_masked(
                &apply_delta(&pose, &LocalPoseDelta::from_vector(&v)),
                &model,
                &scene,
                &config.betas,
                &covs,
                &config.mask,
            )
            .unwrap();
            v[dim] = -h;
            let fm = robust_objective_masked(
                &apply_delta(&pose, &LocalPoseDelta::from_vector(&v)),
                &model,
                &scene,
                &config.betas,
                &covs,
                &config.mask,
            )
            .unwrap();
            assert!(((fp - fm) / (2.0 * h)).abs() < 1e-8);
        }
    }

    /// From-scratch classical reprojection-error Gauss-Newton over the
    /// keypoints only, with numerically differentiated Jacobians — an
    /// independent oracle for the reduced solver path.
    fn classical_keypoint_gn(init: &Pose, model: &ObjectModel, scene: &Scene) -> Pose {
        let residuals = |p: &Pose| -> DVector<f64> {
            let mut out = DVector::zeros(2 * scene.keypoint_count());
            for (i, obs) in scene.keypoints.iter().enumerate() {
                let (uv, _) = crate::geometry::project(p, &model.keypoints[obs.index]).unwrap();
                out[2 * i] = uv.x - obs.image_point.x;
                out[2 * i + 1] = uv.y - obs.image_point.y;
            }
            out
        };
        let mut pose = *init;
        let mut obj = residuals(&pose).norm_squared();
        for _ in 0..300 {
            let r = residuals(&pose);
            let h = 1e-7;
            let mut j = DMatrix::zeros(r.len(), 6);
            for dim in 0..6 {
                let mut v = Vector6::zeros();
                v[dim] = h;
                let rp = residuals(&apply_delta(&pose, &LocalPoseDelta::from_vector(&v)));
                v[dim] = -h;
                let rm = residuals(&apply_delta(&pose, &LocalPoseDelta::from_vector(&v)));
                for row in 0..r.len() {
                    j[(row, dim)] = (rp[row] - rm[row]) / (2.0 * h);
                }
            }
            let hmat = j.transpose() * &j;
            let g = j.transpose() * &r;
            let delta = match hmat.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => break,
            };
            if delta.norm() < 1e-12 {
                break;
            }
            let mut scale = 1.0;
            let mut stepped = false;
            for _ in 0..40 {
                let v = Vector6::from_iterator(delta.iter().map(|x| x * scale));
                let cand = apply_delta(&pose, &LocalPoseDelta::from_vector(&v));
                let cand_obj = residuals(&cand).norm_squared();
                if cand_obj < obj {
                    pose = cand;
                    obj = cand_obj;
                    stepped = true;
                    break;
                }
                scale *= 0.5;
            }
            if !stepped {
                break;
            }
        }
        pose
    }

    #[test]
    fn keypoint_only_mask_matches_classical_gauss_newton() {
        // Masking edges and symmetry out and taking the quadratic limit
        // of the robust weight reduces the solver to plain keypoint
        // reprojection Gauss-Newton.
        for seed in 0..50 {
            let (model, _, scene) = fixture(600 + seed, 0.002);
            let init = initialize_pose(&model, &scene, 0.0, 0.0).unwrap();
            let config = RefineConfig {
                betas: RobustWeights::quadratic(),
                mask: GroupMask::keypoints_only(),
                step_tol: 1e-13,
                max_iters: 300,
                ..RefineConfig::default()
            };
            let ours = gauss_newton_refine(&init, &model, &scene, &config)
                .unwrap()
                .pose;
            let oracle = classical_keypoint_gn(&init, &model, &scene);
            assert!(
                (ours.rotation.matrix() - oracle.rotation.matrix()).norm() < 1e-8,
                "seed {seed}"
            );
            assert!((ours.translation - oracle.translation).norm() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn robust_beats_quadratic_under_symmetry_outliers() {
        // Paired A/B over shared scenes; the quadratic arm is the large-β
        // limit of the robust weight.
        let model = demo_model();
        let mut robust_errors = Vec::new();
        let mut quad_errors = Vec::new();
        let mut failed = 0;
        for seed in 0..120 {
            let gen = GenConfig {
                seed: 900 + seed,
                noise: NoiseModel::new(0.001, 0.001, 0.001),
                outlier_s: 0.3,
                ..Default::default()
            };
            let gt = sample_pose(&model, &gen);
            let scene = generate_scene(&model, &gt, &gen).unwrap();
            let quad_config = RefineConfig {
                betas: RobustWeights::quadratic(),
                ..RefineConfig::default()
            };
            let pair = initialize_pose(&model, &scene, 1.0, 1.0).and_then(|init| {
                let robust = gauss_newton_refine(&init, &model, &scene, &RefineConfig::default())?;
                let quad = gauss_newton_refine(&init, &model, &scene, &quad_config)?;
                Ok((robust.pose, quad.pose))
            });
            match pair {
                Ok((robust, quad)) => {
                    robust_errors.push(pose_errors(&gt, &robust, model.diameter).0);
                    quad_errors.push(pose_errors(&gt, &quad, model.diameter).0);
                }
                Err(_) => failed += 1,
            }
        }
        assert!(failed <= 2, "failed pairs: {failed}");
        robust_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quad_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med_r = robust_errors[robust_errors.len() / 2];
        let med_q = quad_errors[quad_errors.len() / 2];
        assert!(med_r < med_q, "robust {med_r} vs quadratic {med_q}");
    }

    #[test]
    fn behind_camera_init_is_rejected() {
        let (model, pose, scene) = fixture(21, 0.0);
        let behind = Pose::new(
            exp_so3(&Vector3::new(0.0, 0.0, 0.1)).compose(&pose.rotation),
            Vector3::new(0.0, 0.0, -5.0),
        );
        assert!(gauss_newton_refine(&behind, &model, &scene, &RefineConfig::default()).is_err());
    }
}
