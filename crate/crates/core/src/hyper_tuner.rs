//! Validation-set tuning of the initializer row weights `(α_E, α_S)`
//! and the robust refinement parameters β.
//!
//! Neither objective has a usable closed-form gradient (the initializer
//! goes through an SVD and an alternating projection), so both tuners
//! use central finite differences with Armijo backtracking. The α
//! objective measures initialization error against the ground truth;
//! the β objective pushes the ground truth toward a critical point of
//! the refinement objective while keeping its Gauss-Newton Hessian well
//! conditioned. β is optimized in log-space, which keeps every
//! parameter positive without explicit constraints.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{PoseError, Result};
use crate::geometry::{ObjectModel, Pose};
use crate::init_solver::initialize_pose;
use crate::observations::Scene;
use crate::residuals::{
    analytic_jacobians, gm_weight, group_scale, projection_residuals, ResidualStack, RobustParams,
    RobustWeights,
};

/// Scenes with ground truth used as the tuning set.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub scenes: Vec<Scene>,
    pub model: ObjectModel,
}

impl ValidationSet {
    pub fn new(model: ObjectModel, scenes: Vec<Scene>) -> Result<Self> {
        if scenes.is_empty() {
            return Err(PoseError::InvalidConfig("validation set is empty".into()));
        }
        if scenes.iter().any(|s| s.gt_pose.is_none()) {
            return Err(PoseError::InvalidConfig(
                "every validation scene needs a ground-truth pose".into(),
            ));
        }
        Ok(ValidationSet { scenes, model })
    }
}

/// Settings shared by both tuners.
#[derive(Debug, Clone, Copy)]
pub struct TunerConfig {
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub max_outer_iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    /// Trade-off coefficient of the condition-number term in the β
    /// objective.
    pub cond_tradeoff: f64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            fd_step: 1e-3,
            max_outer_iters: 50,
            armijo_c: 1e-4,
            shrink: 0.5,
            cond_tradeoff: 1e-3,
        }
    }
}

/// `λ_max / λ_min` of a symmetric PSD matrix, with an infinity sentinel
/// for numerically singular input.
pub fn condition_number(h: &Matrix6<f64>) -> f64 {
    debug_assert!((h - h.transpose()).norm() <= 1e-10 * h.norm().max(1.0));
    let sym = 0.5 * (h + h.transpose());
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 || min <= 1e-14 * max {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Finite-difference steepest descent with Armijo backtracking along the
/// normalized negative gradient. The accepted step length seeds the next
/// line search (doubled), so the iteration can both travel and settle.
/// Returns the final iterate, its objective, the starting objective, and
/// the number of outer iterations taken.
fn fd_descent<F>(x0: Vec<f64>, f: F, config: &TunerConfig) -> (Vec<f64>, f64, f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut x = x0;
    let f0 = f(&x);
    let mut fx = f0;
    let mut iters = 0;
    let mut step = 0.5;

    for _ in 0..config.max_outer_iters {
        iters += 1;
        // central differences, one pair of probes per coordinate
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = config.fd_step * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            grad[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        let g_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !g_norm.is_finite() || g_norm < 1e-12 {
            break;
        }

        let mut t = 2.0 * step;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| xi - t * gi / g_norm)
                .collect();
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx - config.armijo_c * t * g_norm {
                x = cand;
                fx = fc;
                step = t;
                accepted = true;
                break;
            }
            t *= config.shrink;
        }
        if !accepted {
            break;
        }
    }
    (x, fx, f0, iters)
}

/// Result of tuning the initializer weights.
#[derive(Debug, Clone)]
pub struct AlphaTuneResult {
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub outer_iterations: usize,
}

/// Initialization error summed over the validation set:
/// `Σ_I ‖R_I^init - R_I^gt‖_F² + ‖t_I^init - t_I^gt‖²`.
pub fn alpha_objective(val: &ValidationSet, alpha_e: f64, alpha_s: f64) -> f64 {
    if alpha_e < 0.0 || alpha_s < 0.0 {
        return f64::INFINITY;
    }
    let terms: Vec<f64> = val
        .scenes
        .par_iter()
        .map(|scene| {
            let gt = scene.gt_pose.expect("validated");
            match initialize_pose(&val.model, scene, alpha_e, alpha_s) {
                Ok(est) => {
                    (est.rotation.matrix() - gt.rotation.matrix()).norm_squared()
                        + (est.translation - gt.translation).norm_squared()
                }
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    terms.iter().sum()
}

/// Tunes `(α_E, α_S)` from the starting point `(1, 1)`. The returned
/// objective never exceeds the starting objective.
pub fn tune_alphas(val: &ValidationSet, config: &TunerConfig) -> AlphaTuneResult {
    let f = |x: &[f64]| alpha_objective(val, x[0], x[1]);
    let (x, fx, f0, iters) = fd_descent(vec![1.0, 1.0], f, config);
    AlphaTuneResult {
        alpha_e: x[0],
        alpha_s: x[1],
        initial_objective: f0,
        final_objective: fx,
        outer_iterations: iters,
    }
}

/// Gradient of the robust objective with respect to the pose tangent,
/// evaluated at the ground truth, and its Gauss-Newton Hessian.
pub fn objective_gradient_and_hessian(
    model: &ObjectModel,
    gt: &Pose,
    scene: &Scene,
    betas: &RobustWeights,
) -> Result<(Vector6<f64>, Matrix6<f64>)> {
    let stack = projection_residuals(gt, model, scene)?;
    let jac = analytic_jacobians(gt, model, scene)?;
    let ResidualStack::Projection {
        keypoint,
        edge,
        symmetry,
    } = stack
    else {
        unreachable!()
    };

    let mut grad = Vector6::<f64>::zeros();
    let mut hess = Matrix6::<f64>::zeros();

    // d/dc of w(‖r‖)·‖r‖² with w the Geman-McClure weight:
    // w'(‖r‖)·‖r‖·(Jᵀr) + 2w·Jᵀr, with w'(x) = -2x·w(x)/(β₂²+x²).
    let mut accumulate = |r_norm2: f64, jt_r: Vector6<f64>, jt_j: Matrix6<f64>, p: &RobustParams, scale: f64| {
        let n = r_norm2.sqrt();
        let w = gm_weight(n, p);
        let denom = p.beta2 * p.beta2 + r_norm2;
        grad += scale * (-2.0 * w * r_norm2 / denom + 2.0 * w) * jt_r;
        hess += scale * w * jt_j;
    };

    for (r, j) in keypoint.iter().zip(&jac.keypoint_pose) {
        accumulate(r.norm_squared(), j.transpose() * r, j.transpose() * j, &betas.keypoint, 1.0);
    }
    let scale_e = group_scale(scene.keypoint_count(), scene.edge_count());
    for (r, j) in edge.iter().zip(&jac.edge_pose) {
        accumulate(r.norm_squared(), j.transpose() * r, j.transpose() * j, &betas.edge, scale_e);
    }
    let scale_s = group_scale(scene.keypoint_count(), scene.sym_corr_count());
    for (&r, j) in symmetry.iter().zip(&jac.sym_pose) {
        accumulate(r * r, j.transpose() * r, j.transpose() * j, &betas.symmetry, scale_s);
    }
    Ok((grad, hess))
}

/// Result of tuning the robust parameters.
#[derive(Debug, Clone)]
pub struct BetaTuneResult {
    pub betas: RobustWeights,
    /// Scenes whose Hessian was singular at the starting point and were
    /// excluded from the objective.
    pub skipped_scenes: Vec<usize>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub outer_iterations: usize,
}

fn betas_from_log(theta: &[f64]) -> RobustWeights {
    RobustWeights {
        keypoint: RobustParams::new(theta[0].exp(), theta[1].exp()),
        edge: RobustParams::new(theta[2].exp(), theta[3].exp()),
        symmetry: RobustParams::new(theta[4].exp(), theta[5].exp()),
    }
}

/// The per-scene β objective term
/// `‖∂f/∂c(0, β)‖² + cond_tradeoff · κ(∂²f/∂²c(0, β))`.
pub fn beta_objective_term(
    model: &ObjectModel,
    scene: &Scene,
    betas: &RobustWeights,
    cond_tradeoff: f64,
) -> f64 {
    let gt = scene.gt_pose.expect("validated");
    match objective_gradient_and_hessian(model, &gt, scene, betas) {
        Ok((grad, hess)) => grad.norm_squared() + cond_tradeoff * condition_number(&hess),
        Err(_) => f64::INFINITY,
    }
}

/// Tunes β over the validation set in log-space, starting from the
/// crate defaults. Scenes with a singular Hessian at the start are
/// reported and skipped; if every scene is singular the tuner fails.
pub fn tune_betas(val: &ValidationSet, config: &TunerConfig) -> Result<BetaTuneResult> {
    let start = RobustWeights::default();
    let theta0 = vec![
        start.keypoint.beta1.ln(),
        start.keypoint.beta2.ln(),
        start.edge.beta1.ln(),
        start.edge.beta2.ln(),
        start.symmetry.beta1.ln(),
        start.symmetry.beta2.ln(),
    ];

    let skipped: Vec<usize> = val
        .scenes
        .iter()
        .enumerate()
        .filter(|(_, scene)| {
            !beta_objective_term(&val.model, scene, &start, config.cond_tradeoff).is_finite()
        })
        .map(|(i, _)| i)
        .collect();
    if skipped.len() == val.scenes.len() {
        return Err(PoseError::ConditioningFailure(
            "every validation scene has a singular Hessian at the starting point".into(),
        ));
    }

    let active: Vec<&Scene> = val
        .scenes
        .iter()
        .enumerate()
        .filter(|(i, _)| !skipped.contains(i))
        .map(|(_, s)| s)
        .collect();

    let f = |theta: &[f64]| -> f64 {
        let betas = betas_from_log(theta);
        let terms: Vec<f64> = active
            .par_iter()
            .map(|scene| beta_objective_term(&val.model, scene, &betas, config.cond_tradeoff))
            .collect();
        terms.iter().sum()
    };
    let (theta, fx, f0, iters) = fd_descent(theta0, f, config);

    Ok(BetaTuneResult {
        betas: betas_from_log(&theta),
        skipped_scenes: skipped,
        initial_objective: f0,
        final_objective: fx,
        outer_iterations: iters,
    })
}
