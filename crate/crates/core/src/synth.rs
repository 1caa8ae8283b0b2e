//! Synthetic scene generation, evaluation metrics, and the ablation
//! benchmark harness.
//!
//! The generator stands in for learned predictors: it projects a model
//! under a ground-truth pose, perturbs every observation with Gaussian
//! noise in normalized coordinates, and optionally replaces a fraction
//! of each family with uniform outliers drawn from the family's
//! bounding region. Everything is deterministic under a seed.

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{PoseError, Result};
use crate::geometry::{project, CameraIntrinsics, ObjectModel, Pose, Rotation, SymmetryPlane};
use crate::init_solver::initialize_pose;
use crate::observations::{EdgeObs, KeypointObs, NoiseMeta, Scene, SymCorrObs};
use crate::refine_solver::{gauss_newton_refine, RefineConfig};
use crate::residuals::{GroupMask, RobustWeights};
use crate::stability::NoiseModel;

/// Scene-generation parameters.
#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    /// Depth range in multiples of the model diameter.
    pub z_min: f64,
    pub z_max: f64,
    /// Half-extent of the normalized-coordinate viewing frustum.
    pub frustum_half_extent: f64,
    /// Gaussian noise levels (normalized units) per observation family.
    pub noise: NoiseModel,
    /// Outlier fractions per family, each in `[0, 1]`.
    pub outlier_k: f64,
    pub outlier_e: f64,
    pub outlier_s: f64,
    /// Number of symmetry correspondences to emit.
    pub n_sym_corrs: usize,
    /// Intrinsics attached to the scene (generation itself works in
    /// normalized coordinates).
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            z_min: 2.0,
            z_max: 6.0,
            frustum_half_extent: 0.5,
            noise: NoiseModel::new(0.0, 0.0, 0.0),
            outlier_k: 0.0,
            outlier_e: 0.0,
            outlier_s: 0.0,
            n_sym_corrs: 50,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
            },
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = [self.outlier_k, self.outlier_e, self.outlier_s]
            .iter()
            .all(|r| (0.0..=1.0).contains(r));
        if !rates_ok {
            return Err(PoseError::InvalidConfig("outlier rates must lie in [0, 1]".into()));
        }
        if !(self.z_min > 0.0 && self.z_max >= self.z_min) {
            return Err(PoseError::InvalidConfig("need 0 < z_min <= z_max".into()));
        }
        Ok(())
    }

    /// Copy with the scene seed replaced by a per-index derivation.
    pub fn for_scene(&self, index: u64) -> GenConfig {
        GenConfig {
            seed: mix_seed(self.seed, index),
            ..*self
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-scene seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pose_rng(config: &GenConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    rng
}

fn obs_rng(config: &GenConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    rng
}

fn uniform_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    let q = Quaternion::new(g(), g(), g(), g());
    let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
    Rotation::try_new(*m.matrix(), 1e-9).expect("unit quaternion yields a rotation")
}

/// Largest canonical-frame radius of the model, a rotation-invariant
/// bound used to keep sampled poses inside the frustum.
fn bounding_radius(model: &ObjectModel) -> f64 {
    model
        .keypoints
        .iter()
        .chain(model.surface_samples.iter())
        .map(|p| p.norm())
        .fold(0.0, f64::max)
}

/// Samples a pose with uniform rotation, depth uniform in
/// `[z_min, z_max]` model diameters, and lateral offsets chosen so the
/// whole model provably stays inside the frustum.
pub fn sample_pose(model: &ObjectModel, config: &GenConfig) -> Pose {
    let mut rng = pose_rng(config);
    let rotation = uniform_rotation(&mut rng);
    let z = model.diameter * rng.random_range(config.z_min..=config.z_max);
    let r = bounding_radius(model);
    let lat_max = (config.frustum_half_extent * (z - r) - r).max(0.0);
    let x = rng.random_range(-1.0..=1.0) * lat_max;
    let y = rng.random_range(-1.0..=1.0) * lat_max;
    Pose::new(rotation, Vector3::new(x, y, z))
}

fn check_frustum(p: &Vector2<f64>, half_extent: f64) -> Result<()> {
    if p.x.abs() > half_extent || p.y.abs() > half_extent {
        return Err(PoseError::FrustumViolation {
            x: p.x,
            y: p.y,
            half_extent,
        });
    }
    Ok(())
}

fn gaussian2(rng: &mut ChaCha8Rng, sigma: f64) -> Vector2<f64> {
    let gx: f64 = StandardNormal.sample(rng);
    let gy: f64 = StandardNormal.sample(rng);
    Vector2::new(gx * sigma, gy * sigma)
}

/// Axis-aligned bounding box of a set of 2D values.
fn bbox(points: impl Iterator<Item = Vector2<f64>>) -> (Vector2<f64>, Vector2<f64>) {
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Uniform draw over a group's observation bounding region.
fn uniform_in_bbox(rng: &mut ChaCha8Rng, lo: &Vector2<f64>, hi: &Vector2<f64>) -> Vector2<f64> {
    let draw = |a: f64, b: f64, rng: &mut ChaCha8Rng| {
        if b > a {
            rng.random_range(a..=b)
        } else {
            a
        }
    };
    Vector2::new(draw(lo.x, hi.x, rng), draw(lo.y, hi.y, rng))
}

/// Generates all observations for `gt_pose`.
///
/// Keypoints and edges are projections plus Gaussian noise; symmetry
/// pairs project a random surface sample and its mirror image, with the
/// noise applied to the second endpoint. Outlier elements are replaced
/// by uniform draws over their family's noiseless bounding region.
pub fn generate_scene(model: &ObjectModel, gt_pose: &Pose, config: &GenConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = obs_rng(config);
    let h = config.frustum_half_extent;

    let mut kp_clean = Vec::with_capacity(model.keypoint_count());
    for p in &model.keypoints {
        let (uv, _) = project(gt_pose, p)?;
        check_frustum(&uv, h)?;
        kp_clean.push(uv);
    }
    let mut keypoints: Vec<KeypointObs> = kp_clean
        .iter()
        .enumerate()
        .map(|(index, uv)| KeypointObs {
            index,
            image_point: uv + gaussian2(&mut rng, config.noise.sigma_k),
        })
        .collect();

    let edge_clean: Vec<Vector2<f64>> = model
        .edges
        .iter()
        .map(|&(s, t)| kp_clean[t] - kp_clean[s])
        .collect();
    let mut edges: Vec<EdgeObs> = edge_clean
        .iter()
        .enumerate()
        .map(|(edge_index, v)| EdgeObs {
            edge_index,
            vector: v + gaussian2(&mut rng, config.noise.sigma_e),
        })
        .collect();

    let mut sym_clean = Vec::with_capacity(config.n_sym_corrs);
    for _ in 0..config.n_sym_corrs {
        let idx = rng.random_range(0..model.surface_samples.len());
        let q = model.surface_samples[idx];
        let q_mirror = model.symmetry.reflect(&q);
        let (uv1, _) = project(gt_pose, &q)?;
        let (uv2, _) = project(gt_pose, &q_mirror)?;
        check_frustum(&uv1, h)?;
        check_frustum(&uv2, h)?;
        sym_clean.push((uv1, uv2));
    }
    let mut sym_corrs: Vec<SymCorrObs> = sym_clean
        .iter()
        .map(|(uv1, uv2)| SymCorrObs {
            q1: *uv1,
            q2: uv2 + gaussian2(&mut rng, config.noise.sigma_s),
        })
        .collect();

    // Outlier replacement, one uniform mask draw per element so the
    // noise pattern above is independent of the rates.
    if !keypoints.is_empty() {
        let (lo, hi) = bbox(kp_clean.iter().copied());
        for obs in keypoints.iter_mut() {
            let flag = rng.random_range(0.0..1.0) < config.outlier_k;
            if flag {
                obs.image_point = uniform_in_bbox(&mut rng, &lo, &hi);
            }
        }
    }
    if !edges.is_empty() {
        let (lo, hi) = bbox(edge_clean.iter().copied());
        for obs in edges.iter_mut() {
            let flag = rng.random_range(0.0..1.0) < config.outlier_e;
            if flag {
                obs.vector = uniform_in_bbox(&mut rng, &lo, &hi);
            }
        }
    }
    if !sym_corrs.is_empty() {
        let (lo, hi) = bbox(sym_clean.iter().map(|(_, uv2)| *uv2));
        for obs in sym_corrs.iter_mut() {
            let flag = rng.random_range(0.0..1.0) < config.outlier_s;
            if flag {
                obs.q2 = uniform_in_bbox(&mut rng, &lo, &hi);
            }
        }
    }

    Ok(Scene {
        intrinsics: config.intrinsics,
        keypoints,
        edges,
        sym_corrs,
        gt_pose: Some(*gt_pose),
        noise_meta: Some(NoiseMeta {
            sigma_k: config.noise.sigma_k,
            sigma_e: config.noise.sigma_e,
            sigma_s: config.noise.sigma_s,
            outlier_k: config.outlier_k,
            outlier_e: config.outlier_e,
            outlier_s: config.outlier_s,
        }),
    })
}

/// Mean surface distance between a model transformed by two poses.
///
/// Plain variant: mean over samples of `‖T_a(x) - T_b(x)‖`.
pub fn add_distance(model: &ObjectModel, pose_a: &Pose, pose_b: &Pose) -> f64 {
    assert!(!model.surface_samples.is_empty(), "model has no surface samples");
    let sum: f64 = model
        .surface_samples
        .iter()
        .map(|x| (pose_a.transform_point(x) - pose_b.transform_point(x)).norm())
        .sum();
    sum / model.surface_samples.len() as f64
}

/// Closest-point variant for pose-ambiguous objects: mean over the
/// `pose_a` set of the distance to the nearest `pose_b` point.
pub fn add_s_distance(model: &ObjectModel, pose_a: &Pose, pose_b: &Pose) -> f64 {
    assert!(!model.surface_samples.is_empty(), "model has no surface samples");
    let a: Vec<Vector3<f64>> = model
        .surface_samples
        .iter()
        .map(|x| pose_a.transform_point(x))
        .collect();
    let b: Vec<Vector3<f64>> = model
        .surface_samples
        .iter()
        .map(|x| pose_b.transform_point(x))
        .collect();
    let sum: f64 = a
        .iter()
        .map(|pa| {
            b.iter()
                .map(|pb| (pa - pb).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    sum / a.len() as f64
}

/// The surface-distance metric, dispatching on the model's
/// pose-ambiguity flag.
pub fn add_s(model: &ObjectModel, pose_a: &Pose, pose_b: &Pose) -> f64 {
    if model.has_pose_ambiguity {
        add_s_distance(model, pose_a, pose_b)
    } else {
        add_distance(model, pose_a, pose_b)
    }
}

/// Geodesic rotation error (radians) and diameter-relative translation
/// error between two poses.
pub fn pose_errors(gt: &Pose, est: &Pose, diameter: f64) -> (f64, f64) {
    let rel = gt.rotation.matrix().transpose() * est.rotation.matrix();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rot = cos.acos();
    let trans = (est.translation - gt.translation).norm() / diameter;
    (rot, trans)
}

/// One solver configuration to benchmark.
#[derive(Debug, Clone)]
pub struct SolverArm {
    pub name: String,
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub use_edges: bool,
    pub use_symmetry: bool,
    pub refine: bool,
    pub betas: RobustWeights,
}

impl SolverArm {
    /// The three standard ablation arms: keypoints only, keypoints plus
    /// symmetry correspondences, and the full model.
    pub fn ablation_arms(alpha_e: f64, alpha_s: f64, betas: RobustWeights) -> Vec<SolverArm> {
        vec![
            SolverArm {
                name: "keypoints".into(),
                alpha_e: 0.0,
                alpha_s: 0.0,
                use_edges: false,
                use_symmetry: false,
                refine: true,
                betas,
            },
            SolverArm {
                name: "keypoints+symmetry".into(),
                alpha_e: 0.0,
                alpha_s,
                use_edges: false,
                use_symmetry: true,
                refine: true,
                betas,
            },
            SolverArm {
                name: "full".into(),
                alpha_e,
                alpha_s,
                use_edges: true,
                use_symmetry: true,
                refine: true,
                betas,
            },
        ]
    }

    fn mask(&self) -> GroupMask {
        GroupMask {
            keypoints: true,
            edges: self.use_edges,
            symmetry: self.use_symmetry,
        }
    }

    /// Runs this arm on one scene and scores it against the ground truth.
    pub fn solve_scene(&self, model: &ObjectModel, scene: &Scene) -> Result<Pose> {
        let alpha_e = if self.use_edges { self.alpha_e } else { 0.0 };
        let alpha_s = if self.use_symmetry { self.alpha_s } else { 0.0 };
        let init = initialize_pose(model, scene, alpha_e, alpha_s)?;
        if !self.refine {
            return Ok(init);
        }
        let config = RefineConfig {
            betas: self.betas,
            mask: self.mask(),
            ..RefineConfig::default()
        };
        let report = gauss_newton_refine(&init, model, scene, &config)?;
        Ok(report.pose)
    }
}

/// Per-arm, per-scene benchmark outcome (`None` when the solver failed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneOutcome {
    pub rot_error: f64,
    pub trans_error: f64,
    pub add: f64,
}

/// Aggregates for one arm.
#[derive(Debug, Clone)]
pub struct ArmMetrics {
    pub name: String,
    /// Fraction of scenes whose surface distance is below 10% of the
    /// model diameter (failed scenes count as misses).
    pub add_s_accuracy: f64,
    pub rotation_errors: Vec<f64>,
    pub translation_errors: Vec<f64>,
    pub mean_rot: f64,
    pub median_rot: f64,
    pub mean_trans: f64,
    pub median_trans: f64,
    pub failures: usize,
}

/// Full benchmark report: paired per-scene outcomes plus per-arm
/// aggregates.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub arms: Vec<ArmMetrics>,
    /// `outcomes[arm][scene]`.
    pub outcomes: Vec<Vec<Option<SceneOutcome>>>,
    pub n_scenes: usize,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs every arm on `n_scenes` shared scenes (paired design) and
/// aggregates metrics. Deterministic for a fixed `gen.seed`.
pub fn run_benchmark(
    model: &ObjectModel,
    n_scenes: usize,
    gen: &GenConfig,
    arms: &[SolverArm],
) -> Result<MetricsReport> {
    if n_scenes == 0 {
        return Err(PoseError::InvalidConfig("benchmark needs at least one scene".into()));
    }
    if arms.is_empty() {
        return Err(PoseError::InvalidConfig("benchmark needs at least one arm".into()));
    }
    gen.validate()?;

    let per_scene: Vec<Vec<Option<SceneOutcome>>> = (0..n_scenes as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = gen.for_scene(i);
            let gt = sample_pose(model, &cfg);
            let scene = match generate_scene(model, &gt, &cfg) {
                Ok(s) => s,
                Err(_) => return vec![None; arms.len()],
            };
            arms.iter()
                .map(|arm| {
                    arm.solve_scene(model, &scene).ok().map(|pose| {
                        let (rot, trans) = pose_errors(&gt, &pose, model.diameter);
                        SceneOutcome {
                            rot_error: rot,
                            trans_error: trans,
                            add: add_s(model, &pose, &gt),
                        }
                    })
                })
                .collect()
        })
        .collect();

    // transpose to outcomes[arm][scene], fixed aggregation order
    let mut outcomes = vec![Vec::with_capacity(n_scenes); arms.len()];
    for scene_row in &per_scene {
        for (a, outcome) in scene_row.iter().enumerate() {
            outcomes[a].push(*outcome);
        }
    }

    let threshold = 0.1 * model.diameter;
    let arms_metrics = arms
        .iter()
        .zip(&outcomes)
        .map(|(arm, rows)| {
            let rot: Vec<f64> = rows.iter().flatten().map(|o| o.rot_error).collect();
            let trans: Vec<f64> = rows.iter().flatten().map(|o| o.trans_error).collect();
            let accurate = rows
                .iter()
                .flatten()
                .filter(|o| o.add < threshold)
                .count();
            let failures = rows.iter().filter(|o| o.is_none()).count();
            ArmMetrics {
                name: arm.name.clone(),
                add_s_accuracy: accurate as f64 / n_scenes as f64,
                mean_rot: mean(&rot),
                median_rot: median(&rot),
                mean_trans: mean(&trans),
                median_trans: median(&trans),
                rotation_errors: rot,
                translation_errors: trans,
                failures,
            }
        })
        .collect();

    Ok(MetricsReport {
        arms: arms_metrics,
        outcomes,
        n_scenes,
    })
}

/// Renders the per-scene outcome table as CSV (deterministic bytes).
pub fn benchmark_csv(report: &MetricsReport, arms: &[SolverArm]) -> String {
    use crate::io::fmt_f64;
    let mut out = String::from("scene,arm,rot_error_rad,trans_error_rel,add,failed\n");
    for (a, arm) in arms.iter().enumerate() {
        for (s, outcome) in report.outcomes[a].iter().enumerate() {
            match outcome {
                Some(o) => out.push_str(&format!(
                    "{s},{},{},{},{},0\n",
                    arm.name,
                    fmt_f64(o.rot_error),
                    fmt_f64(o.trans_error),
                    fmt_f64(o.add)
                )),
                None => out.push_str(&format!("{s},{},nan,nan,nan,1\n", arm.name)),
            }
        }
    }
    out
}

/// Uniform grid samples over the faces of an axis-aligned box.
fn box_surface(center: &Vector3<f64>, half: &Vector3<f64>, per_axis: usize) -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    let steps: Vec<f64> = (0..per_axis)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / per_axis as f64)
        .collect();
    for &u in &steps {
        for &v in &steps {
            for (axis, sign) in [(0usize, 1.0f64), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]
            {
                let mut p = Vector3::zeros();
                p[axis] = sign;
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                pts.push(center + p.component_mul(half));
            }
        }
    }
    pts
}

/// UV-grid samples over an axis-aligned ellipsoid.
fn ellipsoid_surface(center: &Vector3<f64>, radii: &Vector3<f64>, n_u: usize, n_v: usize) -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    for i in 0..n_u {
        let phi = std::f64::consts::PI * (i as f64 + 0.5) / n_u as f64;
        for j in 0..n_v {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_v as f64;
            let d = Vector3::new(
                phi.sin() * theta.cos(),
                phi.sin() * theta.sin(),
                phi.cos(),
            );
            pts.push(center + d.component_mul(radii));
        }
    }
    pts
}

/// Farthest-point subsampling, seeded at the point farthest from the
/// centroid. Deterministic.
fn farthest_point_sample(points: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    if points.len() <= n {
        return points.to_vec();
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut chosen = Vec::with_capacity(n);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let first = points
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            (*a - centroid)
                .norm_squared()
                .partial_cmp(&(*b - centroid).norm_squared())
                .unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    let mut current = first;
    for _ in 0..n {
        chosen.push(points[current]);
        let picked = points[current];
        let mut best = 0;
        let mut best_d2 = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - picked).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    chosen
}

/// Procedural surface cloud for models that ship none: a box/ellipsoid
/// composite fit to the keypoint bounding box, mirrored across the
/// symmetry plane, and farthest-point sampled down to `n` points.
pub fn procedural_surface_samples(
    keypoints: &[Vector3<f64>],
    plane: &SymmetryPlane,
    n: usize,
) -> Vec<Vector3<f64>> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in keypoints {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = (lo + hi) / 2.0;
    let half = ((hi - lo) / 2.0).map(|x| x.max(1e-3));
    let mut cloud = box_surface(&center, &half, 8);
    cloud.extend(ellipsoid_surface(&center, &half, 12, 24));
    let mirrored: Vec<Vector3<f64>> = cloud.iter().map(|p| plane.reflect(p)).collect();
    cloud.extend(mirrored);
    farthest_point_sample(&cloud, n)
}

/// A small box-shaped demo model with eight corner keypoints and a
/// left/right symmetry plane.
pub fn demo_model() -> ObjectModel {
    let half = Vector3::new(0.25, 0.18, 0.32);
    let mut keypoints = Vec::with_capacity(8);
    for &sx in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sz in &[-1.0, 1.0] {
                keypoints.push(Vector3::new(sx * half.x, sy * half.y, sz * half.z));
            }
        }
    }
    let plane = SymmetryPlane::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).unwrap();
    let samples = procedural_surface_samples(&keypoints, &plane, 512);
    ObjectModel::new(keypoints, None, plane, samples, false).unwrap()
}

/// A randomized model for sweeps: keypoints uniform in a box, a random
/// symmetry plane through the origin, and a mirrored ball-shaped sample
/// cloud.
pub fn random_model(seed: u64) -> ObjectModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let keypoints: Vec<Vector3<f64>> = (0..8)
        .map(|_| {
            Vector3::new(
                rng.random_range(-0.3..=0.3),
                rng.random_range(-0.3..=0.3),
                rng.random_range(-0.3..=0.3),
            )
        })
        .collect();
    let n = {
        let gx: f64 = StandardNormal.sample(&mut rng);
        let gy: f64 = StandardNormal.sample(&mut rng);
        let gz: f64 = StandardNormal.sample(&mut rng);
        let v = Vector3::new(gx, gy, gz);
        v / v.norm()
    };
    let plane = SymmetryPlane::new(n, Vector3::zeros()).unwrap();
    let mut samples: Vec<Vector3<f64>> = (0..160)
        .map(|_| {
            loop {
                let p = Vector3::new(
                    rng.random_range(-0.3..=0.3),
                    rng.random_range(-0.3..=0.3),
                    rng.random_range(-0.3..=0.3),
                );
                if p.norm() <= 0.3 {
                    return p;
                }
            }
        })
        .collect();
    let mirrored: Vec<Vector3<f64>> = samples.iter().map(|p| plane.reflect(p)).collect();
    samples.extend(mirrored);
    ObjectModel::new(keypoints, None, plane, samples, false).unwrap()
}
