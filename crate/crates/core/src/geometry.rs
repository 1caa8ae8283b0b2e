//! Rigid-motion and camera primitives.
//!
//! Conventions used everywhere in this crate:
//!
//! - Poses map the object's canonical frame into the camera frame:
//!   `x_cam = R * x_obj + t`.
//! - All solver-facing 2D quantities live in *normalized* camera
//!   coordinates; pixel intrinsics are applied exactly once at ingestion.
//! - Poses are perturbed locally with an exponential-map tangent
//!   `(c, c_bar)` acting on camera-frame points: `x ↦ exp(c×) x + c_bar`,
//!   i.e. `R <- exp(c×) R` and `t <- exp(c×) t + c_bar`. Under this
//!   chart the projection Jacobians depend only on the projected
//!   coordinates and depth.
//! - A projection is valid only for depth `Z > CHEIRALITY_EPS`
//!   (points in front of the camera).

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};

use crate::error::{PoseError, Result};

/// Depth threshold below which a projection is rejected.
pub const CHEIRALITY_EPS: f64 = 1e-9;

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    /// The identity rotation.
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and determinant
    /// against `tol` (Frobenius for `RᵀR - I`, absolute for `det - 1`).
    pub fn try_new(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(PoseError::InvalidModel(format!(
                "matrix is not a rotation: |R'R - I| = {ortho:.3e}, det = {det:.6}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Projects an arbitrary matrix onto the nearest rotation
    /// (polar decomposition via SVD, with a determinant fix).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd(u)");
        let v_t = svd.v_t.expect("svd(v_t)");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
            r = u * flip * v_t;
        }
        Rotation(r)
    }

    /// The underlying 3×3 matrix.
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Applies the rotation to a vector.
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Composes `self * other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Inverse rotation (transpose).
    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Tangent vector of this rotation (matrix logarithm, axis * angle).
    ///
    /// The angle comes from `atan2(‖skew part‖, cos θ)`, which keeps full
    /// precision near the identity where an acos-based formula loses half
    /// the significant digits; angles near π fall back to the diagonal
    /// construction.
    pub fn log(&self) -> Vector3<f64> {
        let m = &self.0;
        let s = 0.5
            * Vector3::new(
                m[(2, 1)] - m[(1, 2)],
                m[(0, 2)] - m[(2, 0)],
                m[(1, 0)] - m[(0, 1)],
            );
        let sin_theta = s.norm();
        let cos_theta = 0.5 * (m.trace() - 1.0);
        let theta = sin_theta.atan2(cos_theta);
        if sin_theta > 1e-6 {
            return s * (theta / sin_theta);
        }
        if cos_theta > 0.0 {
            // small angle: θ/sin θ = 1 + θ²/6 + O(θ⁴)
            return s * (1.0 + theta * theta / 6.0);
        }
        // near a half turn: extract the axis from R + I, whose columns
        // are proportional to it
        let b = m + Matrix3::identity();
        let col = (0..3)
            .map(|i| b.column(i).into_owned())
            .max_by(|a, c| a.norm_squared().partial_cmp(&c.norm_squared()).unwrap())
            .expect("three columns");
        let mut axis = col / col.norm();
        // orient the axis consistently with the (tiny) skew part
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    /// Row-major flattening, the layout used by the linear initializer
    /// and the file formats.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Builds from a row-major flattening; `tol` as in [`Rotation::try_new`],
    /// except that inputs within `tol` are re-projected onto SO(3) so the
    /// stored matrix is orthonormal to machine precision.
    pub fn from_row_major(r: &[f64; 9], tol: f64) -> Result<Self> {
        let m = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        Self::try_new(m, tol)?;
        Ok(Self::nearest(&m))
    }
}

/// Exponential map of so(3): the rotation `exp(c×)`.
///
/// Uses the closed form `I + sin(θ)/θ [c]× + (1-cos(θ))/θ² [c]×²` and a
/// series expansion of the two coefficients for small angles, so the
/// result is accurate and orthonormal for any finite `c`.
pub fn exp_so3(c: &Vector3<f64>) -> Rotation {
    let theta2 = c.norm_squared();
    let (a, b) = if theta2 < 1e-8 {
        // sin(θ)/θ and (1-cos(θ))/θ² to O(θ⁴)
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        ((theta.sin()) / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(c);
    Rotation(Matrix3::identity() + a * k + b * (k * k))
}

/// Cross-product matrix `[v]×` such that `[v]× w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rigid transform from the canonical object frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Maps a canonical-frame point into the camera frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    /// Tangent difference `self ⊖ reference`: the delta that maps
    /// `reference` onto `self` under [`apply_delta`].
    pub fn delta_from(&self, reference: &Pose) -> LocalPoseDelta {
        let rel = self.rotation.compose(&reference.rotation.inverse());
        LocalPoseDelta {
            rotation: rel.log(),
            translation: self.translation - rel.apply(&reference.translation),
        }
    }
}

/// Tangent-space perturbation of a pose: a rotation increment `c`
/// (radians, applied on the left) and a translation increment `c_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPoseDelta {
    /// Rotation tangent `c` (axis * angle).
    pub rotation: Vector3<f64>,
    /// Translation increment `c_bar`.
    pub translation: Vector3<f64>,
}

impl LocalPoseDelta {
    pub fn zero() -> Self {
        LocalPoseDelta {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    /// Packs as `(c, c_bar)` — the column order of all pose Jacobians.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        LocalPoseDelta {
            rotation: Vector3::new(v[0], v[1], v[2]),
            translation: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.rotation.norm_squared() + self.translation.norm_squared()).sqrt()
    }
}

/// Applies a tangent delta on camera-frame points, `x ↦ exp(c×) x + c_bar`:
/// the pose becomes `(exp(c×) R, exp(c×) t + c_bar)`.
///
/// The rotation is re-orthonormalized (nearest rotation) when the
/// accumulated drift exceeds 1e-12; a zero delta leaves the pose
/// bit-identical.
pub fn apply_delta(pose: &Pose, delta: &LocalPoseDelta) -> Pose {
    let inc = exp_so3(&delta.rotation);
    let r = inc.compose(&pose.rotation);
    let drift = (r.0.transpose() * r.0 - Matrix3::identity()).norm();
    let rotation = if drift > 1e-12 { Rotation::nearest(&r.0) } else { r };
    Pose {
        rotation,
        translation: inc.apply(&pose.translation) + delta.translation,
    }
}

/// Pinhole projection into normalized camera coordinates.
///
/// Returns `((X/Z, Y/Z), Z)` for `(X, Y, Z) = R p + t`, or
/// [`PoseError::DepthNonPositive`] when `Z <= CHEIRALITY_EPS`.
pub fn project(pose: &Pose, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
    let cam = pose.transform_point(point);
    if cam.z <= CHEIRALITY_EPS {
        return Err(PoseError::DepthNonPositive { depth: cam.z });
    }
    Ok((Vector2::new(cam.x / cam.z, cam.y / cam.z), cam.z))
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(PoseError::IntrinsicsInvalid { fx, fy });
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Homogeneous normalized coordinates `((u-cx)/fx, (v-cy)/fy, 1)`.
    pub fn normalize_pixel(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Inverse of [`CameraIntrinsics::normalize_pixel`] on the image plane.
    pub fn denormalize(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(p.x * self.fx + self.cx, p.y * self.fy + self.cy)
    }

    /// Scales a displacement vector from pixel to normalized units.
    pub fn normalize_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(v.x / self.fx, v.y / self.fy)
    }

    /// Scales a displacement vector from normalized to pixel units.
    pub fn denormalize_vector(&self, v: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(v.x * self.fx, v.y * self.fy)
    }
}

/// The object's reflection-symmetry plane in the canonical frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryPlane {
    /// Unit normal of the plane.
    pub normal: Vector3<f64>,
    /// Any point on the plane.
    pub point: Vector3<f64>,
}

impl SymmetryPlane {
    /// Builds a plane, renormalizing `normal` when it is within `1e-6`
    /// of unit length and rejecting it otherwise.
    pub fn new(normal: Vector3<f64>, point: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(PoseError::InvalidModel(format!(
                "symmetry normal has length {n:.8}, expected 1"
            )));
        }
        Ok(SymmetryPlane {
            normal: normal / n,
            point,
        })
    }

    /// Mirror image of `p` across the plane:
    /// `(I - 2nnᵀ) p + 2nnᵀ q` with `q` a point on the plane.
    pub fn reflect(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let n = &self.normal;
        p - 2.0 * n.dot(&(p - self.point)) * n
    }
}

/// The canonical 3D object description consumed by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    /// Canonical keypoint coordinates.
    pub keypoints: Vec<Vector3<f64>>,
    /// Keypoint graph as `(source, target)` index pairs.
    pub edges: Vec<(usize, usize)>,
    /// Reflection-symmetry plane.
    pub symmetry: SymmetryPlane,
    /// Maximum pairwise distance over keypoints and surface samples.
    pub diameter: f64,
    /// Dense surface samples for metrics and symmetry-pair synthesis.
    pub surface_samples: Vec<Vector3<f64>>,
    /// Whether the object's pose is ambiguous (selects the closest-point
    /// variant of the surface-distance metric).
    pub has_pose_ambiguity: bool,
}

impl ObjectModel {
    /// Builds a model; `edges = None` selects the complete keypoint graph.
    /// The diameter is computed from keypoints and surface samples.
    pub fn new(
        keypoints: Vec<Vector3<f64>>,
        edges: Option<Vec<(usize, usize)>>,
        symmetry: SymmetryPlane,
        surface_samples: Vec<Vector3<f64>>,
        has_pose_ambiguity: bool,
    ) -> Result<Self> {
        if keypoints.len() < 2 {
            return Err(PoseError::InvalidModel(
                "model needs at least two keypoints".into(),
            ));
        }
        let edges = match edges {
            Some(e) => {
                for &(s, t) in &e {
                    if s >= keypoints.len() || t >= keypoints.len() {
                        return Err(PoseError::InvalidModel(format!(
                            "edge index ({s}, {t}) out of range for {} keypoints",
                            keypoints.len()
                        )));
                    }
                    if s == t {
                        return Err(PoseError::InvalidModel(format!("degenerate edge ({s}, {t})")));
                    }
                }
                e
            }
            None => complete_graph(keypoints.len()),
        };
        let diameter = diameter_of(&keypoints, &surface_samples);
        Ok(ObjectModel {
            keypoints,
            edges,
            symmetry,
            diameter,
            surface_samples,
            has_pose_ambiguity,
        })
    }

    /// Canonical edge displacement `p[target] - p[source]`.
    pub fn edge_vector(&self, edge_index: usize) -> Vector3<f64> {
        let (s, t) = self.edges[edge_index];
        self.keypoints[t] - self.keypoints[s]
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// All `n(n-1)/2` pairs `(i, j)` with `i < j`, lexicographic order.
pub fn complete_graph(n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j));
        }
    }
    edges
}

/// Maximum pairwise distance over the union of two point sets.
pub fn diameter_of(keypoints: &[Vector3<f64>], samples: &[Vector3<f64>]) -> f64 {
    let all: Vec<&Vector3<f64>> = keypoints.iter().chain(samples.iter()).collect();
    let mut d2: f64 = 0.0;
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            d2 = d2.max((all[i] - all[j]).norm_squared());
        }
    }
    d2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let gx: f64 = StandardNormal.sample(rng);
        let gy: f64 = StandardNormal.sample(rng);
        let gz: f64 = StandardNormal.sample(rng);
        let v = Vector3::new(gx, gy, gz);
        v / v.norm()
    }

    #[test]
    fn exp_identity() {
        let r = exp_so3(&Vector3::zeros());
        assert_eq!(r.matrix(), &Matrix3::identity());
    }

    #[test]
    fn exp_half_turn_about_x() {
        let r = exp_so3(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert_abs_diff_eq!(r.matrix(), &expected, epsilon = 1e-12);
    }

    #[test]
    fn exp_matches_independent_rodrigues() {
        // Oracle: nalgebra's own axis-angle construction.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let c = random_unit3(&mut rng) * 0.7;
            let ours = exp_so3(&c);
            let oracle = Rotation3::from_scaled_axis(c);
            assert_abs_diff_eq!(ours.matrix(), oracle.matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn apply_zero_delta_is_bit_identical() {
        let pose = Pose::new(
            exp_so3(&Vector3::new(0.3, -0.2, 0.9)),
            Vector3::new(0.1, -0.4, 3.0),
        );
        let out = apply_delta(&pose, &LocalPoseDelta::zero());
        assert_eq!(out.rotation.matrix(), pose.rotation.matrix());
        assert_eq!(out.translation, pose.translation);
    }

    #[test]
    fn apply_delta_direct_substitution() {
        let delta = LocalPoseDelta {
            rotation: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            translation: Vector3::new(1.0, 0.0, 0.0),
        };
        let out = apply_delta(&Pose::identity(), &delta);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(out.rotation.matrix(), &expected, epsilon = 1e-12);
        assert_eq!(out.translation, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn delta_composition_matches_log_map() {
        // Composing two small deltas agrees with the tangent of the composed
        // motion to second order in the step size.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pose = Pose::new(exp_so3(&(random_unit3(&mut rng) * 0.8)), random_unit3(&mut rng));
            let scale = 1e-3;
            let d1 = LocalPoseDelta {
                rotation: random_unit3(&mut rng) * scale,
                translation: random_unit3(&mut rng) * scale,
            };
            let d2 = LocalPoseDelta {
                rotation: random_unit3(&mut rng) * scale,
                translation: random_unit3(&mut rng) * scale,
            };
            let composed = apply_delta(&apply_delta(&pose, &d1), &d2);
            let single = composed.delta_from(&pose);
            let recomposed = apply_delta(&pose, &single);
            assert_abs_diff_eq!(
                recomposed.rotation.matrix(),
                composed.rotation.matrix(),
                epsilon = 1e-12
            );
            // The summed tangents agree with the true tangent to O(scale²).
            let sum = d1.to_vector() + d2.to_vector();
            assert!((single.to_vector() - sum).norm() < 10.0 * scale * scale);
        }
    }

    #[test]
    fn log_map_is_precise_near_identity_and_half_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for scale in [1e-12, 1e-9, 1e-6, 1e-2, 1.0, 3.0] {
            for _ in 0..20 {
                let c = random_unit3(&mut rng) * scale;
                let back = exp_so3(&c).log();
                assert!(
                    (back - c).norm() <= 1e-12 * scale.max(1e-9),
                    "scale {scale}: {c:?} vs {back:?}"
                );
            }
        }
        // near π the angle magnitude must still be right
        let axis = Vector3::new(0.6, -0.8, 0.0);
        let c = axis * (std::f64::consts::PI - 1e-7);
        let back = exp_so3(&c).log();
        assert!((back.norm() - c.norm()).abs() < 1e-9);
        assert!((back.normalize() - c.normalize()).norm() < 1e-4);
    }

    #[test]
    fn project_basics() {
        let (p, z) = project(&Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p, Vector2::new(0.0, 0.0));
        assert_eq!(z, 1.0);

        let (p, z) = project(&Pose::identity(), &Vector3::new(0.3, 0.4, 2.0)).unwrap();
        assert_abs_diff_eq!(p, Vector2::new(0.15, 0.2), epsilon = 1e-15);
        assert_eq!(z, 2.0);
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        let err = project(&Pose::identity(), &Vector3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert!(matches!(err, PoseError::DepthNonPositive { .. }));
    }

    #[test]
    fn normalize_pixel_cases() {
        let id = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(
            id.normalize_pixel(&Vector2::new(3.0, 4.0)),
            Vector3::new(3.0, 4.0, 1.0)
        );

        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        assert_eq!(
            k.normalize_pixel(&Vector2::new(320.0, 240.0)),
            Vector3::new(0.0, 0.0, 1.0)
        );

        let k = CameraIntrinsics::new(500.0, 400.0, 320.0, 240.0).unwrap();
        assert_abs_diff_eq!(
            k.normalize_pixel(&Vector2::new(420.0, 280.0)),
            Vector3::new(0.2, 0.1, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn reflect_axis_case() {
        let plane = SymmetryPlane::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).unwrap();
        assert_eq!(
            plane.reflect(&Vector3::new(0.2, 0.1, 0.3)),
            Vector3::new(-0.2, 0.1, 0.3)
        );
    }

    #[test]
    fn reflect_fixes_points_on_the_plane() {
        let plane =
            SymmetryPlane::new(Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.5, 2.0, -1.0)).unwrap();
        let on_plane = Vector3::new(-3.0, 2.0, 7.0);
        assert_abs_diff_eq!(plane.reflect(&on_plane), on_plane, epsilon = 1e-14);
    }

    #[test]
    fn model_complete_graph_and_diameter() {
        let kps = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let plane = SymmetryPlane::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).unwrap();
        let model = ObjectModel::new(kps, None, plane, vec![], false).unwrap();
        assert_eq!(model.edge_count(), 6);
        assert_abs_diff_eq!(model.diameter, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn model_rejects_bad_edges() {
        let kps = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        let plane = SymmetryPlane::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).unwrap();
        assert!(ObjectModel::new(kps.clone(), Some(vec![(0, 2)]), plane, vec![], false).is_err());
        assert!(ObjectModel::new(kps, Some(vec![(1, 1)]), plane, vec![], false).is_err());
    }

    proptest! {
        #[test]
        fn exp_stays_on_so3(cx in -5.0..5.0f64, cy in -5.0..5.0f64, cz in -5.0..5.0f64) {
            let c = Vector3::new(cx, cy, cz);
            prop_assume!(c.norm() <= 10.0);
            let r = exp_so3(&c).0;
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reflect_is_an_involutive_isometry(
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in -1.0..1.0f64,
            bx in -1.0..1.0f64, by in -1.0..1.0f64, bz in -1.0..1.0f64,
            nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in 0.1..1.0f64,
        ) {
            let n = Vector3::new(nx, ny, nz);
            let plane = SymmetryPlane::new(n / n.norm(), Vector3::new(0.1, -0.2, 0.3)).unwrap();
            let a = Vector3::new(ax, ay, az);
            let b = Vector3::new(bx, by, bz);
            prop_assert!((plane.reflect(&plane.reflect(&a)) - a).norm() < 1e-14);
            prop_assert!(
                ((plane.reflect(&a) - plane.reflect(&b)).norm() - (a - b).norm()).abs() < 1e-12
            );
        }
    }
}
