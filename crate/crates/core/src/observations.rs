//! The observation data model and its ingestion from documents.
//!
//! A [`Scene`] holds everything the solvers consume for one image, with
//! all 2D quantities already in normalized camera coordinates. Occlusion
//! is represented by noisy/outlier observations, never by absence: a
//! scene always carries exactly one observation per model keypoint and
//! per model edge.

use nalgebra::Vector2;

use crate::error::{PoseError, Result};
use crate::geometry::{CameraIntrinsics, ObjectModel, Pose, Rotation};
use crate::io::SceneDocument;

/// One observed keypoint in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObs {
    /// Keypoint id into the model's keypoint list.
    pub index: usize,
    /// Observed image point.
    pub image_point: Vector2<f64>,
}

/// One observed edge displacement in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeObs {
    /// Edge id into the model's edge list.
    pub edge_index: usize,
    /// Displacement from the projection of the edge source keypoint to
    /// the projection of the target keypoint.
    pub vector: Vector2<f64>,
}

/// A symmetry-correspondence pair in normalized coordinates; `q2` is the
/// symmetric counterpart of `q1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymCorrObs {
    pub q1: Vector2<f64>,
    pub q2: Vector2<f64>,
}

/// Noise parameters a generated scene was drawn with (absent for
/// file-ingested scenes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMeta {
    pub sigma_k: f64,
    pub sigma_e: f64,
    pub sigma_s: f64,
    pub outlier_k: f64,
    pub outlier_e: f64,
    pub outlier_s: f64,
}

/// All observations for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    /// Exactly one observation per model keypoint, in keypoint order.
    pub keypoints: Vec<KeypointObs>,
    /// Exactly one observation per model edge, in edge order.
    pub edges: Vec<EdgeObs>,
    /// Any number of symmetry correspondences (possibly none).
    pub sym_corrs: Vec<SymCorrObs>,
    pub gt_pose: Option<Pose>,
    pub noise_meta: Option<NoiseMeta>,
}

impl Scene {
    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn sym_corr_count(&self) -> usize {
        self.sym_corrs.len()
    }
}

/// Converts a parsed scene document into a [`Scene`] in normalized
/// coordinates, validating counts against the model.
///
/// Keypoints and correspondence endpoints go through the full intrinsic
/// normalization; edge displacements are divided component-wise by
/// `(fx, fy)` since they are differences of image points.
pub fn ingest_scene(doc: &SceneDocument, model: &ObjectModel) -> Result<Scene> {
    let intrinsics = CameraIntrinsics::new(
        doc.intrinsics.fx,
        doc.intrinsics.fy,
        doc.intrinsics.cx,
        doc.intrinsics.cy,
    )?;
    if doc.keypoints_2d.len() != model.keypoint_count() {
        return Err(PoseError::CountMismatch {
            what: "keypoints",
            expected: model.keypoint_count(),
            got: doc.keypoints_2d.len(),
        });
    }
    if doc.edges_2d.len() != model.edge_count() {
        return Err(PoseError::CountMismatch {
            what: "edges",
            expected: model.edge_count(),
            got: doc.edges_2d.len(),
        });
    }

    let keypoints = doc
        .keypoints_2d
        .iter()
        .enumerate()
        .map(|(index, uv)| {
            let n = intrinsics.normalize_pixel(&Vector2::new(uv[0], uv[1]));
            KeypointObs {
                index,
                image_point: Vector2::new(n.x, n.y),
            }
        })
        .collect();
    let edges = doc
        .edges_2d
        .iter()
        .enumerate()
        .map(|(edge_index, duv)| EdgeObs {
            edge_index,
            vector: intrinsics.normalize_vector(&Vector2::new(duv[0], duv[1])),
        })
        .collect();
    let sym_corrs = doc
        .sym_corrs
        .iter()
        .map(|c| {
            let q1 = intrinsics.normalize_pixel(&Vector2::new(c[0], c[1]));
            let q2 = intrinsics.normalize_pixel(&Vector2::new(c[2], c[3]));
            SymCorrObs {
                q1: Vector2::new(q1.x, q1.y),
                q2: Vector2::new(q2.x, q2.y),
            }
        })
        .collect();
    let gt_pose = match &doc.gt_pose {
        Some(p) => Some(Pose::new(
            Rotation::from_row_major(&p.r, 1e-6)?,
            nalgebra::Vector3::new(p.t[0], p.t[1], p.t[2]),
        )),
        None => None,
    };

    Ok(Scene {
        intrinsics,
        keypoints,
        edges,
        sym_corrs,
        gt_pose,
        noise_meta: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{IntrinsicsDocument, PoseDocument};
    use crate::synth;
    use approx::assert_abs_diff_eq;

    fn sample_document(n_kp: usize, n_edges: usize, n_sym: usize) -> SceneDocument {
        SceneDocument {
            intrinsics: IntrinsicsDocument {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
            },
            keypoints_2d: (0..n_kp).map(|i| [320.0 + i as f64, 240.0 - i as f64]).collect(),
            edges_2d: (0..n_edges).map(|i| [i as f64, -(i as f64)]).collect(),
            sym_corrs: (0..n_sym)
                .map(|i| [320.0 + i as f64, 240.0, 320.0 - i as f64, 240.0])
                .collect(),
            gt_pose: None,
        }
    }

    #[test]
    fn ingest_counts_round_trip() {
        let model = synth::demo_model();
        let doc = sample_document(model.keypoint_count(), model.edge_count(), 50);
        let scene = ingest_scene(&doc, &model).unwrap();
        assert_eq!(scene.keypoint_count(), model.keypoint_count());
        assert_eq!(scene.edge_count(), model.edge_count());
        assert_eq!(scene.sym_corr_count(), 50);
    }

    #[test]
    fn ingest_rejects_count_mismatch() {
        let model = synth::demo_model();
        let doc = sample_document(model.keypoint_count() - 1, model.edge_count(), 0);
        let err = ingest_scene(&doc, &model).unwrap_err();
        assert!(matches!(err, PoseError::CountMismatch { what: "keypoints", .. }));
    }

    #[test]
    fn ingest_normalizes_principal_point() {
        let model = synth::demo_model();
        let mut doc = sample_document(model.keypoint_count(), model.edge_count(), 0);
        doc.keypoints_2d[0] = [320.0, 240.0];
        let scene = ingest_scene(&doc, &model).unwrap();
        assert_eq!(scene.keypoints[0].image_point, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn ingest_rejects_bad_intrinsics() {
        let model = synth::demo_model();
        let mut doc = sample_document(model.keypoint_count(), model.edge_count(), 0);
        doc.intrinsics.fx = 0.0;
        assert!(matches!(
            ingest_scene(&doc, &model).unwrap_err(),
            PoseError::IntrinsicsInvalid { .. }
        ));
    }

    #[test]
    fn ingest_after_serialize_is_identity() {
        let model = synth::demo_model();
        let gen = synth::GenConfig {
            noise: crate::stability::NoiseModel::new(0.002, 0.002, 0.002),
            seed: 99,
            ..synth::GenConfig::default()
        };
        let pose = synth::sample_pose(&model, &gen);
        let scene = synth::generate_scene(&model, &pose, &gen).unwrap();
        let doc = crate::io::scene_to_document(&scene);
        let back = ingest_scene(&doc, &model).unwrap();
        for (a, b) in scene.keypoints.iter().zip(back.keypoints.iter()) {
            assert_abs_diff_eq!(a.image_point, b.image_point, epsilon = 1e-12);
        }
        for (a, b) in scene.edges.iter().zip(back.edges.iter()) {
            assert_abs_diff_eq!(a.vector, b.vector, epsilon = 1e-12);
        }
        for (a, b) in scene.sym_corrs.iter().zip(back.sym_corrs.iter()) {
            assert_abs_diff_eq!(a.q1, b.q1, epsilon = 1e-12);
            assert_abs_diff_eq!(a.q2, b.q2, epsilon = 1e-12);
        }
        let (pa, pb) = (scene.gt_pose.unwrap(), back.gt_pose.unwrap());
        assert_abs_diff_eq!(pa.rotation.matrix(), pb.rotation.matrix(), epsilon = 1e-12);
        assert_abs_diff_eq!(pa.translation, pb.translation, epsilon = 1e-12);
        let _ = PoseDocument::from_pose(&pa); // exercised further in io tests
    }
}
