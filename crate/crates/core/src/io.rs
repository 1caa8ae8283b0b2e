//! JSON document schemas and file I/O.
//!
//! All on-disk formats are UTF-8 JSON with rotation matrices stored
//! row-major. Floating-point values survive a write/read round trip
//! exactly. Unknown fields are rejected so malformed documents fail
//! loudly instead of being silently ignored.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{PoseError, Result};
use crate::geometry::{ObjectModel, Pose, Rotation, SymmetryPlane};
use crate::observations::Scene;
use crate::residuals::{RobustParams, RobustWeights};
use crate::synth;

/// On-disk object model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    pub keypoints: Vec<[f64; 3]>,
    /// Absent means the complete keypoint graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    pub symmetry: SymmetryDocument,
    pub diameter: f64,
    /// Absent means procedurally generated surface samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_samples: Option<Vec<[f64; 3]>>,
    pub pose_ambiguity: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryDocument {
    pub normal: [f64; 3],
    pub point: [f64; 3],
}

/// On-disk scene: pixel-space observations plus intrinsics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub intrinsics: IntrinsicsDocument,
    pub keypoints_2d: Vec<[f64; 2]>,
    pub edges_2d: Vec<[f64; 2]>,
    pub sym_corrs: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<PoseDocument>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsDocument {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDocument {
    /// Rotation, row-major.
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseDocument {
    pub fn from_pose(pose: &Pose) -> Self {
        PoseDocument {
            r: pose.rotation.to_row_major(),
            t: [
                pose.translation.x,
                pose.translation.y,
                pose.translation.z,
            ],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        Ok(Pose::new(
            Rotation::from_row_major(&self.r, 1e-6)?,
            Vector3::new(self.t[0], self.t[1], self.t[2]),
        ))
    }
}

/// Solver hyper-parameters as written by `tune` and consumed by `solve`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfigDocument {
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub beta_k: [f64; 2],
    pub beta_e: [f64; 2],
    pub beta_s: [f64; 2],
}

impl SolverConfigDocument {
    pub fn to_weights(&self) -> RobustWeights {
        RobustWeights {
            keypoint: RobustParams::new(self.beta_k[0], self.beta_k[1]),
            edge: RobustParams::new(self.beta_e[0], self.beta_e[1]),
            symmetry: RobustParams::new(self.beta_s[0], self.beta_s[1]),
        }
    }
}

impl Default for SolverConfigDocument {
    fn default() -> Self {
        let w = RobustWeights::default();
        SolverConfigDocument {
            alpha_e: 1.0,
            alpha_s: 1.0,
            beta_k: [w.keypoint.beta1, w.keypoint.beta2],
            beta_e: [w.edge.beta1, w.edge.beta2],
            beta_s: [w.symmetry.beta1, w.symmetry.beta2],
        }
    }
}

/// Per-solve metrics (only when the scene carried a ground-truth pose).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveMetricsDocument {
    pub add: f64,
    pub add_threshold: f64,
    pub add_accurate: bool,
    pub rotation_error_rad: f64,
    pub translation_error_rel: f64,
}

/// Output of the `solve` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub init_pose: PoseDocument,
    pub refined_pose: PoseDocument,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SolveMetricsDocument>,
    pub timing_ms: f64,
    pub solver_config: SolverConfigDocument,
    pub tool_version: String,
}

fn schema_err(e: serde_json::Error) -> PoseError {
    PoseError::SchemaError(e.to_string())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(schema_err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(schema_err)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses and validates a model document into an [`ObjectModel`].
///
/// When the document omits `surface_samples`, a procedural sample cloud
/// is attached and `diameter` is checked against the keypoint template;
/// with explicit samples it is checked against the full union.
pub fn model_from_document(doc: &ModelDocument) -> Result<ObjectModel> {
    let keypoints: Vec<Vector3<f64>> = doc
        .keypoints
        .iter()
        .map(|k| Vector3::new(k[0], k[1], k[2]))
        .collect();
    let normal = Vector3::new(doc.symmetry.normal[0], doc.symmetry.normal[1], doc.symmetry.normal[2]);
    let point = Vector3::new(doc.symmetry.point[0], doc.symmetry.point[1], doc.symmetry.point[2]);
    let plane = SymmetryPlane::new(normal, point)?;
    let edges = doc
        .edges
        .as_ref()
        .map(|e| e.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>());

    let (samples, check_diameter) = match &doc.surface_samples {
        Some(s) => {
            let samples: Vec<Vector3<f64>> =
                s.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
            let d = crate::geometry::diameter_of(&keypoints, &samples);
            (samples, d)
        }
        None => {
            let samples = synth::procedural_surface_samples(&keypoints, &plane, 512);
            let d = crate::geometry::diameter_of(&keypoints, &[]);
            (samples, d)
        }
    };
    if (doc.diameter - check_diameter).abs() > 1e-9 * check_diameter.max(1.0) {
        return Err(PoseError::InvalidModel(format!(
            "declared diameter {} differs from computed {}",
            doc.diameter, check_diameter
        )));
    }
    ObjectModel::new(keypoints, edges, plane, samples, doc.pose_ambiguity)
}

/// Serializes a model with explicit edges and surface samples so that a
/// reloaded copy is identical.
pub fn model_to_document(model: &ObjectModel, name: &str) -> ModelDocument {
    ModelDocument {
        name: name.to_string(),
        keypoints: model.keypoints.iter().map(|p| [p.x, p.y, p.z]).collect(),
        edges: Some(model.edges.iter().map(|&(s, t)| [s, t]).collect()),
        symmetry: SymmetryDocument {
            normal: [
                model.symmetry.normal.x,
                model.symmetry.normal.y,
                model.symmetry.normal.z,
            ],
            point: [
                model.symmetry.point.x,
                model.symmetry.point.y,
                model.symmetry.point.z,
            ],
        },
        diameter: model.diameter,
        surface_samples: Some(
            model
                .surface_samples
                .iter()
                .map(|p| [p.x, p.y, p.z])
                .collect(),
        ),
        pose_ambiguity: model.has_pose_ambiguity,
    }
}

pub fn load_model(path: &Path) -> Result<ObjectModel> {
    let doc: ModelDocument = read_json(path)?;
    model_from_document(&doc)
}

pub fn save_model(path: &Path, model: &ObjectModel, name: &str) -> Result<()> {
    write_json(path, &model_to_document(model, name))
}

pub fn load_scene_document(path: &Path) -> Result<SceneDocument> {
    read_json(path)
}

pub fn save_scene_document(path: &Path, doc: &SceneDocument) -> Result<()> {
    write_json(path, doc)
}

/// Converts an in-memory scene back to pixel space using its intrinsics.
pub fn scene_to_document(scene: &Scene) -> SceneDocument {
    let k = &scene.intrinsics;
    SceneDocument {
        intrinsics: IntrinsicsDocument {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        },
        keypoints_2d: scene
            .keypoints
            .iter()
            .map(|o| {
                let p = k.denormalize(&o.image_point);
                [p.x, p.y]
            })
            .collect(),
        edges_2d: scene
            .edges
            .iter()
            .map(|o| {
                let v = k.denormalize_vector(&o.vector);
                [v.x, v.y]
            })
            .collect(),
        sym_corrs: scene
            .sym_corrs
            .iter()
            .map(|c| {
                let q1 = k.denormalize(&c.q1);
                let q2 = k.denormalize(&c.q2);
                [q1.x, q1.y, q2.x, q2.y]
            })
            .collect(),
        gt_pose: scene.gt_pose.as_ref().map(PoseDocument::from_pose),
    }
}

pub fn load_config(path: &Path) -> Result<SolverConfigDocument> {
    read_json(path)
}

pub fn save_config(path: &Path, config: &SolverConfigDocument) -> Result<()> {
    write_json(path, config)
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    let doc: PoseDocument = read_json(path)?;
    doc.to_pose()
}

pub fn save_pose(path: &Path, pose: &Pose) -> Result<()> {
    write_json(path, &PoseDocument::from_pose(pose))
}

pub fn save_result(path: &Path, result: &ResultDocument) -> Result<()> {
    write_json(path, result)
}

/// Formats a float with 17 significant digits (exact f64 round trip),
/// used by every CSV writer in the crate.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempdir::tempdir;

    mod tempdir {
        use std::path::PathBuf;

        /// Minimal scratch directory that cleans up on drop.
        pub struct TempDir(PathBuf);

        impl TempDir {
            pub fn path(&self) -> &std::path::Path {
                &self.0
            }
        }

        impl Drop for TempDir {
            fn drop(&mut self) {
                let _ = std::fs::remove_dir_all(&self.0);
            }
        }

        pub fn tempdir(tag: &str) -> TempDir {
            let mut p = std::env::temp_dir();
            p.push(format!("posefit-io-test-{tag}-{}", std::process::id()));
            std::fs::create_dir_all(&p).unwrap();
            TempDir(p)
        }
    }

    #[test]
    fn model_round_trip_is_identical() {
        let dir = tempdir("model");
        let model = crate::synth::demo_model();
        let path = dir.path().join("m.json");
        save_model(&path, &model, "demo").unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn scene_round_trip_is_identical() {
        let dir = tempdir("scene");
        let model = crate::synth::demo_model();
        let gen = crate::synth::GenConfig {
            seed: 3,
            noise: crate::stability::NoiseModel::new(1e-3, 1e-3, 1e-3),
            ..Default::default()
        };
        let pose = crate::synth::sample_pose(&model, &gen);
        let scene = crate::synth::generate_scene(&model, &pose, &gen).unwrap();
        let doc = scene_to_document(&scene);
        let path = dir.path().join("s.json");
        save_scene_document(&path, &doc).unwrap();
        let reread = load_scene_document(&path).unwrap();
        // Bit-exact float round trip through JSON.
        assert_eq!(doc.keypoints_2d, reread.keypoints_2d);
        assert_eq!(doc.edges_2d, reread.edges_2d);
        assert_eq!(doc.sym_corrs, reread.sym_corrs);
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let text = r#"{"alpha_e":1.0,"alpha_s":1.0,"beta_k":[1.0,0.05],
                       "beta_e":[1.0,0.05],"beta_s":[1.0,0.05],"bogus":3}"#;
        let err = serde_json::from_str::<SolverConfigDocument>(text).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn model_rejects_wrong_diameter() {
        let model = crate::synth::demo_model();
        let mut doc = model_to_document(&model, "demo");
        doc.diameter += 0.5;
        assert!(matches!(
            model_from_document(&doc).unwrap_err(),
            PoseError::InvalidModel(_)
        ));
    }

    #[test]
    fn fmt_f64_round_trips_exactly() {
        for &x in &[std::f64::consts::PI, 1.0 / 3.0, 1e-300, -2.5e17, 0.1] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }
}
