//! Shared fixtures for the solver benchmarks.

use posefit::geometry::{ObjectModel, Pose};
use posefit::observations::Scene;
use posefit::stability::NoiseModel;
use posefit::synth::{demo_model, generate_scene, sample_pose, GenConfig};

/// A moderately noisy scene on the demo model, the workload every
/// benchmark operates on.
pub fn bench_fixture() -> (ObjectModel, Pose, Scene) {
    let model = demo_model();
    let gen = GenConfig {
        seed: 7,
        noise: NoiseModel::new(0.002, 0.002, 0.002),
        outlier_s: 0.2,
        ..Default::default()
    };
    let pose = sample_pose(&model, &gen);
    let scene = generate_scene(&model, &pose, &gen).expect("fixture scene");
    (model, pose, scene)
}
