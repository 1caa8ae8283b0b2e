use posefit::synth::*;
use posefit::stability::NoiseModel;
use posefit::residuals::{RobustParams, RobustWeights};

fn main() {
    let model = demo_model();
    for (b1, b2, alpha_s) in [
        (0.2, 0.01, 1.0), (0.2, 0.01, 0.25),
        (0.1, 0.005, 1.0), (0.3, 0.015, 1.0),
        (0.12, 0.006, 1.0), (0.4, 0.02, 1.0),
    ] {
        let mut ok = [true, true, true];
        let mut line = format!("beta_s ({b1},{b2}) alpha_s {alpha_s}:");
        for seed in [4242u64, 99, 12345] {
            let gen = GenConfig {
                noise: NoiseModel::new(0.002, 0.002, 0.002),
                outlier_s: 0.2,
                seed,
                ..Default::default()
            };
            let mut betas = RobustWeights::default();
            betas.symmetry = RobustParams::new(b1, b2);
            let arms = SolverArm::ablation_arms(1.0, alpha_s, betas);
            let report = run_benchmark(&model, 500, &gen, &arms).unwrap();
            let m: Vec<f64> = report.arms.iter().map(|a| a.mean_rot.to_degrees()).collect();
            let t: Vec<f64> = report.arms.iter().map(|a| a.mean_trans).collect();
            ok[0] &= m[0] >= m[1];
            ok[1] &= m[1] >= m[2];
            ok[2] &= t[2] <= t[0];
            line.push_str(&format!(" [{seed}: {:.4}/{:.4}/{:.4}]", m[0], m[1], m[2]));
        }
        line.push_str(&format!(" ok={ok:?}"));
        println!("{line}");
    }
}
