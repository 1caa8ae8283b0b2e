//! Command-line driver: scene generation, solving, tuning, benchmarks,
//! and the stability laboratory.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or
//! malformed files, count mismatches), 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use posefit::hyper_tuner::{tune_alphas, tune_betas, TunerConfig, ValidationSet};
use posefit::init_solver::initialize_pose;
use posefit::io;
use posefit::refine_solver::{gauss_newton_refine, RefineConfig};
use posefit::residuals::{GroupMask, RobustParams, RobustWeights};
use posefit::stability::{
    a8_scan, monte_carlo_covariance, predict_covariance, square_closed_forms, square_example,
    square_scene, variance_reduction_check, NoiseModel,
};
use posefit::synth::{
    add_s, benchmark_csv, demo_model, generate_scene, pose_errors, run_benchmark, sample_pose,
    GenConfig, SolverArm,
};
use posefit::{CameraIntrinsics, PoseError};

#[derive(Parser)]
#[command(
    name = "posefit",
    version,
    about = "6D object-pose estimation from keypoints, edge vectors, and symmetry correspondences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene files for a model.
    Generate(GenerateArgs),
    /// Solve one scene: linear initialization plus robust refinement.
    Solve(SolveArgs),
    /// Tune solver hyper-parameters on a directory of scenes with ground truth.
    Tune(TuneArgs),
    /// Run the ablation benchmark over paired synthetic scenes.
    Bench(BenchArgs),
    /// Stability laboratory: square-example tables, covariance prediction
    /// vs Monte-Carlo, and the edge-weight scan.
    Stability(StabilityArgs),
    /// Surface-distance and pose-error metrics between two pose files.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Model file; omitted means the built-in demo model, which is then
    /// written next to the scenes as model.json.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma_k: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_e: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_s: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_k: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_e: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_s: f64,
    #[arg(long, default_value_t = 50)]
    n_sym: usize,
    #[arg(long, default_value_t = 2.0)]
    z_min: f64,
    #[arg(long, default_value_t = 6.0)]
    z_max: f64,
    #[arg(long, default_value_t = 500.0)]
    fx: f64,
    #[arg(long, default_value_t = 500.0)]
    fy: f64,
    #[arg(long, default_value_t = 320.0)]
    cx: f64,
    #[arg(long, default_value_t = 240.0)]
    cy: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha_e: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_s: f64,
    /// Keypoint robust parameters as "B1,B2".
    #[arg(long, value_parser = parse_beta)]
    beta_k: Option<RobustParams>,
    #[arg(long, value_parser = parse_beta)]
    beta_e: Option<RobustParams>,
    #[arg(long, value_parser = parse_beta)]
    beta_s: Option<RobustParams>,
    /// Tuned-config file (output of `tune`); explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stop after the linear initialization.
    #[arg(long)]
    no_refine: bool,
    /// Drop edge observations from both stages.
    #[arg(long)]
    no_edges: bool,
    /// Drop symmetry correspondences from both stages.
    #[arg(long)]
    no_symmetry: bool,
    /// Write the machine-readable result document here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of scene JSON files, each with a ground-truth pose.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which parameters to tune: alphas, betas, or both.
    #[arg(long, default_value = "both")]
    what: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Model file; omitted means the built-in demo model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.002)]
    sigma_k: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma_e: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma_s: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_k: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_e: f64,
    #[arg(long, default_value_t = 0.2)]
    outlier_s: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_e: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_s: f64,
    /// Per-scene CSV dump.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma_k: f64,
    #[arg(long, default_value_t = 0.02)]
    sigma_e: f64,
    #[arg(long, default_value_t = 0.001)]
    sigma_s: f64,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points in the edge-weight scan grid.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Directory for the CSV outputs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pose_a: PathBuf,
    #[arg(long)]
    pose_b: PathBuf,
}

fn parse_beta(s: &str) -> Result<RobustParams, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected two comma-separated values, e.g. 1.0,0.05".into());
    }
    let b1: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let b2: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    if !(b1 > 0.0 && b2 > 0.0) {
        return Err("robust parameters must be positive".into());
    }
    Ok(RobustParams::new(b1, b2))
}

/// Exit-code classification of library errors.
fn exit_code_for(err: &PoseError) -> u8 {
    match err {
        PoseError::SchemaError(_)
        | PoseError::CountMismatch { .. }
        | PoseError::IntrinsicsInvalid { .. }
        | PoseError::InvalidModel(_)
        | PoseError::InvalidConfig(_)
        | PoseError::Io(_) => 2,
        PoseError::DepthNonPositive { .. }
        | PoseError::DegenerateSystem { .. }
        | PoseError::RankDeficientTranslation { .. }
        | PoseError::NumericalFailure(_)
        | PoseError::SingularInformation { .. }
        | PoseError::FrustumViolation { .. }
        | PoseError::ConditioningFailure(_) => 3,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("POSEFIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Stability(args) => cmd_stability(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn load_model_or_demo(
    path: &Option<PathBuf>,
    write_demo_to: Option<&Path>,
) -> Result<posefit::ObjectModel, PoseError> {
    match path {
        Some(p) => io::load_model(p),
        None => {
            let model = demo_model();
            if let Some(dir) = write_demo_to {
                std::fs::create_dir_all(dir)?;
                io::save_model(&dir.join("model.json"), &model, "demo")?;
            }
            Ok(model)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), PoseError> {
    let model = load_model_or_demo(&args.model, Some(&args.out_dir))?;
    std::fs::create_dir_all(&args.out_dir)?;
    let base = GenConfig {
        z_min: args.z_min,
        z_max: args.z_max,
        noise: NoiseModel::new(args.sigma_k, args.sigma_e, args.sigma_s),
        outlier_k: args.outlier_k,
        outlier_e: args.outlier_e,
        outlier_s: args.outlier_s,
        n_sym_corrs: args.n_sym,
        intrinsics: CameraIntrinsics::new(args.fx, args.fy, args.cx, args.cy)?,
        seed: args.seed,
        ..GenConfig::default()
    };
    base.validate()?;
    for i in 0..args.count {
        let cfg = base.for_scene(i as u64);
        let pose = sample_pose(&model, &cfg);
        let scene = generate_scene(&model, &pose, &cfg)?;
        let doc = io::scene_to_document(&scene);
        io::save_scene_document(&args.out_dir.join(format!("scene_{i:04}.json")), &doc)?;
    }
    println!(
        "wrote {} scene(s) to {} (seed {})",
        args.count,
        args.out_dir.display(),
        args.seed
    );
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), PoseError> {
    let model = io::load_model(&args.model)?;
    let doc = io::load_scene_document(&args.scene)?;
    let scene = posefit::observations::ingest_scene(&doc, &model)?;

    let mut config_doc = match &args.config {
        Some(path) => io::load_config(path)?,
        None => io::SolverConfigDocument::default(),
    };
    if args.config.is_none() {
        config_doc.alpha_e = args.alpha_e;
        config_doc.alpha_s = args.alpha_s;
    }
    let mut betas = config_doc.to_weights();
    if let Some(b) = args.beta_k {
        betas.keypoint = b;
    }
    if let Some(b) = args.beta_e {
        betas.edge = b;
    }
    if let Some(b) = args.beta_s {
        betas.symmetry = b;
    }
    let alpha_e = if args.no_edges { 0.0 } else { config_doc.alpha_e };
    let alpha_s = if args.no_symmetry { 0.0 } else { config_doc.alpha_s };
    let mask = GroupMask {
        keypoints: true,
        edges: !args.no_edges,
        symmetry: !args.no_symmetry,
    };

    let start = Instant::now();
    let init = initialize_pose(&model, &scene, alpha_e, alpha_s)?;
    let (refined, iterations, trace) = if args.no_refine {
        (init, 0, vec![])
    } else {
        let config = RefineConfig {
            betas,
            mask,
            ..RefineConfig::default()
        };
        let report = gauss_newton_refine(&init, &model, &scene, &config)?;
        (report.pose, report.iterations, report.objective_trace)
    };
    let timing_ms = start.elapsed().as_secs_f64() * 1e3;

    let metrics = scene.gt_pose.map(|gt| {
        let add = add_s(&model, &refined, &gt);
        let (rot, trans) = pose_errors(&gt, &refined, model.diameter);
        io::SolveMetricsDocument {
            add,
            add_threshold: 0.1 * model.diameter,
            add_accurate: add < 0.1 * model.diameter,
            rotation_error_rad: rot,
            translation_error_rel: trans,
        }
    });

    println!("initialized and refined in {timing_ms:.2} ms ({iterations} refinement iteration(s))");
    println!(
        "pose: t = ({:.6}, {:.6}, {:.6})",
        refined.translation.x, refined.translation.y, refined.translation.z
    );
    if let Some(m) = &metrics {
        println!(
            "vs ground truth: rotation error {:.4} deg, translation error {:.4} of diameter, surface distance {:.6} ({})",
            m.rotation_error_rad.to_degrees(),
            m.translation_error_rel,
            m.add,
            if m.add_accurate { "within 10% threshold" } else { "above 10% threshold" }
        );
    }

    if let Some(out) = &args.out {
        let result = io::ResultDocument {
            init_pose: io::PoseDocument::from_pose(&init),
            refined_pose: io::PoseDocument::from_pose(&refined),
            iterations,
            objective_trace: trace,
            metrics,
            timing_ms,
            solver_config: io::SolverConfigDocument {
                alpha_e,
                alpha_s,
                beta_k: [betas.keypoint.beta1, betas.keypoint.beta2],
                beta_e: [betas.edge.beta1, betas.edge.beta2],
                beta_s: [betas.symmetry.beta1, betas.symmetry.beta2],
            },
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        io::save_result(out, &result)?;
        println!("result written to {}", out.display());
    }
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<(), PoseError> {
    let model = io::load_model(&args.model)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.scenes)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "model.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PoseError::InvalidConfig(format!(
            "no scene files in {}",
            args.scenes.display()
        )));
    }
    let scenes = paths
        .iter()
        .map(|p| {
            let doc = io::load_scene_document(p)?;
            posefit::observations::ingest_scene(&doc, &model)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let val = ValidationSet::new(model, scenes)?;
    let config = TunerConfig::default();

    let mut out = io::SolverConfigDocument::default();
    if args.what == "alphas" || args.what == "both" {
        let result = tune_alphas(&val, &config);
        println!(
            "alphas: ({:.6}, {:.6}), objective {:.6e} -> {:.6e} in {} iteration(s)",
            result.alpha_e,
            result.alpha_s,
            result.initial_objective,
            result.final_objective,
            result.outer_iterations
        );
        out.alpha_e = result.alpha_e;
        out.alpha_s = result.alpha_s;
    }
    if args.what == "betas" || args.what == "both" {
        let result = tune_betas(&val, &config)?;
        println!(
            "betas: K=({:.6},{:.6}) E=({:.6},{:.6}) S=({:.6},{:.6}), objective {:.6e} -> {:.6e}",
            result.betas.keypoint.beta1,
            result.betas.keypoint.beta2,
            result.betas.edge.beta1,
            result.betas.edge.beta2,
            result.betas.symmetry.beta1,
            result.betas.symmetry.beta2,
            result.initial_objective,
            result.final_objective
        );
        if !result.skipped_scenes.is_empty() {
            println!("skipped scenes with singular Hessians: {:?}", result.skipped_scenes);
        }
        out.beta_k = [result.betas.keypoint.beta1, result.betas.keypoint.beta2];
        out.beta_e = [result.betas.edge.beta1, result.betas.edge.beta2];
        out.beta_s = [result.betas.symmetry.beta1, result.betas.symmetry.beta2];
    }
    if !matches!(args.what.as_str(), "alphas" | "betas" | "both") {
        return Err(PoseError::InvalidConfig(format!(
            "unknown tuning target '{}'",
            args.what
        )));
    }
    io::save_config(&args.out, &out)?;
    println!("config written to {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), PoseError> {
    let model = load_model_or_demo(&args.model, None)?;
    let gen = GenConfig {
        noise: NoiseModel::new(args.sigma_k, args.sigma_e, args.sigma_s),
        outlier_k: args.outlier_k,
        outlier_e: args.outlier_e,
        outlier_s: args.outlier_s,
        seed: args.seed,
        ..GenConfig::default()
    };
    let arms = SolverArm::ablation_arms(args.alpha_e, args.alpha_s, RobustWeights::default());
    let start = Instant::now();
    let report = run_benchmark(&model, args.scenes, &gen, &arms)?;
    let wall = start.elapsed().as_secs_f64();

    println!(
        "{} scenes, seed {}, noise ({}, {}, {}), symmetry outliers {:.0}%  [{wall:.2} s]",
        args.scenes,
        args.seed,
        args.sigma_k,
        args.sigma_e,
        args.sigma_s,
        100.0 * args.outlier_s
    );
    println!(
        "{:<22} {:>10} {:>10} {:>10} {:>10} {:>9} {:>8}",
        "arm", "mean rot°", "med rot°", "mean trans", "med trans", "accuracy", "failed"
    );
    for arm in &report.arms {
        println!(
            "{:<22} {:>10.4} {:>10.4} {:>10.5} {:>10.5} {:>8.1}% {:>8}",
            arm.name,
            arm.mean_rot.to_degrees(),
            arm.median_rot.to_degrees(),
            arm.mean_trans,
            arm.median_trans,
            100.0 * arm.add_s_accuracy,
            arm.failures
        );
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, benchmark_csv(&report, &arms))?;
        println!("per-scene CSV written to {}", path.display());
    }
    Ok(())
}

fn matrix6_csv_block(label: &str, m: &nalgebra::Matrix6<f64>) -> String {
    let mut out = String::new();
    for i in 0..6 {
        out.push_str(label);
        for j in 0..6 {
            out.push(',');
            out.push_str(&io::fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

fn cmd_stability(args: StabilityArgs) -> Result<(), PoseError> {
    std::fs::create_dir_all(&args.out_dir)?;

    // 1. square example against the closed forms
    let example = square_example(args.delta, 400);
    let (h_k_closed, h_e_closed, h_s_eig) = square_closed_forms(args.delta);
    println!("square example at delta = {}", args.delta);
    println!(
        "  |H_K - closed form| = {:.3e}, |H_E - closed form| = {:.3e}",
        (example.h_k - h_k_closed).norm(),
        (example.h_e - h_e_closed).norm()
    );
    let eig = nalgebra::SymmetricEigen::new(example.h_s);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "  H_S nonzero eigenvalues: ({:.6}, {:.6}) vs closed ({:.6}, {:.6})",
        vals[4], vals[5], h_s_eig[0], h_s_eig[1]
    );
    let mut square_csv = String::from("matrix,c1,c2,c3,c4,c5,c6\n");
    square_csv.push_str(&matrix6_csv_block("H_K", &example.h_k));
    square_csv.push_str(&matrix6_csv_block("H_E", &example.h_e));
    square_csv.push_str(&matrix6_csv_block("H_S", &example.h_s));
    std::fs::write(args.out_dir.join("square_example.csv"), square_csv)?;

    // 2. edge-weight scan
    let optimum = args.sigma_k * args.sigma_k / (args.sigma_e * args.sigma_e);
    let n = args.grid.max(3);
    let grid: Vec<f64> = (0..n)
        .map(|i| optimum * 10f64.powf(-1.0 + 2.0 * i as f64 / (n - 1) as f64))
        .collect();
    let scan = a8_scan(args.delta, args.sigma_k, args.sigma_e, &grid)?;
    println!(
        "edge-weight scan: analytic optimum {:.6}, closed-form minimizer {:.6}, covariance minimizer {:.6}",
        scan.analytic_optimum, scan.best_beta_closed, scan.best_beta_cov
    );
    let mut a8_csv = String::from("beta_e,a8_closed,cov_66\n");
    for p in &scan.points {
        a8_csv.push_str(&format!(
            "{},{},{}\n",
            io::fmt_f64(p.beta_e),
            io::fmt_f64(p.a8_closed),
            io::fmt_f64(p.cov_66)
        ));
    }
    std::fs::write(args.out_dir.join("a8_scan.csv"), a8_csv)?;

    // 3. covariance prediction vs Monte-Carlo on the square design
    let (model, pose, scene) = square_scene(args.delta, 8);
    let noise = NoiseModel::new(args.sigma_k / 10.0, args.sigma_e / 10.0, args.sigma_s);
    let beta_e = posefit::residuals::group_scale(scene.keypoint_count(), scene.edge_count());
    let beta_s = posefit::residuals::group_scale(scene.keypoint_count(), scene.sym_corr_count());
    let predicted = predict_covariance(&model, &pose, &scene, beta_e, beta_s, &noise)?;
    let refine = RefineConfig {
        betas: RobustWeights::quadratic(),
        step_tol: 1e-13,
        ..RefineConfig::default()
    };
    let mc = monte_carlo_covariance(&model, &pose, &scene, &noise, &refine, args.trials, args.seed)?;
    println!(
        "covariance check: {} trial(s), {} failure(s)",
        mc.trials, mc.failures
    );
    println!("  component  predicted      empirical      ratio");
    let mut cov_csv = String::from("component,predicted,empirical\n");
    for i in 0..6 {
        let p = predicted.predicted_cov[(i, i)];
        let e = mc.covariance[(i, i)];
        println!("  {:>9}  {:>12.5e}  {:>12.5e}  {:>6.3}", i, p, e, e / p);
        cov_csv.push_str(&format!("{i},{},{}\n", io::fmt_f64(p), io::fmt_f64(e)));
    }
    std::fs::write(args.out_dir.join("covariance_diag.csv"), cov_csv)?;

    // 4. variance-reduction direction at beta_e = 0+
    let check = variance_reduction_check(&model, &pose, &scene, &noise, 1e-6)?;
    println!(
        "variance-reduction direction: d trace/d beta_e = {:.4e} ({})",
        check.derivative,
        if check.reduced { "edges reduce variance" } else { "no reduction" }
    );
    println!("CSV written to {}", args.out_dir.display());
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), PoseError> {
    let model = io::load_model(&args.model)?;
    let pose_a = io::load_pose(&args.pose_a)?;
    let pose_b = io::load_pose(&args.pose_b)?;
    let add = add_s(&model, &pose_a, &pose_b);
    let (rot, trans) = pose_errors(&pose_a, &pose_b, model.diameter);
    println!(
        "surface distance ({}): {:.6} ({:.2}% of diameter, threshold 10%)",
        if model.has_pose_ambiguity { "closest-point" } else { "mean-point" },
        add,
        100.0 * add / model.diameter
    );
    println!(
        "rotation error: {:.4} deg ({} rad)",
        rot.to_degrees(),
        io::fmt_f64(rot)
    );
    println!("relative translation error: {}", io::fmt_f64(trans));
    Ok(())
}
