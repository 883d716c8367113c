//! Command-line pipeline: synthetic dataset generation, direct fitting,
//! pose/depth evaluation, and the gradient checker.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dscreloc::checkpoint::{checkpoint_load, checkpoint_save};
use dscreloc::config::RunConfig;
use dscreloc::dataset::load_dataset;
use dscreloc::eval::{depth_metrics, pose_errors, trajectory_export, umeyama_sim3};
use dscreloc::fit::{decoded_depths, fit, predict_pose, FitConfig, GridLayout};
use dscreloc::geometry::{AggregateMode, Intrinsics, Pose, Vec3};
use dscreloc::grad_suite::{run_gradient_suite, DEFAULT_STEP, GRADIENT_TOLERANCE};
use dscreloc::synthetic::{
    desk_camera, desk_scene, generate_dataset, generate_trajectory, TrajectoryPattern,
};

/// Exit codes: 0 success, 2 usage/configuration, 3 data or I/O,
/// 4 numerical failure.
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "dscreloc", version, about = "Camera re-localization and depth from directed scene coordinates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic planar scene and write it as a dataset.
    GenScene(GenSceneArgs),
    /// Fit per-frame depth and directed-scene-coordinate grids to a dataset.
    Fit(FitArgs),
    /// Evaluate re-localization error of a fitted checkpoint.
    EvalPose(EvalPoseArgs),
    /// Evaluate depth accuracy of a fitted checkpoint.
    EvalDepth(EvalDepthArgs),
    /// Run the finite-difference gradient suite.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    /// Trajectory pattern: arc | lateral | orbit.
    #[arg(long, default_value = "arc")]
    pattern: String,
    /// Number of frames.
    #[arg(long, default_value_t = 9)]
    frames: usize,
    /// Image size as WxH.
    #[arg(long, default_value = "80x60")]
    size: String,
    /// Scene and trajectory seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Trajectory scale multiplier.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalPoseArgs {
    /// Fitted checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory with reference poses.
    #[arg(long)]
    data: PathBuf,
    /// Per-cell aggregation: mean | median.
    #[arg(long, default_value = "median")]
    mode: String,
    /// Optional SVG trajectory plot path (a CSV table is written next to it).
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EvalDepthArgs {
    /// Fitted checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory with reference depth.
    #[arg(long)]
    data: PathBuf,
    /// Evaluation range minimum (scene units).
    #[arg(long, default_value_t = 0.1)]
    min: f64,
    /// Evaluation range maximum (scene units).
    #[arg(long, default_value_t = 10.0)]
    max: f64,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Optional config (only the seed is consulted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Coordinates sampled per operation.
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScene(args) => cmd_gen_scene(args),
        Command::Fit(args) => cmd_fit(args),
        Command::EvalPose(args) => cmd_eval_pose(args),
        Command::EvalDepth(args) => cmd_eval_depth(args),
        Command::GradCheck(args) => cmd_grad_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn config_err(e: impl std::fmt::Display) -> (u8, String) {
    (EXIT_CONFIG, e.to_string())
}

fn data_err(e: impl std::fmt::Display) -> (u8, String) {
    (EXIT_DATA, e.to_string())
}

fn numeric_err(e: impl std::fmt::Display) -> (u8, String) {
    (EXIT_NUMERIC, e.to_string())
}

fn parse_size(text: &str) -> Result<(usize, usize), (u8, String)> {
    let (w, h) = text
        .split_once('x')
        .ok_or_else(|| config_err(format!("size must be WxH, got `{text}`")))?;
    Ok((
        w.parse().map_err(|_| config_err(format!("bad width `{w}`")))?,
        h.parse().map_err(|_| config_err(format!("bad height `{h}`")))?,
    ))
}

/// The run configuration gen-scene writes next to a synthetic dataset:
/// paper-default loss weights with desk-scale optimizer settings.
fn desk_run_config(size: (usize, usize), k: Intrinsics, seed: u64) -> RunConfig {
    RunConfig {
        image_size: size,
        intrinsics: k,
        fit: FitConfig {
            learning_rate: 0.004,
            learning_rate_final: 0.0002,
            epochs: 280,
            nearby_window: 2,
            distant_activation_epoch: 187,
            pool_factor: 8,
            seed,
            ..FitConfig::default()
        },
        eval_depth_range: (0.1, 10.0),
        data_dir: None,
        output_dir: None,
    }
}

fn cmd_gen_scene(args: GenSceneArgs) -> CmdResult {
    let pattern = match args.pattern.as_str() {
        "arc" => TrajectoryPattern::Arc,
        "lateral" => TrajectoryPattern::Lateral,
        "orbit" => TrajectoryPattern::Orbit,
        other => return Err(config_err(format!("unknown pattern `{other}`"))),
    };
    let size = parse_size(&args.size)?;
    let k = desk_camera(size);
    let scene = desk_scene(args.seed, &k);
    let trajectory =
        generate_trajectory(pattern, args.frames, args.scale).map_err(config_err)?;
    generate_dataset(&scene, &trajectory, &k, size, &args.out).map_err(data_err)?;
    let config = desk_run_config(size, k, args.seed);
    config
        .save(&args.out.join("run.config"))
        .map_err(data_err)?;
    println!(
        "wrote {} frames ({}x{}) to {}",
        args.frames,
        size.0,
        size.1,
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let mut config = RunConfig::load(&args.config).map_err(config_err)?;
    config.data_dir = Some(args.data.clone());
    config.output_dir = args.out.parent().map(Path::to_path_buf);
    let dataset = load_dataset(&args.data, None).map_err(data_err)?;
    if dataset.image_size() != config.image_size {
        return Err(config_err(format!(
            "dataset is {:?} but the config says {:?}",
            dataset.image_size(),
            config.image_size
        )));
    }
    let outcome = fit(&dataset.images, &config.intrinsics, &config.fit).map_err(|e| {
        use dscreloc::fit::FitError;
        match e {
            FitError::NonFiniteLoss { .. } | FitError::AllPairsDegenerate { .. } => {
                numeric_err(e)
            }
            other => config_err(other),
        }
    })?;
    let n = dataset.len();
    for epoch in 0..config.fit.epochs {
        let chunk = &outcome.loss_history[epoch * n..(epoch + 1) * n];
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("epoch {epoch:4}  loss {mean:.6}");
    }
    // The checkpoint embeds only computation-relevant configuration; the
    // resolved paths live in the manifest written next to it.
    let ckpt_config = RunConfig {
        data_dir: None,
        output_dir: None,
        ..config.clone()
    };
    checkpoint_save(&args.out, &ckpt_config, &outcome.layout, &outcome.params)
        .map_err(data_err)?;
    let manifest = args.out.with_extension("config");
    config.save(&manifest).map_err(data_err)?;
    println!(
        "checkpoint written to {} ({} pairs evaluated, {} degenerate)",
        args.out.display(),
        outcome.pairs_evaluated,
        outcome.degenerate_pairs
    );
    Ok(())
}

fn load_predictions(
    ckpt: &Path,
    data: &Path,
    mode: AggregateMode,
) -> Result<(RunConfig, GridLayout, dscreloc::autodiff::ParamStore, dscreloc::dataset::LoadedDataset, Vec<Pose<f64>>), (u8, String)> {
    let (config, layout, params) = checkpoint_load(ckpt).map_err(data_err)?;
    let dataset = load_dataset(data, None).map_err(data_err)?;
    if dataset.len() != layout.n_frames {
        return Err(data_err(format!(
            "checkpoint holds {} frames but the dataset has {}",
            layout.n_frames,
            dataset.len()
        )));
    }
    let mapping = config.fit.mapping();
    let mut predicted = Vec::with_capacity(layout.n_frames);
    for f in 0..layout.n_frames {
        predicted.push(
            predict_pose(&params, f, &layout, &mapping, &config.intrinsics, mode)
                .map_err(numeric_err)?,
        );
    }
    Ok((config, layout, params, dataset, predicted))
}

fn cmd_eval_pose(args: EvalPoseArgs) -> CmdResult {
    let mode = match args.mode.as_str() {
        "mean" => AggregateMode::Mean,
        "median" => AggregateMode::Median,
        other => return Err(config_err(format!("unknown aggregation mode `{other}`"))),
    };
    let (_, _, _, dataset, predicted) = load_predictions(&args.ckpt, &args.data, mode)?;
    let src: Vec<Vec3<f64>> = predicted.iter().map(|p| p.position).collect();
    let dst: Vec<Vec3<f64>> = dataset.poses.iter().map(|p| p.position).collect();
    let align = umeyama_sim3(&src, &dst).map_err(numeric_err)?;
    let report = pose_errors(&predicted, &dataset.poses, &align).map_err(numeric_err)?;
    println!(
        "median re-localization error: {:.3}m, {:.1}°",
        report.median_position, report.median_attitude_deg
    );
    if let Some(plot) = &args.plot {
        trajectory_export(&predicted, &dataset.poses, &align, plot).map_err(data_err)?;
        println!(
            "trajectory plot: {} (+ {})",
            plot.display(),
            plot.with_extension("csv").display()
        );
    }
    Ok(())
}

fn cmd_eval_depth(args: EvalDepthArgs) -> CmdResult {
    let (config, layout, params, dataset, _) =
        load_predictions(&args.ckpt, &args.data, AggregateMode::Median)?;
    let mapping = config.fit.mapping();
    let predicted = decoded_depths(&params, &layout, &mapping);
    let report =
        depth_metrics(&predicted, &dataset.depths, args.min, args.max).map_err(numeric_err)?;
    println!("scale_std_over_med,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3");
    println!(
        "{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
        report.scale_std_over_med,
        report.abs_rel,
        report.sq_rel,
        report.rmse,
        report.rmse_log,
        report.delta1,
        report.delta2,
        report.delta3
    );
    if !report.skipped_frames.is_empty() {
        println!("skipped frames (empty mask): {:?}", report.skipped_frames);
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> CmdResult {
    let seed = match &args.config {
        Some(path) => RunConfig::load(path).map_err(config_err)?.fit.seed,
        None => 12345,
    };
    let entries =
        run_gradient_suite(args.samples, DEFAULT_STEP, seed).map_err(numeric_err)?;
    let mut all_passed = true;
    for entry in &entries {
        let ok = entry.passes();
        all_passed &= ok;
        println!(
            "{:22} {}  max rel err {:.3e}  (checked {}, rejected {})",
            entry.name,
            if ok { "ok" } else { "FAIL" },
            entry.report.max_rel_err,
            entry.report.checked,
            entry.report.rejected
        );
    }
    if all_passed {
        println!("gradient suite passed at tolerance {GRADIENT_TOLERANCE:.0e}");
        Ok(())
    } else {
        Err(numeric_err(format!(
            "gradient suite exceeded tolerance {GRADIENT_TOLERANCE:.0e}"
        )))
    }
}
