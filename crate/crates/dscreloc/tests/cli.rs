//! End-to-end checks of the command-line pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dscreloc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dscreloc")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        stdout(out)
    );
}

/// Shrink a generated run config so CLI tests stay fast.
fn quicken_config(dir: &Path) {
    let path = dir.join("run.config");
    let text = std::fs::read_to_string(&path).unwrap();
    let text = text
        .replace("epochs = 280", "epochs = 25")
        .replace("distant_activation_epoch = 187", "distant_activation_epoch = 18");
    std::fs::write(&path, text).unwrap();
}

#[test]
fn gen_fit_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scene");
    let out = run(&[
        "gen-scene",
        "--pattern",
        "arc",
        "--frames",
        "5",
        "--size",
        "40x30",
        "--seed",
        "9",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_success(&out, "gen-scene");
    assert!(data.join("frame-000004.color.png").exists());
    assert!(data.join("frame-000004.depth.png").exists());
    assert!(data.join("frame-000004.pose.txt").exists());
    assert!(data.join("run.config").exists());

    quicken_config(&data);
    let ckpt = dir.path().join("fit.ckpt");
    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--config",
        data.join("run.config").to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_success(&out, "fit");
    assert!(ckpt.exists());
    // Resolved config manifest lands next to the checkpoint.
    assert!(dir.path().join("fit.config").exists());
    let log = stdout(&out);
    assert!(log.contains("epoch    0"), "missing per-epoch loss:\n{log}");

    let svg = dir.path().join("traj.svg");
    let out = run(&[
        "eval-pose",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--mode",
        "median",
        "--plot",
        svg.to_str().unwrap(),
    ]);
    assert_success(&out, "eval-pose");
    assert!(stdout(&out).contains("median re-localization error"));
    assert!(svg.exists());
    assert!(svg.with_extension("csv").exists());

    let out = run(&[
        "eval-depth",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--min",
        "0.1",
        "--max",
        "10",
    ]);
    assert_success(&out, "eval-depth");
    let log = stdout(&out);
    assert!(log.contains("scale_std_over_med,abs_rel"));
    assert_eq!(log.trim().lines().count(), 2, "expected header + one row:\n{log}");
}

#[test]
fn identical_seeds_give_identical_checkpoints_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scene");
    assert_success(
        &run(&[
            "gen-scene",
            "--frames",
            "4",
            "--size",
            "32x24",
            "--seed",
            "3",
            "--out",
            data.to_str().unwrap(),
        ]),
        "gen-scene",
    );
    quicken_config(&data);
    let mut outputs = Vec::new();
    let mut bytes = Vec::new();
    for run_idx in 0..2 {
        let run_dir = dir.path().join(format!("run{run_idx}"));
        std::fs::create_dir_all(&run_dir).unwrap();
        let ckpt = run_dir.join("fit.ckpt");
        let out = run(&[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--config",
            data.join("run.config").to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
        ]);
        assert_success(&out, "fit");
        let eval = run(&[
            "eval-pose",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ]);
        assert_success(&eval, "eval-pose");
        // The checkpoint path line necessarily differs between run dirs.
        let log: String = stdout(&out)
            .lines()
            .filter(|l| !l.contains("checkpoint written"))
            .collect::<Vec<_>>()
            .join("\n");
        outputs.push(log + &stdout(&eval));
        bytes.push(std::fs::read(&ckpt).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "checkpoint bytes differ across identical runs");
    assert_eq!(outputs[0], outputs[1], "printed metrics differ across identical runs");
}

#[test]
fn grad_check_exits_zero_within_tolerance() {
    let out = run(&["grad-check", "--samples", "40"]);
    assert_success(&out, "grad-check");
    let log = stdout(&out);
    assert!(log.contains("gradient suite passed"));
    assert!(log.contains("loop_set_objective"));
}

#[test]
fn bad_inputs_produce_machine_readable_exit_codes() {
    // Unknown flag: clap's usage error, code 2.
    let out = bin().args(["fit", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unreadable dataset: data error, code 3.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.config");
    std::fs::write(
        &cfg,
        "image_width_px = 16\nimage_height_px = 12\nintrinsics_fx_px = 14\n\
         intrinsics_fy_px = 14\nintrinsics_cx_px = 7.5\nintrinsics_cy_px = 5.5\n",
    )
    .unwrap();
    let out = run(&[
        "fit",
        "--data",
        dir.path().join("missing").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    // Malformed config: configuration error, code 2.
    std::fs::write(&cfg, "image_width_px = broken\n").unwrap();
    let out = run(&[
        "fit",
        "--data",
        dir.path().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
