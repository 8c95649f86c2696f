use std::path::Path;
use std::process::{Command, Output};

use tactile_core::frame::RasterFrame;
use tactile_tools::png::{read_png, write_png};

fn tactile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tactile")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

/// Simulator output with raw frames for the built-in camera geometry.
fn simulated(dir: &Path) {
    let out = tactile(&["simulate", "--out", p(dir), "--frames", "2", "--seed", "3", "--camera-config", "default"]);
    assert_ok(&out);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(tactile(&[]).status.code(), Some(1));
    assert_eq!(tactile(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tactile(&["undistort", "--in", "x.png"]).status.code(), Some(1));
    let help = tactile(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("pipeline"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    write_png(&a, &RasterFrame::filled(8, 6, 1, 100).unwrap()).unwrap();
    write_png(&b, &RasterFrame::filled(9, 6, 1, 100).unwrap()).unwrap();
    let out = tactile(&["enhance", "--ref", p(&a), "--in", p(&b), "--out", p(&dir.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let missing = tactile(&["roi", "--roi", "nope.json", "--in", p(&a), "--out", p(&b)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn pipeline_matches_the_individual_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pipeline.json")).unwrap()).unwrap();
    std::fs::write(d.join("intr.json"), config["intrinsics"].to_string()).unwrap();
    std::fs::write(d.join("out_intr.json"), config["output_intrinsics"].to_string()).unwrap();
    std::fs::write(d.join("roi.json"), config["roi"].to_string()).unwrap();

    let full = d.join("full.png");
    assert_ok(&tactile(&[
        "pipeline", "--config", p(&d.join("pipeline.json")), "--ref", p(&d.join("raw_reference.png")),
        "--in", p(&d.join("raw_000000.png")), "--out", p(&full),
    ]));
    let enhanced = read_png(&full).unwrap();
    assert_eq!((enhanced.size(), enhanced.channels()), ((400, 150), 3));

    for (input, stem) in [("raw_reference.png", "ref"), ("raw_000000.png", "cur")] {
        let und = d.join(format!("{stem}_und.png"));
        let roi = d.join(format!("{stem}_roi.png"));
        assert_ok(&tactile(&[
            "undistort", "--intrinsics", p(&d.join("intr.json")), "--output-intrinsics", p(&d.join("out_intr.json")),
            "--in", p(&d.join(input)), "--out", p(&und),
        ]));
        assert_ok(&tactile(&["roi", "--roi", p(&d.join("roi.json")), "--in", p(&und), "--out", p(&roi)]));
    }
    let staged = d.join("staged.png");
    assert_ok(&tactile(&[
        "enhance", "--ref", p(&d.join("ref_roi.png")), "--in", p(&d.join("cur_roi.png")), "--out", p(&staged),
    ]));
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&staged).unwrap());
}

#[test]
fn pipeline_is_deterministic_and_config_dir_resolves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulated(d);
    let run = |out: &Path| {
        let o = Command::new(env!("CARGO_BIN_EXE_tactile"))
            .env("TACTILE_CONFIG_DIR", d)
            .current_dir(std::env::temp_dir())
            .args(["pipeline", "--config", "pipeline.json", "--ref", p(&d.join("raw_reference.png"))])
            .args(["--in", p(&d.join("raw_000001.png")), "--out", p(out)])
            .output()
            .unwrap();
        assert_ok(&o);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run(&d.join("one.png")), run(&d.join("two.png")));
}

#[test]
fn simulate_writes_frames_masks_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&tactile(&["simulate", "--out", p(d), "--frames", "3"]));
    for name in ["reference.png", "frame_000002.png", "mask_000002.png", "manifest.jsonl"] {
        assert!(d.join(name).is_file(), "{name}");
    }
    assert!(!d.join("raw_000000.png").exists());
    let manifest = std::fs::read_to_string(d.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    let mask = read_png(&d.join("mask_000000.png")).unwrap();
    assert!(mask.data().iter().all(|&v| v == 0 || v == 255));
    assert!(mask.data().contains(&255));
}

#[test]
fn calibrate_recovers_simulated_camera() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corr = d.join("corr.jsonl");
    assert_ok(&tactile(&[
        "simulate", "--out", p(d), "--frames", "0", "--camera-config", "default", "--correspondences", p(&corr),
    ]));
    let intr = d.join("intr.json");
    assert_ok(&tactile(&["calibrate", "--correspondences", p(&corr), "--width", "640", "--height", "480", "--out", p(&intr)]));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&intr).unwrap()).unwrap();
    assert!((fit["f_x"].as_f64().unwrap() - 380.0).abs() < 0.1);
    assert!((fit["k"][0].as_f64().unwrap() - 0.05).abs() < 1e-3);
}

#[test]
fn pair_writes_a_readable_episode() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "pair", "--synthetic", "12", "--root", p(dir.path()), "--id", "demo", "--resolution", "32x24",
        "--created-at", "2026-01-01T00:00:00Z",
    ];
    let out = tactile(&args);
    assert_ok(&out);
    let ep = tactile_tools::store::read_episode(&dir.path().join("episode_demo")).unwrap();
    assert_eq!(ep.meta.created_at, "2026-01-01T00:00:00Z");
    assert_eq!(ep.meta.config_hash.len(), 64);
    assert!(ep.records.len() >= 11);

    let again = tactile(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("exists"));
}

#[test]
fn soh_reports_failure_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("soh.csv");
    let out = tactile(&["soh", "--cycles", "3000", "--step", "100", "--out", p(&csv)]);
    assert_ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "failure cycle: 2000");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("cycle,soh,uniformity,visibility,integrity"));
    assert_eq!(text.lines().count(), 32);
}

#[test]
fn bench_reports_json() {
    let out = tactile(&["bench", "--frames", "100", "--json"]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["frames"], 100);
    assert_eq!(report["stages"].as_array().unwrap().len(), 3);
    assert_eq!(tactile(&["bench", "--frames", "50"]).status.code(), Some(2));
}
