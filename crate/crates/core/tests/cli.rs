use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use alpr_core::config::PipelineConfig;
use alpr_core::netspec::builtin;

fn alpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alpr")).args(args).output().expect("spawn alpr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(data: &Path, tracks: &str) {
    let out = alpr(&["--dataset", s(data), "synth", "--tracks", tracks, "--frames", "4", "--split"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out_dir) = (dir.path().join("data"), dir.path().join("out"));
    synth(&data, "10");
    for part in ["train", "test", "validation"] {
        assert!(data.join("splits").join(format!("{part}.txt")).is_file());
    }

    let run = alpr(&["--dataset", s(&data), "--out", s(&out_dir), "run", "--split", "all", "--miss-rate", "0.1"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["frames.jsonl", "stages.jsonl", "fused.jsonl", "report.txt", "report.jsonl"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let printed = String::from_utf8(run.stdout).unwrap();
    let saved = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert_eq!(printed, saved);

    // re-evaluating the saved records reproduces the report
    let report = alpr(&["--out", s(&out_dir), "report"]);
    assert_eq!(code(&report), 0);
    assert_eq!(String::from_utf8(report.stdout).unwrap(), saved);
}

#[test]
fn calibrate_writes_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out_dir) = (dir.path().join("data"), dir.path().join("out"));
    synth(&data, "10");
    let cal = alpr(&["--dataset", s(&data), "--out", s(&out_dir), "calibrate"]);
    assert_eq!(code(&cal), 0, "{}", String::from_utf8_lossy(&cal.stderr));
    let cfg = PipelineConfig::load(&out_dir.join("calibrated.toml")).unwrap();
    // noise-free validation detections all score 1, so the halved threshold is 0.5
    assert_eq!(cfg.vehicle.confidence_threshold, 0.5);
    cfg.check().unwrap();
}

#[test]
fn missing_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = alpr(&["--dataset", s(&dir.path().join("nope")), "run"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&alpr(&["run", "--clock", "sundial"])), 2);
    assert_eq!(code(&alpr(&["netspec"])), 2);
    assert_eq!(code(&alpr(&["--help"])), 0);
}

#[test]
fn corrupt_annotation_is_a_dataset_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "3");
    fs::write(data.join("track0002").join("frame_001.txt"), "camera: cam1\nposition_vehicle: 1 2 x 4\n").unwrap();
    let out = alpr(&["--dataset", s(&data), "run", "--split", "all"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn netspec_checks_builtins_and_files() {
    let ok = alpr(&["netspec", "fast-yolo-1class", "cr-net-seg"]);
    assert_eq!(code(&ok), 0);
    let table = String::from_utf8(ok.stdout).unwrap();
    assert!(table.contains("13x13x30"), "{table}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    let text = builtin("fast-yolo-1class").unwrap().to_descriptor().replace("conv 30 1x1/1", "conv 31 1x1/1");
    fs::write(&bad, text).unwrap();
    let out = alpr(&["netspec", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8(out.stdout).unwrap().contains("violation"));
}

#[test]
fn heatmap_and_letters() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out_dir) = (dir.path().join("data"), dir.path().join("out"));
    synth(&data, "6");
    let out = alpr(&["--dataset", s(&data), "--out", s(&out_dir), "heatmap", "--target", "plates", "--bins", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("heatmap_plates.png").is_file());
    let text = fs::read_to_string(out_dir.join("heatmap_plates.txt")).unwrap();
    assert_eq!(text.lines().count(), 8);

    let letters = alpr(&["--dataset", s(&data), "report", "--letters", "all"]);
    assert_eq!(code(&letters), 0);
    let total: u64 = String::from_utf8(letters.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 6 * 3);
}
