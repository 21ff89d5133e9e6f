//! Black-box tests of the binary: spawn it, check exit codes, outputs, and
//! determinism of everything it writes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sportstrack_core::eval::LabeledBox;
use sportstrack_core::geometry::BBox;
use sportstrack_core::mot_io::write_mot_gt;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sportstrack"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn binary")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_into(dir: &Path, sub: &str) -> std::path::PathBuf {
    let out = run(&["synth", "--preset", "edge_reentry", "--out-dir", sub], dir);
    assert!(out.status.success(), "synth failed: {}", stderr_of(&out));
    dir.join(sub)
}

#[test]
fn synth_writes_three_deterministic_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth_into(tmp.path(), "a");
    let b = synth_into(tmp.path(), "b");
    for name in ["detections.jsonl", "gt.txt", "spec.json"] {
        let left = fs::read(a.join(name)).unwrap();
        let right = fs::read(b.join(name)).unwrap();
        assert!(!left.is_empty(), "{name} is empty");
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn synth_unknown_preset_is_usage_error_listing_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--preset", "nosuch", "--out-dir", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    for name in ["crossing", "boxout_merge", "blur_dip", "edge_reentry"] {
        assert!(err.contains(name), "missing {name} in: {err}");
    }
    assert!(!tmp.path().join("x").exists(), "must not create the directory on failure");
}

#[test]
fn track_runs_and_reports_summary_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = synth_into(tmp.path(), "scen");
    let out = run(
        &["track", "--dets", scen.join("detections.jsonl").to_str().unwrap(), "--out", "tracks.txt"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(tmp.path().join("tracks.txt").exists());
    let err = stderr_of(&out);
    assert!(err.contains("spawned") && err.contains("restored"), "summary missing: {err}");
}

#[test]
fn track_without_dets_flag_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["track"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--dets"));
}

#[test]
fn track_unknown_config_key_is_usage_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = synth_into(tmp.path(), "scen");
    fs::write(tmp.path().join("cfg.json"), "{\"alpa\": 0.5}\n").unwrap();
    let out = run(
        &[
            "track",
            "--dets",
            scen.join("detections.jsonl").to_str().unwrap(),
            "--config",
            "cfg.json",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("alpa"), "key not named: {}", stderr_of(&out));
}

#[test]
fn track_set_flag_overrides_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = synth_into(tmp.path(), "scen");
    let dets = scen.join("detections.jsonl");
    // The file alone is invalid; the --set override must win before
    // validation, proving flag > file > defaults.
    fs::write(tmp.path().join("cfg.json"), "{\"alpha\": 1.5}\n").unwrap();
    let fixed = run(
        &[
            "track",
            "--dets",
            dets.to_str().unwrap(),
            "--config",
            "cfg.json",
            "--set",
            "alpha=0.9",
        ],
        tmp.path(),
    );
    assert!(fixed.status.success(), "{}", stderr_of(&fixed));
    let broken = run(
        &["track", "--dets", dets.to_str().unwrap(), "--set", "alpha=1.5"],
        tmp.path(),
    );
    assert_eq!(broken.status.code(), Some(2));
    assert!(stderr_of(&broken).contains("alpha"));
}

#[test]
fn eval_of_a_perfect_run_prints_hota_100() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = synth_into(tmp.path(), "scen");
    let out = run(
        &["track", "--dets", scen.join("detections.jsonl").to_str().unwrap(), "--out", "tracks.txt"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let out = run(
        &[
            "eval",
            "--pred",
            "tracks.txt",
            "--gt",
            scen.join("gt.txt").to_str().unwrap(),
            "--json",
            "metrics.json",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let table = stdout_of(&out);
    assert!(table.contains("HOTA"), "header missing: {table}");
    assert!(table.contains("100.000"), "perfect score missing: {table}");
    let json = fs::read_to_string(tmp.path().join("metrics.json")).unwrap();
    assert!(json.contains("\"HOTA\": 100.0"), "json dump wrong: {json}");
}

#[test]
fn eval_half_coverage_prints_the_closed_form_score() {
    let tmp = tempfile::tempdir().unwrap();
    let boxes: Vec<LabeledBox<f64>> = (1..=10u64)
        .map(|frame| LabeledBox { frame, id: 1, bbox: BBox::new(0.0, 0.0, 10.0, 10.0) })
        .collect();
    write_mot_gt(tmp.path().join("gt.txt"), &boxes).unwrap();
    write_mot_gt(tmp.path().join("pred_gt.txt"), &boxes[..5]).unwrap();
    // gt.txt rows double as a track file: same leading columns.
    let rows = fs::read_to_string(tmp.path().join("pred_gt.txt")).unwrap();
    let pred: String = rows
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.truncate(6);
            format!("{},1,-1,-1,-1\n", f.join(","))
        })
        .collect();
    fs::write(tmp.path().join("pred.txt"), pred).unwrap();
    let out = run(&["eval", "--pred", "pred.txt", "--gt", "gt.txt"], tmp.path());
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("70.711"), "sqrt(1/2) score missing: {}", stdout_of(&out));
}

#[test]
fn eval_missing_file_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--pred", "nope.txt", "--gt", "nope.txt"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn overlay_renders_one_rect_per_row_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("tracks.txt"),
        "1,1,10.00,20.00,30.00,40.00,0.9,-1,-1,-1\n\
         1,2,50.00,60.00,30.00,40.00,0.8,-1,-1,-1\n\
         2,1,12.00,20.00,30.00,40.00,0.9,-1,-1,-1\n",
    )
    .unwrap();
    for sub in ["s1", "s2"] {
        let out = run(
            &["overlay", "--tracks", "tracks.txt", "--width", "640", "--height", "360", "--out", sub],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let f1 = fs::read_to_string(tmp.path().join("s1/frame_000001.svg")).unwrap();
    assert_eq!(f1.matches("<rect").count(), 2, "frame 1 has two rows: {f1}");
    assert_eq!(f1.matches("<text").count(), 2);
    let f2 = fs::read_to_string(tmp.path().join("s1/frame_000002.svg")).unwrap();
    assert_eq!(f2.matches("<rect").count(), 1);
    assert_eq!(
        fs::read(tmp.path().join("s1/frame_000001.svg")).unwrap(),
        fs::read(tmp.path().join("s2/frame_000001.svg")).unwrap(),
        "overlay output must be deterministic"
    );
}

#[test]
fn overlay_empty_frame_filter_warns_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tracks.txt"), "1,1,10.00,20.00,30.00,40.00,0.9,-1,-1,-1\n").unwrap();
    let out = run(
        &[
            "overlay", "--tracks", "tracks.txt", "--width", "640", "--height", "360", "--out", "svg",
            "--frames", "100..200",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert!(stderr_of(&out).contains("warning"), "{}", stderr_of(&out));
    assert!(!tmp.path().join("svg").exists(), "no directory should be created");
}

#[test]
fn overlay_on_garbage_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tracks.txt"), "not,a,track\n").unwrap();
    let out = run(
        &["overlay", "--tracks", "tracks.txt", "--width", "640", "--height", "360", "--out", "svg"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
