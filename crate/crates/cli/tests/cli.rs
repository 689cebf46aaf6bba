use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dintr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dintr")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Default configuration shrunk to a short schedule and finetune budget.
fn quick_config(dir: &Path) -> PathBuf {
    let out = dintr(&["track", "--seq", "unused", "--print-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["schedule"]["T"] = 8.into();
    v["engine"]["finetune_steps"] = 2.into();
    let p = dir.join("quick.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn synth(dir: &Path, frames: &str) -> PathBuf {
    let seq = dir.join("seq");
    let out = dintr(&["synth", "--frames", frames, "--out", s(&seq)]);
    assert!(out.status.success(), "{}", stderr(&out));
    seq
}

#[test]
fn synth_writes_frames_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path(), "3");
    for f in ["frame_00000.ppm", "frame_00002.ppm", "gt.jsonl", "manifest.json"] {
        assert!(seq.join(f).exists(), "missing {f}");
    }
    assert!(!seq.join("frame_00003.ppm").exists());
    assert_eq!(std::fs::read_to_string(seq.join("gt.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn missing_config_key_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(quick_config(dir.path())).unwrap()).unwrap();
    v["engine"].as_object_mut().unwrap().remove("lr");
    let p = dir.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let out = dintr(&["track", "--config", s(&p), "--seq", "unused", "--print-config"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("engine") && err.contains("lr"), "{err}");
}

#[test]
fn malformed_scene_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scene.json");
    std::fs::write(&p, "{\"width\": 64}").unwrap();
    let out = dintr(&["synth", "--config", s(&p), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn missing_sequence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dintr(&["track", "--seq", s(&dir.path().join("nope")), "--init-from-gt", "point"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn printed_config_reloads_identically_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let first = dintr(&["track", "--seq", "unused", "--seed", "99", "--print-config"]);
    let v: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["seed"], 99);
    let p = dir.path().join("cfg.json");
    std::fs::write(&p, &first.stdout).unwrap();
    let again = dintr(&["track", "--config", s(&p), "--seq", "unused", "--print-config"]);
    assert_eq!(first.stdout, again.stdout);
}

#[test]
fn track_eval_and_overlay_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path(), "3");
    let cfg = quick_config(dir.path());
    let pred = dir.path().join("pred.jsonl");
    let tel = dir.path().join("tel.json");
    let out = dintr(&[
        "track",
        "--config",
        s(&cfg),
        "--seq",
        s(&seq),
        "--init-from-gt",
        "box",
        "--out",
        s(&pred),
        "--telemetry",
        s(&tel),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 3);
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&tel).unwrap()).unwrap();
    assert!(t.is_object());

    let report = dintr(&["eval", "--gt", s(&seq.join("gt.jsonl")), "--pred", s(&pred), "--metrics", "box,id"]);
    assert!(report.status.success(), "{}", stderr(&report));
    let r: Value = serde_json::from_slice(&report.stdout).unwrap();
    let iou = r["box_iou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&iou));
    assert_eq!(r["frames"], 2);
    assert!(r.get("point").is_none());

    let drawn = dir.path().join("overlay");
    let o = dintr(&["overlay", "--seq", s(&seq), "--pred", s(&pred), "--out", s(&drawn)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(drawn.join("frame_00000.ppm")).unwrap().len(),
        std::fs::read(seq.join("frame_00000.ppm")).unwrap().len()
    );
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth(dir.path(), "4");
    let gt = seq.join("gt.jsonl");
    let out = dintr(&["eval", "--gt", s(&gt), "--pred", s(&gt), "--metrics", "point,box,mask,id"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["box_iou"], 1.0);
    assert_eq!(r["mask_j"], 1.0);
    assert_eq!(r["point"]["mean_error"], 0.0);
    assert_eq!(r["id"]["switches"], 0);
}

#[test]
fn eval_rejects_unknown_metric_and_unpaired_files() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth(dir.path(), "2").join("gt.jsonl");
    let bad = dintr(&["eval", "--gt", s(&gt), "--pred", s(&gt), "--metrics", "speed"]);
    assert_eq!(bad.status.code(), Some(2));
    let unpaired = dintr(&["eval", "--gt", s(&gt), "--gt", s(&gt), "--pred", s(&gt)]);
    assert_eq!(unpaired.status.code(), Some(2));
}

#[test]
fn bench_writes_table_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dintr(&["bench", "--t", "3,6", "--repeats", "1", "--finetune-steps", "1", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.contains("reconstruct,6,") && csv.contains("interpolate,3,"), "{csv}");
    assert!(dir.path().join("bench.svg").exists());
}

#[test]
fn verify_passes_and_mutation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("verify.json");
    let ok = dintr(&["verify", "--json", s(&json)]);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{text}");
    assert!(!text.contains("FAIL"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));

    let bad = dintr(&["verify", "--mutate", "flip-from-next"]);
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL operator_equivalence")), "{text}");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_dintr"))
        .args(["track", "--seq", "unused", "--print-config"])
        .env("DINTR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
