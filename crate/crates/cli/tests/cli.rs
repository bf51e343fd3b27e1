use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use deteclap::eval::{MetricsReport, Recalls, RetrievalMetrics};
use deteclap::labels::{read_labels, read_scores, threshold_labels};

fn deteclap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deteclap")).args(args).current_dir(cwd).env_remove("DETECLAP_SEED").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = deteclap(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn usage_error(args: &[&str], cwd: &Path) -> String {
    let out = deteclap(args, cwd);
    assert_eq!(out.status.code(), Some(2), "{args:?}");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

#[test]
fn labels_or_is_the_union_of_modalities() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--clips", "6", "--classes", "3", "--out", "corpus"], d);
    ok(&["labels", "--op", "or", "--scores", "corpus/scores.jsonl", "--out", "labels"], d);
    let scores = read_scores(&d.join("corpus/scores.jsonl")).unwrap();
    let labels = read_labels(&d.join("labels/labels.jsonl")).unwrap();
    assert_eq!(labels.labels.len(), 6);
    for l in &labels.labels {
        let of = |m| scores.vectors.iter().find(|v| v.clip == l.clip && v.modality == m).unwrap();
        let ya = threshold_labels(of(deteclap::labels::Modality::Audio), 0.5).unwrap();
        let yv = threshold_labels(of(deteclap::labels::Modality::Visual), 0.4).unwrap();
        for i in 0..3 {
            assert_eq!(l.values[i], ya.values[i].max(yv.values[i]));
        }
    }
    let echo = fs::read_to_string(d.join("labels/config.toml")).unwrap();
    assert!(echo.contains("scores = \"corpus/scores.jsonl\""), "{echo}");
}

#[test]
fn report_renders_percentages() {
    let tmp = tempfile::tempdir().unwrap();
    let recalls = Recalls { r1: 0.152, r5: 0.392, r10: 0.495, sum_r: 0.152 + 0.392 + 0.495 };
    let mut r = MetricsReport::new(0, "or", serde_json::json!({}));
    r.retrieval = Some(RetrievalMetrics { queries: 10, sum_r: 2.0 * recalls.sum_r, audio_to_visual: recalls.clone(), visual_to_audio: recalls });
    r.save(&tmp.path().join("m.json")).unwrap();
    let out = ok(&["report", "m.json"], tmp.path());
    assert!(out.contains("15.2  39.2  49.5"), "{out}");
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    usage_error(&["train", "--variant", "xor"], d);
    usage_error(&["eval", "retrieval", "--checkpoint", "missing.ckpt", "--manifest", "missing.jsonl", "--out", "o"], d);
    fs::write(d.join("bad.toml"), "[labels]\nvariant = 3\n").unwrap();
    assert!(usage_error(&["--config", "bad.toml", "synth", "--out", "o"], d).contains("bad.toml"));
    usage_error(&["labels", "--op", "or", "--out", "o"], d);
    usage_error(&["synth"], d);
    usage_error(&["frobnicate"], d);
}

#[test]
fn seed_env_fallback_and_idempotent_synth() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--seed", "5", "--clips", "4", "--out", "a"], d);
    ok(&["synth", "--seed", "5", "--clips", "4", "--out", "b"], d);
    let env = Command::new(env!("CARGO_BIN_EXE_deteclap")).args(["synth", "--clips", "4", "--out", "c"]).env("DETECLAP_SEED", "5").current_dir(d).output().unwrap();
    assert!(env.status.success());
    ok(&["synth", "--seed", "6", "--clips", "4", "--out", "e"], d);
    let read = |dir: &str, f: &str| fs::read(d.join(dir).join(f)).unwrap();
    for f in ["manifest.jsonl", "scores.jsonl", "audio/clip_0000.f32", "frames/clip_0003.f32"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
        assert_eq!(read("a", f), read("c", f), "{f}");
    }
    assert_ne!(read("a", "scores.jsonl"), read("e", "scores.jsonl"));
    assert!(fs::read_to_string(d.join("c/config.toml")).unwrap().contains("seed = 5"));
    let bad = Command::new(env!("CARGO_BIN_EXE_deteclap")).args(["synth", "--out", "f"]).env("DETECLAP_SEED", "x").current_dir(d).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), "seed = 3\n[labels]\nvariant = \"and\"\ntheta_visual = 0.3\n[train]\nsteps = 4\nbatch_size = 4\n").unwrap();
    ok(&["--config", "run.toml", "synth", "--clips", "4", "--out", "corpus"], d);
    ok(&["--config", "run.toml", "train", "--manifest", "corpus/manifest.jsonl", "--scores", "corpus/scores.jsonl", "--theta-audio", "0.7", "--out", "run"], d);
    let report = MetricsReport::load(&d.join("run/metrics.json")).unwrap();
    assert_eq!(report.method, "and");
    assert_eq!(report.loss_trace.len(), 4);
    assert_eq!(report.config["labels"]["theta_audio"], 0.7);
    assert_eq!(report.config["labels"]["theta_visual"], 0.3);
    assert_eq!(report.config["seed"], 3);
    assert!(d.join("run/checkpoints/step_000004.ckpt").exists());
    let trace = fs::read_to_string(d.join("run/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 1);
    assert!(first["l_a2l"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_then_eval_overfits_eight_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--out", "corpus"], d);
    ok(&["train", "--variant", "base", "--manifest", "corpus/manifest.jsonl", "--steps", "1500", "--out", "run"], d);
    let table = ok(&["eval", "retrieval", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--split", "train", "--out", "eval"], d);
    let report = MetricsReport::load(&d.join("eval/metrics.json")).unwrap();
    let r = report.retrieval.unwrap();
    assert_eq!((r.audio_to_visual.r1, r.visual_to_audio.r1), (1.0, 1.0), "{table}");
    assert_eq!(report.config["paths"]["checkpoint"], "run/model.ckpt");
    ok(&["eval", "classify", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--split", "train", "--epochs", "1", "--out", "cls"], d);
    assert!(MetricsReport::load(&d.join("cls/metrics.json")).unwrap().classification.is_some());
    usage_error(&["eval", "retrieval", "--profile", "paper", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--out", "x"], d);
}

#[test]
fn sweep_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--clips", "4", "--classes", "4", "--out", "corpus"], d);
    let args = ["sweep", "--manifest", "corpus/manifest.jsonl", "--scores", "corpus/scores.jsonl", "--grid", "0.2,0.4,0.6", "--steps", "2", "--split", "train", "--jobs", "2", "--out", "s"];
    ok(&args, d);
    let report = MetricsReport::load(&d.join("s/metrics.json")).unwrap();
    assert_eq!(report.sweep.unwrap().rows.len(), 3);
    let first = fs::read(d.join("s/metrics.json")).unwrap();
    ok(&args, d);
    assert_eq!(fs::read(d.join("s/metrics.json")).unwrap(), first);
    usage_error(&["sweep", "--variant", "base", "--manifest", "corpus/manifest.jsonl", "--out", "s2"], d);
}
