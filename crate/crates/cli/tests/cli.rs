use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pia::extractors::{write_cache, write_frame_image, write_wav, AudioTrack};
use pia::synthgen::{generate_video, SynthProfile};

fn pia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pia")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pia(args);
    assert!(
        out.status.success(),
        "pia {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert!(pia(&["train", "--help"]).status.success());
    let bad = pia(&["train", "--no-such-flag"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = pia(&["synth", "--real", "2"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn synth_train_eval_and_analyses() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["synth", "--real", "4", "--fake", "4", "--seed", "3", "--test-fraction", "0.25", "--out", s(&data)]);
    for f in ["index.jsonl", "train.jsonl", "test.jsonl"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }

    let stdout = ok(&[
        "train",
        "--data",
        s(&data.join("train.jsonl")),
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--out",
        s(&run),
    ]);
    assert!(stdout.contains("config:"));
    for f in ["config.json", "model.ckpt", "loss.jsonl"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    ok(&[
        "eval",
        "--ckpt",
        s(&run.join("model.ckpt")),
        "--data",
        s(&data.join("test.jsonl")),
        "--out",
        s(&run),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_videos"], 2);
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&auc));

    let plots = dir.path().join("plots");
    ok(&["plot", "--kind", "roc", "--input", s(&run.join("report.json")), "--out", s(&plots)]);
    assert!(plots.join("roc.png").is_file());

    let fake = data.join("caches/fake_0001.pia");
    let real = data.join("caches/real_0000.pia");
    let drift = dir.path().join("drift");
    ok(&["analyze-drift", "--cache", s(&fake), "--compare", s(&real), "--out", s(&drift)]);
    let csv = fs::read_to_string(drift.join("drift.csv")).unwrap();
    assert!(csv.starts_with("pair_index,l2,cosine,masked\n"));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(drift.join("drift_stats.json")).unwrap()).unwrap();
    // fake_0001 is a face swap with three planted jumps
    assert_eq!(stats["spike_count"], 3);
    assert!(drift.join("drift.png").is_file());

    let geom = dir.path().join("geom");
    ok(&["analyze-geometry", "--cache", s(&real), "--out", s(&geom)]);
    let csv = fs::read_to_string(geom.join("geometry.csv")).unwrap();
    assert!(csv.starts_with("frame_index,phoneme,height,width,mar,closure\n"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn single_class_evaluation_is_a_metric_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["synth", "--real", "3", "--fake", "3", "--out", s(&data)]);
    ok(&["train", "--data", s(&data.join("train.jsonl")), "--epochs", "1", "--out", s(&run)]);
    let reals: String = fs::read_to_string(data.join("index.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"label\":\"real\""))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(!reals.is_empty());
    fs::write(data.join("reals.jsonl"), reals).unwrap();
    let out = pia(&["eval", "--ckpt", s(&run.join("model.ckpt")), "--data", s(&data.join("reals.jsonl")), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MetricError"));
}

#[test]
fn extract_with_synthetic_adapters() {
    let dir = tempfile::tempdir().unwrap();
    let fps = 25.0;
    let script: Vec<(String, f64)> = [("", 0.2), ("m", 0.3), ("æ", 0.3), ("p", 0.3), ("", 0.2)]
        .iter()
        .map(|(p, d)| (p.to_string(), *d))
        .collect();
    let video = generate_video("clip", &SynthProfile::real(script), fps, 11).unwrap();
    let n = video.frames.len();

    let frames = dir.path().join("frames");
    fs::create_dir_all(&frames).unwrap();
    for i in 0..n {
        write_frame_image(&frames.join(format!("{i:05}.png")), &video.frame_image(i)).unwrap();
    }
    let rate = 16_000;
    let samples = (0..(n as f64 / fps * rate as f64) as usize)
        .map(|k| 0.3 * (k as f32 * 0.05).sin())
        .collect();
    let wav = dir.path().join("audio.wav");
    write_wav(&wav, &AudioTrack::mono(samples, rate)).unwrap();
    let truth = dir.path().join("truth.pia");
    write_cache(&truth, &video.to_cache(false, &[])).unwrap();

    let fixtures = dir.path().join("fixtures");
    fs::create_dir_all(&fixtures).unwrap();
    fs::write(
        fixtures.join("transcript.json"),
        r#"{"segments": [{"text": "map", "start": 0.2, "end": 1.1}]}"#,
    )
    .unwrap();

    let out = dir.path().join("out");
    let stdout = ok(&[
        "extract",
        "--video-id",
        "clip",
        "--frames",
        s(&frames),
        "--audio",
        s(&wav),
        "--label",
        "real",
        "--adapters",
        "synthetic",
        "--fixtures",
        s(&fixtures),
        "--ground-truth",
        s(&truth),
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains(&format!("clip: {n} frames, 3 groups")), "{stdout}");
    assert!(out.join("caches/clip.pia").is_file());
    assert_eq!(fs::read_to_string(out.join("index.jsonl")).unwrap().lines().count(), 3);
}
