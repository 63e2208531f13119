use std::fs;
use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

use simulst::harness::{
    corpus_from_logs, load_manifest, read_instances, run_eval, write_feature_file, write_outputs, EvalOptions,
    ModelChoice, CURVE_FILE, INSTANCES_FILE, REPORT_FILE,
};
use simulst::policy::{ComputeCost, PolicyConfig};
use simulst::stream::SpeechStream;
use simulst::FeatureMatrix;

const GOLDEN: &str = r#"{"id":"golden","reference":"t1 t2 t3 t4","synthetic":{"target":["t1","t2","t3","t4"],"reveal":[50,100,200,250],"duration_ms":6000,"frame_rate_hz":50}}"#;

fn golden_options() -> EvalOptions {
    EvalOptions {
        policy: PolicyConfig {
            hold_n: 2,
            beam: 1,
            ..PolicyConfig::default()
        },
        ..EvalOptions::default()
    }
}

fn manifest(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
    let path = dir.join("manifest.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn digest(dir: &Path) -> Vec<u8> {
    let mut h = Sha256::new();
    for f in [INSTANCES_FILE, REPORT_FILE, CURVE_FILE] {
        h.update(fs::read(dir.join(f)).unwrap());
    }
    h.finalize().to_vec()
}

#[test]
fn golden_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let entries = load_manifest(&manifest(dir.path(), &[GOLDEN])).unwrap();
    let out = run_eval(&entries, &golden_options()).unwrap();
    assert_eq!(out.logs.len(), 1);
    let log = &out.logs[0];
    assert_eq!(log.prediction, "t1 t2 t3 t4");
    assert_eq!(log.delays_ms, vec![4500, 6000, 6000, 6000]);
    let corpus = out.report.corpus.as_ref().unwrap();
    assert_eq!(corpus.al_s, Some(4.50));
    assert_eq!(corpus.report.latency.unwrap().al_ms, 4500.0);
    assert_eq!(corpus.report.bleu.score, 100.0);

    let mut offline = golden_options();
    offline.policy.chunk_ms = 10_000;
    offline.policy.start_ms = 10_000;
    let out = run_eval(&entries, &offline).unwrap();
    assert_eq!(out.logs[0].delays_ms, vec![6000; 4]);
    assert_eq!(out.report.corpus.unwrap().al_s, Some(6.00));
}

#[test]
fn chunk_only_offline_case() {
    // start 2000 still gives one early decision; hold-n keeps it silent
    let dir = tempfile::tempdir().unwrap();
    let entries = load_manifest(&manifest(dir.path(), &[GOLDEN])).unwrap();
    let mut opts = golden_options();
    opts.policy.chunk_ms = 10_000;
    let out = run_eval(&entries, &opts).unwrap();
    assert_eq!(out.logs[0].delays_ms, vec![6000; 4]);
}

#[test]
fn sweep_emits_curve_points() {
    let dir = tempfile::tempdir().unwrap();
    let entries = load_manifest(&manifest(dir.path(), &[GOLDEN])).unwrap();
    let mut opts = golden_options();
    opts.sweep_hold_n = vec![0, 7];
    let out = run_eval(&entries, &opts).unwrap();
    let curve = &out.report.curve;
    assert_eq!(curve.len(), 2);
    assert_eq!(curve[0].label, "hold_n=0");
    assert!(curve[0].al_s.unwrap() <= curve[1].al_s.unwrap());
    assert_eq!(curve[0].bleu, curve[1].bleu);
}

#[test]
fn outputs_round_trip_and_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let second = r#"{"id":"b","reference":"x y z","synthetic":{"target":["x","y","z"],"reveal":[10,120,330],"duration_ms":7300}}"#;
    let entries = load_manifest(&manifest(dir.path(), &[GOLDEN, second])).unwrap();
    let mut opts = golden_options();
    opts.compute_cost = ComputeCost::Fixed(40);
    opts.sweep_hold_n = vec![0, 2, 7];

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let run = run_eval(&entries, &opts).unwrap();
    write_outputs(&run.report, &run.logs, &out_a).unwrap();
    let rerun = run_eval(&entries, &opts).unwrap();
    write_outputs(&rerun.report, &rerun.logs, &out_b).unwrap();
    assert_eq!(digest(&out_a), digest(&out_b));

    let loaded = read_instances(&out_a.join(INSTANCES_FILE)).unwrap();
    assert_eq!(loaded, run.logs);
    assert_eq!(loaded[1].id, "b");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join(REPORT_FILE)).unwrap()).unwrap();
    let recomputed = corpus_from_logs(&loaded).unwrap();
    let lat = recomputed.latency.unwrap();
    let corpus = &report["corpus"];
    for (key, v) in [
        ("al_ms", lat.al_ms),
        ("laal_ms", lat.laal_ms),
        ("laal_ca_ms", lat.laal_ca_ms),
    ] {
        assert!((corpus["latency"][key].as_f64().unwrap() - v).abs() < 1e-9, "{key}");
    }
    assert!((corpus["bleu"]["score"].as_f64().unwrap() - recomputed.bleu.score).abs() < 1e-9);
    assert!(lat.laal_ca_ms > lat.laal_ms);

    let curve = fs::read_to_string(out_a.join(CURVE_FILE)).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "label\tBLEU\tAL_s");
    assert_eq!(lines.len(), 4);
}

#[test]
fn empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    let entries = load_manifest(&path).unwrap();
    let out = run_eval(&entries, &EvalOptions::default()).unwrap();
    assert_eq!((out.report.succeeded, out.report.failed), (0, 0));
    assert!(out.report.corpus.is_none());
    write_outputs(&out.report, &out.logs, &dir.path().join("o")).unwrap();
    assert_eq!(
        fs::read_to_string(dir.path().join("o").join(INSTANCES_FILE)).unwrap(),
        ""
    );
}

#[test]
fn failures_are_recorded_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let missing = r#"{"id":"gone","reference":"a b","features_path":"missing.feat"}"#;
    let entries = load_manifest(&manifest(dir.path(), &[GOLDEN, missing])).unwrap();
    let out = run_eval(&entries, &golden_options()).unwrap();
    assert_eq!((out.report.succeeded, out.report.failed), (1, 1));
    assert_eq!(out.report.failures[0].id, "gone");
    assert!(!out.report.all_succeeded());
    assert_eq!(out.report.corpus.unwrap().report.count, 1);
}

#[test]
fn feature_files_with_file_model() {
    let dir = tempfile::tempdir().unwrap();
    let stream = SpeechStream::synthetic("src", 5000, 50, 6).unwrap();
    let feats: FeatureMatrix = stream.frame_rows(stream.total_frames()).unwrap();
    write_feature_file(&dir.path().join("a.feat"), 50, &feats).unwrap();
    let line = r#"{"id":"a","reference":"das ist ein kleiner Test .","features_path":"a.feat"}"#;
    let entries = load_manifest(&manifest(dir.path(), &[line, GOLDEN])).unwrap();
    let opts = EvalOptions {
        model: ModelChoice::File,
        ..EvalOptions::default()
    };
    let out = run_eval(&entries, &opts).unwrap();
    assert_eq!(out.report.failed, 0, "{:?}", out.report.failures);
    for log in &out.logs {
        assert_eq!(log.prediction.split_whitespace().count(), log.delays_ms.len());
        assert!(log.delays_ms.windows(2).all(|w| w[0] <= w[1]));
    }
    assert_eq!(out.logs[0].source_duration_ms, 5000);

    // the table model cannot drive a feature-file entry
    let out = run_eval(&entries, &EvalOptions::default()).unwrap();
    assert_eq!(out.report.failed, 1);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simulst"))
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), &[GOLDEN]);
    let out = dir.path().join("out");
    let status = cli()
        .args(["--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args([
            "--hold-n",
            "2",
            "--beam",
            "1",
            "--sweep-hold-n",
            "0,7",
            "--compute-cost-ms",
            "25",
        ])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("AL 4.50 s"), "{stdout}");
    let logs = read_instances(&out.join(INSTANCES_FILE)).unwrap();
    assert_eq!(logs[0].elapsed_ms, vec![4550, 6075, 6075, 6075]);
    assert_eq!(fs::read_to_string(out.join(CURVE_FILE)).unwrap().lines().count(), 3);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = r#"{"id":"gone","reference":"a","features_path":"nope.feat"}"#;
    let m = manifest(dir.path(), &[GOLDEN, bad]);
    let out = dir.path().join("out");
    let status = cli()
        .args(["--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(out.join(REPORT_FILE).exists());

    let status = cli()
        .args(["--manifest", "/nonexistent.jsonl", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = cli()
        .args([
            "--manifest",
            m.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--model",
            "llama",
        ])
        .status()
        .unwrap();
    assert!(!status.success());
}
