use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskfuse"))
        .args(args)
        .env("MASKFUSE_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("ds");
    ok(&[
        "synth",
        "--seed",
        "4",
        "--out",
        s(&out),
        "--clips",
        "2",
        "--frames",
        "20",
        "--width",
        "64",
        "--height",
        "48",
        "--classes",
        "10",
        "--feature-dim",
        "8",
        "--swap",
        "0.1",
    ]);
    out.join("dataset.json")
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

#[test]
fn synthetic_tree_validates() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let v: serde_json::Value = serde_json::from_str(&ok(&["eval", "--validate-only", "--manifest", s(&ds)])).unwrap();
    assert_eq!(v["clips"], 2);
    assert_eq!(v["frames"], 40);
    assert_eq!(v["errors"].as_array().unwrap().len(), 0);
}

#[test]
fn eval_writes_report_and_per_class_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let report = dir.path().join("eval.json");
    ok(&["eval", "--manifest", s(&ds), "--vc", "4,8", "--report", s(&report)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["mvc"]["4"].is_number() && v["mvc"]["8"].is_number());
    assert_eq!(v["config"]["vc_windows"], serde_json::json!([4, 8]));
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    assert!(csv.starts_with("class,iou\n"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn report_config_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&[
        "pipeline",
        "--manifest",
        s(&ds),
        "--window",
        "5",
        "--vote-scope",
        "per_track",
        "--report",
        s(&a),
    ]);
    ok(&[
        "pipeline",
        "--manifest",
        s(&ds),
        "--config",
        s(&a),
        "--jobs",
        "1",
        "--report",
        s(&b),
    ]);
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["config"]["tracker"]["window_size"], 5);
    assert_eq!(v["config"]["refine"]["vote_scope"], "per_track");
}

#[test]
fn refine_output_scores_like_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let refined = dir.path().join("refined");
    ok(&["refine", "--manifest", s(&ds), "--out", s(&refined)]);
    let eval: serde_json::Value =
        serde_json::from_str(&ok(&["eval", "--manifest", s(&refined.join("dataset.json"))])).unwrap();
    let pipe: serde_json::Value = serde_json::from_str(&ok(&["pipeline", "--manifest", s(&ds)])).unwrap();
    assert_eq!(eval["miou"], pipe["after"]["miou"]);
    assert_eq!(eval["mbiou"], pipe["after"]["mbiou"]);
}

#[test]
fn train_then_classify() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let model = dir.path().join("m.mmlp");
    ok(&[
        "train",
        "--manifest",
        s(&ds),
        "--out",
        s(&model),
        "--epochs",
        "5",
        "--hidden",
        "16",
        "--seed",
        "3",
    ]);
    for base in ["pred", "none"] {
        let out = dir.path().join(format!("cls_{base}"));
        ok(&[
            "classify",
            "--manifest",
            s(&ds),
            "--model",
            s(&model),
            "--base-from",
            base,
            "--out",
            s(&out),
        ]);
        ok(&["eval", "--validate-only", "--manifest", s(&out.join("dataset.json"))]);
    }
}

#[test]
fn filter_counts_survivors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let keep_all: serde_json::Value = serde_json::from_str(&ok(&[
        "filter",
        "--manifest",
        s(&ds),
        "--pred-iou",
        "0",
        "--stability",
        "0",
        "--out",
        s(&dir.path().join("f0")),
    ]))
    .unwrap();
    assert_eq!(keep_all["kept"], keep_all["masklets"]);
    let none: serde_json::Value = serde_json::from_str(&ok(&[
        "filter",
        "--manifest",
        s(&ds),
        "--pred-iou",
        "1.0",
        "--stability",
        "1.0",
        "--out",
        s(&dir.path().join("f1")),
    ]))
    .unwrap();
    assert_eq!(none["kept"], 0);
}

#[test]
fn sweep_axes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let csv = ok(&["sweep", "--manifest", s(&ds), "--pred-iou", "0.5,0.9"]);
    assert!(csv.starts_with("pred_iou,mIoU,FWIoU,mVC8,mVC16\n0.5,"));
    let notes = ok(&["sweep", "--manifest", s(&ds), "--grid-note", "16,32"]);
    let rows: Vec<&str> = notes.lines().skip(1).collect();
    assert_eq!(rows[0].split_once(',').unwrap().1, rows[1].split_once(',').unwrap().1);
}

#[test]
fn errors_are_json_on_stderr() {
    let missing = run(&["eval", "--manifest", "/nonexistent/m.json"]);
    let v = error_json(&missing);
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("/nonexistent/m.json"));

    assert_eq!(error_json(&run(&["eval"]))["error"], "config");
    assert_eq!(error_json(&run(&["sweep", "--manifest", "x.json"]))["error"], "usage");
    assert_eq!(
        error_json(&run(&["pipeline", "--vote-scope", "global"]))["error"],
        "usage"
    );
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let v = error_json(&run(&["pipeline", "--manifest", s(&ds), "--pred-iou", "1.5"]));
    assert_eq!(v["error"], "config");
    let v = error_json(&run(&["sweep", "--manifest", s(&ds), "--window", "0,4"]));
    assert_eq!(v["error"], "config");
}
