use std::fs;
use std::path::Path;
use std::process::Command;

use cardiaq::study_io::{read_concordance_csv, read_metrics_csv};

fn run(args: &[&str]) -> i32 {
    let argv = std::iter::once("cardiaq".to_string()).chain(args.iter().map(|s| s.to_string()));
    cardiaq_cli::run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn phantom_quantify_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    assert_eq!(run(&["phantom", "--n", "3", "--frames", "4", "--out", p(&cases)]), 0);
    let gt = dir.path().join("gt.csv");
    assert_eq!(run(&["quantify", "--cases", p(&cases), "--out", p(&gt)]), 0);
    let measured = read_metrics_csv(&gt).unwrap();
    assert_eq!(measured.len(), 3);
    let analytic = read_metrics_csv(&cases.join("analytic_metrics.csv")).unwrap();
    for (m, a) in measured.iter().zip(&analytic) {
        assert_eq!(m.case_id, a.case_id);
        assert!((m.lv_edv - a.lv_edv).abs() / a.lv_edv < 0.03, "{} vs {}", m.lv_edv, a.lv_edv);
    }
    let table = dir.path().join("table.csv");
    let truth = cases.join("analytic_metrics.csv");
    assert_eq!(run(&["evaluate", "--pred", p(&gt), "--truth", p(&truth), "--out", p(&table)]), 0);
    assert_eq!(read_concordance_csv(&table).unwrap().len(), 7);
}

#[test]
fn train_segment_quantify_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    assert_eq!(run(&["phantom", "--n", "2", "--frames", "4", "--out", p(&cases)]), 0);
    let model = dir.path().join("model.bin");
    let history = dir.path().join("history.csv");
    let train = [
        "train", "--cases", p(&cases), "--out", p(&model), "--epochs", "2", "--width", "4",
        "--depth", "2", "--history", p(&history), "--localizer-epochs", "1",
    ];
    assert_eq!(run(&train), 0);
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 3);

    let pred = dir.path().join("pred");
    let segment = ["segment", "--model", p(&model), "--cases", p(&cases), "--out", p(&pred), "--localize", "learned"];
    assert_eq!(run(&segment), 0);
    for f in 0..4 {
        assert!(pred.join("phantom001").join(format!("phantom001_frame{f:02}_pred.nii.gz")).is_file());
    }
    let auto = dir.path().join("auto.csv");
    assert_eq!(run(&["quantify", "--cases", p(&cases), "--pred", p(&pred), "--out", p(&auto)]), 0);
    assert_eq!(read_metrics_csv(&auto).unwrap().len(), 2);

    let manual = dir.path().join("manual.csv");
    fs::write(&manual, "case_id,seconds\nphantom001,600\nphantom002,480\n").unwrap();
    let report = dir.path().join("bench.json");
    let bench = [
        "bench", "--model", p(&model), "--cases", p(&cases), "--manual-times", p(&manual),
        "--repetitions", "1", "--out", p(&report),
    ];
    assert_eq!(run(&bench), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["matched_cases"], 2);
    assert!(json["manual_minus_auto"].is_array());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# defaults\nn = 2\nframes = 3\n").unwrap();
    let out = dir.path().join("a");
    assert_eq!(run(&["--config", p(&cfg), "phantom", "--out", p(&out)]), 0);
    assert_eq!(read_metrics_csv(&out.join("analytic_metrics.csv")).unwrap().len(), 2);
    let out = dir.path().join("b");
    assert_eq!(run(&["phantom", "--config", p(&cfg), "--n", "1", "--out", p(&out)]), 0);
    assert_eq!(read_metrics_csv(&out.join("analytic_metrics.csv")).unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["phantom"]), 2);
    assert_eq!(run(&["phantom", "--n", "many", "--out", "x"]), 2);
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed 3\n").unwrap();
    assert_eq!(run(&["--config", p(&bad), "phantom", "--out", "x"]), 2);
    let missing = dir.path().join("missing");
    assert_eq!(run(&["quantify", "--cases", p(&missing), "--out", "x.csv"]), 1);
    let out = dir.path().join("t.csv");
    assert_eq!(run(&["evaluate", "--pred", p(&missing), "--truth", p(&missing), "--out", p(&out)]), 1);
    assert!(!out.exists());
}

#[test]
fn binary_reports_errors_on_stderr() {
    let out = Command::new(env!("CARGO_BIN_EXE_cardiaq"))
        .args(["segment", "--model", "/nonexistent/model.bin", "--cases", "/nonexistent", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn outputs_are_byte_identical_and_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["phantom", "--n", "2", "--frames", "3", "--seed", "11", "--out", p(out)]), 0);
    }
    let before = snapshot(&a);
    assert_eq!(before, snapshot(&b));
    let (q1, q2) = (dir.path().join("q1.json"), dir.path().join("q2.json"));
    assert_eq!(run(&["quantify", "--cases", p(&a), "--out", p(&q1)]), 0);
    assert_eq!(run(&["quantify", "--cases", p(&a), "--out", p(&q2)]), 0);
    assert_eq!(fs::read(&q1).unwrap(), fs::read(&q2).unwrap());
    assert_eq!(snapshot(&a), before);
}
