use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"seed = 3

[protocol]
repetitions = 1
train_pool_size = 400
batch_size = 200
batch_count = 2
app_samples = 10
app_sample_size = 80
grid = false

[selection]
start = "all"

[synth]
n_classes = 5
instances_per_class = [120, 120, 120, 120, 120]
users_per_cohort = 3

[[synth.blocks]]
name = "signal"
dims = 3
separation = 0.8

[[synth.blocks]]
name = "noise"
dims = 3
"#;

fn featquant(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featquant"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = featquant(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), CONFIG).unwrap();
    ok(tmp.path(), &["--config", "run.toml", "--out", "data", "synth"]);
    tmp
}

#[test]
fn stress_writes_one_row_per_sample() {
    let tmp = fixture();
    ok(tmp.path(), &["--config", "run.toml", "--data", "data", "--out", "stress", "stress"]);
    let csv = fs::read_to_string(tmp.path().join("stress/stress.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("repetition,train_size,sample_idx,true_prev_1"));
    assert_eq!(header.split(',').count(), 3 + 5 + 5 + 1);
    assert_eq!(lines.count(), 2 * 10);
    let summary = fs::read_to_string(tmp.path().join("stress/stress_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn select_then_report_builds_overlap_table() {
    let tmp = fixture();
    let dir = tmp.path();
    for (task, seed) in [("first", "3"), ("second", "4")] {
        let out = format!("sel_{task}");
        ok(dir, &["--config", "run.toml", "--data", "data", "--task", task, "--seed", seed, "--out", &out, "select"]);
        let trace = fs::read_to_string(dir.join(&out).join("trace.csv")).unwrap();
        assert!(trace.starts_with("round,block,action,attempted,loss_before,loss_after"));
        assert!(!fs::read_to_string(dir.join(&out).join("selection.txt")).unwrap().trim().is_empty());
    }
    let text = ok(dir, &["--out", "report", "report", "sel_first", "sel_second"]);
    assert!(text.contains("first") && text.contains("second"));
    let overlap = fs::read_to_string(dir.join("report/overlap.csv")).unwrap();
    assert_eq!(overlap.lines().count(), 2);
    let heatmap = fs::read_to_string(dir.join("report/heatmap.csv")).unwrap();
    assert!(heatmap.lines().next().unwrap().contains("first"));
}

#[test]
fn labels_from_comment_stream() {
    let tmp = fixture();
    let stdout = ok(tmp.path(), &["--config", "run.toml", "--data", "data", "--task", "activity", "--out", "lab", "label"]);
    assert!(stdout.contains("labelled 15"), "{stdout}");
    let labels = fs::read_to_string(tmp.path().join("lab/labels_activity.csv")).unwrap();
    assert_eq!(labels.lines().count(), 16);
}

#[test]
fn quantify_writes_a_distribution() {
    let tmp = fixture();
    ok(
        tmp.path(),
        &["--config", "run.toml", "--data", "data", "--quantifier", "PACC", "--out", "q", "quantify", "--unlabelled", "data/features.csv"],
    );
    let csv = fs::read_to_string(tmp.path().join("q/prevalence.csv")).unwrap();
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(tmp.path().join("q/model.txt").exists());
}

#[test]
fn errors_carry_a_category() {
    let tmp = tempfile::tempdir().unwrap();
    let out = featquant(tmp.path(), &["--config", "missing.toml", "stress"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config-not-found]"));

    let tmp = fixture();
    let out = featquant(tmp.path(), &["--config", "run.toml", "--quantifier", "XYZ", "--data", "data", "stress"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}
