use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn natmu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natmu"))
        .current_dir(dir)
        .args(args)
        .env_remove("OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = natmu(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(
        dir,
        &[
            "dataset", "synth", "--classes", "4", "--per-class", "40", "--height", "6", "--width", "6",
            "--seed", "2", "--out", "train.uds", "--test-out", "test.uds", "--test-per-class", "10",
        ],
    );
}

const CONFIG: &str = r#"
seeds = [3]
output_dir = "out"

[dataset]
kind = "uds"
train = "train.uds"
test = "test.uds"

[pretrain]
epochs = 4
batch_size = 32
lr = 0.002

[forget]
mode = "random"
ratio = 0.05

[unlearn]
epochs = 2
batch_size = 32
lr = 0.001

[methods.retrain]

[methods.natmu]
n = 3
"#;

#[test]
fn synth_then_inspect_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = ok(dir.path(), &["dataset", "inspect", "train.uds"]);
    assert!(out.contains("records: 160"), "{out}");
    assert!(out.contains("shape: 6x6x1"), "{out}");
    assert!(out.contains("class counts: 40,40,40,40"), "{out}");
}

#[test]
fn pipeline_commands_produce_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    ok(d, &["pretrain", "--data", "train.uds", "--epochs", "3", "--seed", "3", "--out", "orig.nmu"]);
    let built = ok(
        d,
        &["build", "--config", "exp.toml", "--model", "orig.nmu", "--out", "dul.uds", "--provenance", "prov.jsonl"],
    );
    // 5% of 160 is 8 forgetting instances, 3 unlearning instances each.
    assert!(built.contains("wrote 24 unlearning instances for 8"), "{built}");
    assert_eq!(fs::read_to_string(d.join("prov.jsonl")).unwrap().lines().count(), 24);
    let inspected = ok(d, &["dataset", "inspect", "dul.uds"]);
    assert!(inspected.contains("records: 24"), "{inspected}");

    ok(d, &["unlearn", "--method", "retrain", "--config", "exp.toml", "--out", "re.nmu"]);
    ok(d, &["unlearn", "--method", "natmu", "--config", "exp.toml", "--model", "orig.nmu", "--out", "nat.nmu"]);
    ok(
        d,
        &["evaluate", "--config", "exp.toml", "--model", "nat.nmu", "--retrain", "re.nmu", "--out", "r.csv", "--histogram", "h.csv"],
    );
    let report = fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(report.starts_with("metric,value,retrain_value,gap\n"));
    assert!(report.contains("\nAvg.Gap,"));
    assert!(d.join("h.csv").exists());
}

#[test]
fn evaluating_the_reference_against_itself_has_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    ok(d, &["unlearn", "--method", "retrain", "--config", "exp.toml", "--out", "re.nmu"]);
    ok(d, &["evaluate", "--config", "exp.toml", "--model", "re.nmu", "--retrain", "re.nmu", "--out", "r.csv"]);
    let report = fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(report.contains("Avg.Gap,0.0000,,"), "{report}");
}

#[test]
fn run_writes_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    ok(d, &["run", "--config", "exp.toml"]);
    let summary = fs::read_to_string(d.join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("method,metric,mean,std,gap,display\n"));
    let manifest = fs::read_to_string(d.join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\": true"));
    assert!(d.join("out/seed-3/natmu/report.csv").exists());
}

#[test]
fn output_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_natmu"))
        .current_dir(d)
        .args(["run", "--config", "exp.toml"])
        .env("OUTPUT_DIR", d.join("elsewhere"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("elsewhere/summary.csv").exists());
    assert!(!d.join("out").exists());
}

#[test]
fn mask_dump_writes_four_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["mask", "dump", "--height", "3", "--width", "4", "--delta", "-0.1", "--out", "masks"]);
    for j in 1..=4 {
        let csv = fs::read_to_string(d.join(format!("masks/mask_{j}.csv"))).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        // Rotated masks of a 3x4 set are still 3x4.
        assert_eq!(rows.len(), 3, "mask {j}");
        assert!(rows.iter().all(|r| r.split(',').count() == 4), "mask {j}");
    }
}

#[test]
fn check_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["check"]);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
    assert!(out.contains("PASS mask-golden"));
}

#[test]
fn unknown_method_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = natmu(dir.path(), &["unlearn", "--method", "ssd", "--config", "x.toml", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "seeds = []\n").unwrap();
    let out = natmu(d, &["run", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_dataset_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("junk.uds"), b"NOPE0000").unwrap();
    let out = natmu(d, &["dataset", "inspect", "junk.uds"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = natmu(dir.path(), &["dataset", "inspect", "absent.uds"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unlearning_without_a_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let out = natmu(d, &["unlearn", "--method", "natmu", "--config", "exp.toml", "--out", "n.nmu"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs --model"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = natmu(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
