use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scsampler::checkpoint::CLASSIFIER_TAG;
use scsampler::datamodel::binfile::HEADER_LEN;

const BIN: &str = env!("CARGO_BIN_EXE_scsampler");

/// Writes `exp.toml` with a small synthetic dataset; `synth` and `rest` are spliced in.
fn write_config(dir: &Path, synth: &str, rest: &str) -> PathBuf {
    let text = format!(
        r#"output_dir = "out"

[data]
dir = "data"
train = "data/train/manifest.jsonl"
test = "data/test/manifest.jsonl"

[synth]
num_classes = 3
train_per_class = 8
test_per_class = 4
clips_min = 20
clips_max = 30
{synth}

[training]
epochs = 5

{rest}
"#
    );
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(cfg: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--config").arg(cfg);
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn zero_salient_fraction_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "salient_fraction = 0.0", "");
    let out = run(&cfg, &["generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("salient_fraction"), "{}", stderr(&out));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn sal_rank_needs_a_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    ok(run(&cfg, &["generate"]));
    let out = run(&cfg, &["train", "sampler"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("pseudo-labels"), "{}", stderr(&out));
}

#[test]
fn ac_loss_trains_without_a_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "[sampler]\nloss = \"ac\"\nkind = \"ac-classifier\"");
    ok(run(&cfg, &["generate"]));
    ok(run(&cfg, &["train", "sampler"]));
    let bytes = fs::read(dir.path().join("out/checkpoints/sampler.visual-md.sclm")).unwrap();
    assert_eq!(&bytes[..4], b"SCLM");
    assert_eq!(bytes[HEADER_LEN], 3);
    assert!(dir.path().join("out/logs/train-sampler-visual-md.log").exists());
}

#[test]
fn generate_prints_stable_checksums() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = ok(run(&write_config(a.path(), "", ""), &["generate"]));
    let out_b = ok(run(&write_config(b.path(), "", ""), &["generate"]));
    let sums = |s: &str| {
        s.lines()
            .filter(|l| l.len() > 64 && l.as_bytes()[64] == b' ')
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    assert!(!sums(&out_a).is_empty(), "{out_a}");
    assert_eq!(sums(&out_a), sums(&out_b));
    let c = tempfile::tempdir().unwrap();
    let out_c = ok(run(&write_config(c.path(), "seed = 9", ""), &["generate"]));
    assert_ne!(sums(&out_a), sums(&out_c));
}

#[test]
fn full_pipeline_evaluate_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "[sweep]\nparameter = \"K\"\nvalues = [1, 2, 5, 10, 20]");
    ok(run(&cfg, &["generate"]));
    let written = ok(run(&cfg, &["train", "classifier"]));
    assert!(written.contains("classifier.sclm"), "{written}");
    let head = fs::read(dir.path().join("out/checkpoints/classifier.sclm")).unwrap();
    assert_eq!(head[HEADER_LEN], CLASSIFIER_TAG);
    ok(run(&cfg, &["train", "sampler"]));

    ok(run(&cfg, &["evaluate"]));
    let eval = dir.path().join("out/evaluate");
    let rows = csv_rows(&eval.join("report.csv"));
    let strategies: Vec<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(strategies, ["dense", "random", "uniform", "empirical", "scsampler", "oracle"]);
    // A summary line plus one line per test video, per strategy.
    assert_eq!(fs::read_to_string(eval.join("reports.jsonl")).unwrap().lines().count(), 6 * (1 + 12));
    assert!(eval.join("selections.jsonl").exists());

    ok(run(&cfg, &["sweep"]));
    let rows = csv_rows(&dir.path().join("out/sweep/report.csv"));
    assert_eq!(rows.len(), 30);
    for s in ["dense", "random", "uniform", "empirical", "scsampler", "oracle"] {
        assert_eq!(rows.iter().filter(|r| r.get(0) == Some(s)).count(), 5, "{s}");
    }

    // Overrides land in the report.
    ok(run(&cfg, &["evaluate", "-k", "3", "-n", "2"]));
    let rows = csv_rows(&eval.join("report.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.get(1) == Some("3")));
    assert_eq!(rows.iter().find(|r| r.get(0) == Some("scsampler")).unwrap().get(2), Some("2"));
}

#[test]
fn validate_reports_corruption_with_data_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    ok(run(&cfg, &["generate"]));
    let out = ok(run(&cfg, &["validate"]));
    assert!(out.contains("ok"), "{out}");

    // Flip a feature value to NaN in place.
    let feat_dir = dir.path().join("data/train/feat");
    let victim = fs::read_dir(&feat_dir).unwrap().map(|e| e.unwrap().path()).min().unwrap();
    let mut bytes = fs::read(&victim).unwrap();
    bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&victim, &bytes).unwrap();
    let out = run(&cfg, &["validate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("feature-finite"));

    let manifest = dir.path().join("data/test/manifest.jsonl");
    let out = Command::new(BIN).arg("validate").arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    ok(run(&cfg, &["generate"]));
    let out = run(&cfg, &["evaluate"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let out = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).args(["train", "everything"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "[evaluate]\nk = 0");
    assert_eq!(run(&cfg, &["evaluate"]).status.code(), Some(1));
}
