use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cramkit::{confidence_interval, CramReport};
use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cramkit"));
    cmd.env_remove("CRAMKIT_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cramkit")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "cramkit failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const FOUR_ROWS: &str = "x1,d,y,e\n0.5,1,2.0,0.5\n-1.0,0,1.0,0.5\n1.5,1,3.0,0.5\n0.2,0,0.0,0.5\n";

/// Linear-effect trial with a deterministic pseudo-random stream.
fn trial_csv(n: usize) -> String {
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut unif = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut s = String::from("x1,x2,d,y,e\n");
    for i in 0..n {
        let x1 = 2.0 * unif() - 1.0;
        let x2 = 2.0 * unif() - 1.0;
        let d = i % 2;
        let y = x2 + d as f64 * x1 + (unif() - 0.5);
        s.push_str(&format!("{x1},{x2},{d},{y},0.5\n"));
    }
    s
}

#[test]
fn constant_learner_on_four_rows_estimates_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "four.csv", FOUR_ROWS);
    let out = run(&[
        "cram",
        "--input",
        input.to_str().unwrap(),
        "--learner",
        "constant",
        "--batches",
        "2",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["report"]["estimate"].as_f64(), Some(0.0));
    assert_eq!(v["report"]["T"].as_u64(), Some(2));
}

#[test]
fn too_many_batches_names_invalid_batching() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "four.csv", FOUR_ROWS);
    let target = dir.path().join("report.json");
    let out = run(&[
        "cram",
        "--input",
        input.to_str().unwrap(),
        "--batches",
        "5",
        "--output",
        target.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("invalid-batching"),
        "{}",
        stderr(&out)
    );
    assert!(!target.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn alpha_ten_percent_uses_z_1_644854() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(200));
    let out = run(&[
        "cram",
        "--input",
        input.to_str().unwrap(),
        "--alpha",
        "0.10",
    ]);
    let r = &stdout_json(&out)["report"];
    let est = r["estimate"].as_f64().unwrap();
    let var = r["variance"].as_f64().unwrap();
    let se = r["se"].as_f64().unwrap();
    let lo = r["ci_lower"].as_f64().unwrap();
    let hi = r["ci_upper"].as_f64().unwrap();
    assert!(se > 0.0);
    assert!(((hi - est) / se - 1.644854).abs() < 1e-6);
    assert!(((est - lo) / se - 1.644854).abs() < 1e-6);
    let (olo, ohi) = confidence_interval(est, var, 20, 0.10);
    assert!((olo - lo).abs() <= 1e-12 * (1.0 + lo.abs()));
    assert!((ohi - hi).abs() <= 1e-12 * (1.0 + hi.abs()));
}

#[test]
fn json_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(120));
    let target = dir.path().join("report.json");
    let out = run(&[
        "cram",
        "--input",
        input.to_str().unwrap(),
        "--output",
        target.to_str().unwrap(),
        "--stable",
        "--golden",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&target).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let report: CramReport = serde_json::from_value(v["report"].clone()).unwrap();
    let again: CramReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report, again);
    assert_eq!(report.estimate, v["report"]["estimate"].as_f64().unwrap());
    assert!(report.stability.is_some());
    assert!(v.get("metadata").is_none());
}

#[test]
fn golden_mode_is_byte_stable_and_default_has_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(100));
    let args = [
        "cram",
        "--input",
        input.to_str().unwrap(),
        "--seed",
        "9",
        "--golden",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let with_meta = stdout_json(&run(&args[..5]));
    assert!(with_meta["metadata"]["created_unix_ms"].as_u64().unwrap() > 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(100));
    let config = write(
        dir.path(),
        "run.toml",
        &format!(
            "input = {:?}\nbatches = 4\nseed = 3\n[learner]\nname = \"mlearner_ridge\"\nlambda = 1.0\n",
            input.to_str().unwrap()
        ),
    );
    let cfg = config.to_str().unwrap();
    let v = stdout_json(&run(&["cram", "--config", cfg]));
    assert_eq!(v["report"]["T"].as_u64(), Some(4));
    assert_eq!(v["report"]["seed"].as_u64(), Some(3));
    let v = stdout_json(&run(&["cram", "--config", cfg, "--batches", "5"]));
    assert_eq!(v["report"]["T"].as_u64(), Some(5));

    let bad = write(dir.path(), "bad.toml", "bacthes = 4\n");
    let out = run(&["cram", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("stage=config"));
}

#[test]
fn csv_output_uses_six_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(100));
    let out = run(&[
        "cram",
        "--input",
        input.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("field,value\n"));
    let est = text
        .lines()
        .find_map(|l| l.strip_prefix("estimate,"))
        .unwrap();
    let digits = est.trim_start_matches('-').replace('.', "");
    assert!(digits.trim_start_matches('0').len() <= 6, "{est}");
}

#[test]
fn split_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(200));
    let path = input.to_str().unwrap();
    let v = stdout_json(&run(&["split", "--input", path]));
    assert_eq!(v["report"]["train_fraction"].as_f64(), Some(0.8));
    assert_eq!(v["report"]["n_train"].as_u64(), Some(160));
    let v = stdout_json(&run(&["split", "--input", path, "--train-fraction", "0.6"]));
    assert_eq!(v["report"]["n_train"].as_u64(), Some(120));
    assert_eq!(v["report"]["n_test"].as_u64(), Some(80));
    let out = run(&["split", "--input", path, "--train-fraction", "1.0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("kind=config"));
}

#[test]
fn simulate_single_replicate_and_two_methods() {
    let out = run(&[
        "simulate",
        "--replicates",
        "1",
        "--n",
        "200",
        "--n-oracle",
        "2000",
        "--methods",
        "cram,split_80_20",
        "--format",
        "csv",
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("method,value,bias,abs_bias,mc_se,mean_est_se,coverage,replicates")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "cram");
    assert_eq!(rows[1][0], "split_80_20");
    for row in &rows {
        assert!(row[6] == "0" || row[6] == "1", "coverage {}", row[6]);
        assert_eq!(row[7], "1");
    }
}

#[test]
fn simulate_json_lists_rows() {
    let v = stdout_json(&run(&[
        "simulate",
        "--dgp",
        "null",
        "--p",
        "3",
        "--replicates",
        "3",
        "--n",
        "100",
        "--n-oracle",
        "1000",
        "--records",
        "--golden",
    ]));
    assert_eq!(v["report"]["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["report"]["records"].as_array().unwrap().len(), 6);
}

#[test]
fn threads_fall_back_to_environment() {
    let out = bin()
        .env("CRAMKIT_THREADS", "0")
        .args([
            "simulate",
            "--replicates",
            "1",
            "--n",
            "100",
            "--n-oracle",
            "100",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("threads"));
}

fn diagnose(extra: &[&str]) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "trial.csv", &trial_csv(200));
    let mut args = vec!["diagnose", "--input", input.to_str().unwrap(), "--golden"];
    args.extend_from_slice(extra);
    stdout_json(&run(&args))
}

#[test]
fn diagnose_constant_learner_is_flat() {
    let v = diagnose(&["--learner", "constant"]);
    let r = &v["report"];
    assert!(r["q_t"]
        .as_array()
        .unwrap()
        .iter()
        .all(|q| q.as_f64() == Some(0.0)));
    assert_eq!(r["flag"].as_bool(), Some(false));
}

#[test]
fn diagnose_alternating_learner_flags() {
    let v = diagnose(&["--learner", "alternating"]);
    assert_eq!(v["report"]["flag"].as_bool(), Some(true));
}

#[test]
fn diagnose_stable_wrapper_does_not_flag() {
    let v = diagnose(&["--learner", "alternating", "--stable"]);
    assert_eq!(v["report"]["flag"].as_bool(), Some(false));
    let v = diagnose(&["--learner", "slearner_ridge", "--stable"]);
    assert_eq!(v["report"]["flag"].as_bool(), Some(false));
}

#[test]
fn missing_input_is_a_config_error() {
    let out = run(&["cram", "--input", "/nonexistent/data.csv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("stage=config"));
}

#[test]
fn bad_cell_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "bad.csv",
        "x1,d,y,e\n0.1,1,2,0.5\n0.3,0,oops,0.5\n",
    );
    let out = run(&["cram", "--input", input.to_str().unwrap(), "--batches", "2"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(
        err.contains("stage=ingest") && err.contains("row 2") && err.contains("`y`"),
        "{err}"
    );
}
