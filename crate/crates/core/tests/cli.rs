use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcl_ckf::cli::export::{STEPS_HEADER, SUMMARY_HEADER};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcl-ckf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn vpo_run_writes_both_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["vpo", "--runs", "6", "--horizon", "25", "--seed", "7", "--phi", "0"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(&dir.path().join("summary.csv"));
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some(SUMMARY_HEADER));
    let rows: Vec<_> = lines.collect();
    // six filters, two components
    assert_eq!(rows.len(), 12);
    let mut sorted = rows.clone();
    sorted.sort();
    assert_eq!(rows, sorted);
    let steps = read(&dir.path().join("steps.csv"));
    assert_eq!(steps.lines().next(), Some(STEPS_HEADER));
    assert_eq!(steps.lines().count(), 1 + 12 * 25);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("scenario"));
    assert!(stdout.contains("huber"));
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["vpo", "--runs", "12", "--horizon", "30", "--seed", "3", "--max-failed", "1"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&[&args[..], &["--workers", "1"]].concat(), &a).status.success());
    assert!(run(&[&args[..], &["--workers", "4"]].concat(), &b).status.success());
    for file in ["summary.csv", "steps.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
    }
    let c = dir.path().join("c");
    assert!(run(&["vpo", "--runs", "12", "--horizon", "30", "--seed", "4", "--max-failed", "1"], &c).status.success());
    assert_ne!(read(&a.join("summary.csv")), read(&c.join("summary.csv")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"runs": 3, "horizon": 10, "filters": "ckf,dg", "phi": 0.0}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["vpo", "--config", cfg.to_str().unwrap(), "--horizon", "15"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let steps = read(&out_dir.join("steps.csv"));
    assert_eq!(steps.lines().count(), 1 + 2 * 2 * 15);
}

#[test]
fn unknown_config_key_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"runs": 3, "sigma3": 1.0}"#).unwrap();
    let out = run(&["vpo", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma3"));
}

#[test]
fn out_of_range_alpha_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["vpo", "--alpha", "1.5"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha") && err.contains("0 <= alpha <= 1"), "{err}");
}

#[test]
fn sweep_emits_one_row_block_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["sweep", "--param", "varphi", "--values", "100,300", "--phi", "0.2", "--runs", "4", "--horizon", "20", "--filters", "dg,lg", "--max-failed", "1"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(&dir.path().join("summary.csv"));
    assert_eq!(summary.lines().count(), 1 + 2 * 2 * 2);
    assert!(summary.contains("vpo_varphi100,dg,x1"));
    assert!(summary.contains("vpo_varphi300,lg,x2"));
    assert!(dir.path().join("steps_vpo_varphi300.csv").exists());
}

#[test]
fn table1_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["table1", "--runs", "4", "--horizon", "20", "--max-failed", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read(&dir.path().join("table1.csv"));
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines[0], "scenario,component,0,0.1,0.3,0.5,0.7,0.9,1");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("phi0.3_varphi200,x1,"));
    assert!(lines[4].starts_with("phi0.2_varphi300,x2,"));
}

#[test]
fn unwritable_output_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&["vpo", "--runs", "2", "--horizon", "5"], &blocker.join("sub"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("file"));
}
