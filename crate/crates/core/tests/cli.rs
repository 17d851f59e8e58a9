use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use exitbandit::report::parse_oracle_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exitbandit"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn exitbandit")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn generate(dir: &Path, count: usize) -> PathBuf {
    let path = dir.join("traces.jsonl");
    let out = run(bin()
        .args(["generate", "--count", &count.to_string(), "--config"])
        .arg(config("default.json"))
        .arg("--out")
        .arg(&path));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn generate_then_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let path = generate(tmp.path(), 300);
    let out = run(bin().arg("validate").arg("--input").arg(&path));
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.trim(),
        "ok: 300 traces, 12 layers, 2 classes, labeled: yes"
    );
}

#[test]
fn validate_reports_bad_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.jsonl");
    fs::write(
        &path,
        "{\"id\":\"a\",\"num_classes\":2,\"conf\":[0.6,0.9]}\n{\"id\":\"b\",\"num_classes\":2,\"conf\":[0.3,0.9]}\n",
    )
    .unwrap();
    let out = run(bin().arg("validate").arg("--input").arg(&path));
    assert_eq!(code(&out), 1);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn missing_input_file_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(bin()
        .args(["run", "--input"])
        .arg(tmp.path().join("nope.jsonl"))
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 1);
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let traces = generate(tmp.path(), 50);
    let out_dir = tmp.path().join("out");
    let cases: Vec<Vec<&str>> = vec![
        vec!["run"],
        vec!["run", "--k", "ten"],
        vec!["run", "--mu", "1.5"],
        vec!["run", "--gamma=-1"],
        vec!["run", "--runs", "0"],
        vec!["run", "--k", "0"],
        vec!["run", "--lambda", "fast"],
        vec!["oracle", "--fixed-thresholds", "0.5,1.2"],
        vec!["sweep"],
        vec!["sweep", "--mu-grid", "0.2,2.0"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let mut cmd = bin();
        cmd.args(&args);
        if args[0] != "frobnicate" && args.len() > 1 || args == ["sweep"] {
            cmd.arg("--input").arg(&traces).arg("--out").arg(&out_dir);
        }
        let out = run(&mut cmd);
        assert_eq!(
            code(&out),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out_dir.exists(), "{args:?} left output behind");
    }
}

#[test]
fn too_short_stream_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let traces = generate(tmp.path(), 5);
    let out_dir = tmp.path().join("out");
    let out = run(bin()
        .arg("run")
        .arg("--input")
        .arg(&traces)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 1);
    assert!(!out_dir.exists());
}

#[test]
fn run_writes_one_csv_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let traces = generate(tmp.path(), 400);
    let out_dir = tmp.path().join("out");
    let out = run(bin()
        .arg("run")
        .arg("--input")
        .arg(&traces)
        .args([
            "--runs",
            "3",
            "--seed",
            "9",
            "--fixed-thresholds",
            "0.5,0.8",
        ])
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "run_000.csv",
        "run_001.csv",
        "run_002.csv",
        "summary.csv",
        "baselines.csv",
    ] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let run0 = fs::read_to_string(out_dir.join("run_000.csv")).unwrap();
    let mut lines = run0.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,arm_index,threshold,exit_layer,reward,cumulative_regret"
    );
    assert_eq!(run0.lines().filter(|l| !l.starts_with('#')).count(), 401);
    assert!(run0.contains("# summary"));

    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect())
        .collect();
    let runs: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(runs, ["0", "1", "2", "median", "std"]);
    let seeds: Vec<&str> = rows[..3].iter().map(|r| r[1]).collect();
    assert_eq!(seeds, ["9", "10", "11"]);
}

#[test]
fn no_shuffle_runs_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let traces = generate(tmp.path(), 200);
    let out_dir = tmp.path().join("out");
    let out = run(bin()
        .arg("run")
        .arg("--input")
        .arg(&traces)
        .args(["--runs", "2", "--no-shuffle"])
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(out_dir.join("run_000.csv")).unwrap(),
        fs::read(out_dir.join("run_001.csv")).unwrap()
    );
}

#[test]
fn oracle_csv_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(bin()
        .arg("oracle")
        .arg("--synth")
        .arg(config("shifted.json"))
        .args([
            "--count",
            "2000",
            "--k",
            "10",
            "--fixed-thresholds",
            "0.5,0.8,0.9",
        ])
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0);
    let (table, baselines) =
        parse_oracle_csv(fs::File::open(out_dir.join("oracle.csv")).unwrap()).unwrap();
    assert_eq!(table.num_arms(), 10);
    assert_eq!(table.best_threshold(), 0.75);
    assert_eq!(baselines.len(), 3);
    assert!(baselines.iter().all(|b| b.gap >= 0.02));
}

#[test]
fn sweep_rows_follow_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(bin()
        .arg("sweep")
        .arg("--synth")
        .arg(config("default.json"))
        .args(["--count", "1000", "--mu-grid", "0.1,0.5,0.9"])
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mus: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(mus, ["0.1", "0.5", "0.9"]);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&run(bin().arg("--help"))), 0);
    assert_eq!(code(&run(bin().args(["run", "--help"]))), 0);
}
