//! Command-line verbs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use normalcs_core::io::{read_pbm, read_pgm, read_raw};

fn normalcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normalcs")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"{
  "method": "tv",
  "defaults": { "size": [32, 32], "sampling": { "ratio": 0.25 }, "local": { "max_inner": 100 } },
  "tv": {},
  "backprojection": {}
}"#;

#[test]
fn phantom_writes_pgm_and_raw() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("p.pgm");
    let raw = dir.path().join("p.raw");
    assert!(normalcs(&["phantom", "--size", "40x24", "--out", arg(&pgm)]).status.success());
    assert!(normalcs(&["phantom", "--size", "40x24", "--out", arg(&raw)]).status.success());
    assert_eq!(read_pgm(&pgm).unwrap().dims(), (40, 24));
    let img = read_raw(&raw).unwrap();
    assert_eq!(img.dims(), (40, 24));
    assert!(img.max() <= 1.0 && img.min() >= 0.0);
}

#[test]
fn phantom_too_small_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = normalcs(&["phantom", "--size", "8x8", "--out", arg(&dir.path().join("p.pgm"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mask_by_ratio_reports_the_chosen_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.pbm");
    let o = normalcs(&["mask", "--size", "128x128", "--ratio", "0.12", "--out", arg(&out)]);
    assert!(o.status.success());
    let plan = read_pbm(&out).unwrap();
    assert!(plan.sample_ratio() >= 0.12);
    assert!(stdout(&o).starts_with("16 lines"), "{}", stdout(&o));

    let o = normalcs(&["mask", "--size", "64x64", "--lines", "5", "--seed", "3", "--out", arg(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("5 lines"));
}

#[test]
fn reconstruct_writes_requested_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let (out, report, trace) = (dir.path().join("u.pgm"), dir.path().join("r.json"), dir.path().join("t.csv"));
    let o = normalcs(&[
        "reconstruct",
        "--config",
        arg(&cfg),
        "--trace",
        arg(&trace),
        "--out",
        arg(&out),
        "--report",
        arg(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("method        tv"));
    assert_eq!(read_pgm(&out).unwrap().dims(), (32, 32));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["method"], "tv");
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 1);

    let o = normalcs(&["reconstruct", "--config", arg(&cfg), "--method", "backprojection", "--noise-domain", "image"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("method        backprojection"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(normalcs(&["reconstruct", "--config", arg(&missing)]).status.code(), Some(2));

    let typo = dir.path().join("typo.json");
    std::fs::write(&typo, r#"{ "defaults": { "local": { "alpah": 3 } }, "tv": {} }"#).unwrap();
    let o = normalcs(&["reconstruct", "--config", arg(&typo), "--method", "tv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpah"));

    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, SMALL).unwrap();
    assert_eq!(normalcs(&["reconstruct", "--config", arg(&cfg), "--method", "fancy"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, r#"{ "defaults": { "image": { "path": "/nonexistent/x.pgm" }, "size": [32, 32] }, "tv": {} }"#)
        .unwrap();
    let o = normalcs(&["reconstruct", "--config", arg(&cfg), "--method", "tv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("load"));
}

#[test]
fn table_prints_rows_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    // without a top-level method, every block becomes a column
    std::fs::write(dir.path().join("a.json"), SMALL.replace(r#""method": "tv","#, "")).unwrap();
    let csv = dir.path().join("table.csv");
    let o = normalcs(&["table", "--configs", arg(dir.path()), "--csv", arg(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains('*'));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "experiment,backprojection,tv");
    assert!(text.lines().nth(1).unwrap().starts_with("a,"));
}

#[test]
fn partial_table_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.json"), SMALL).unwrap();
    std::fs::write(
        dir.path().join("b.json"),
        r#"{ "defaults": { "image": { "path": "/nonexistent/x.pgm" }, "size": [32, 32] }, "tv": {} }"#,
    )
    .unwrap();
    let o = normalcs(&["table", "--configs", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.json"), SMALL).unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_normalcs"))
            .args(["table", "--configs", arg(dir.path())])
            .env("NORMALCS_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    let two = run("2");
    assert!(one.status.success() && two.status.success());
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(run("zero").status.code(), Some(2));
    assert_eq!(run("0").status.code(), Some(2));
}
