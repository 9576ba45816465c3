//! End-to-end runs of the `etrs` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use etrs_core::io::{read_vector, ReportDocument};
use etrs_core::{validate, EigConfig, Status};

fn etrs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etrs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_diag(dir: &Path, diag: &[f64], a: &[f64], b: &[f64]) {
    let mut mtx = format!(
        "%%MatrixMarket matrix coordinate real symmetric\n{0} {0} {1}\n",
        diag.len(),
        diag.len()
    );
    for (i, d) in diag.iter().enumerate() {
        mtx += &format!("{} {} {d}\n", i + 1, i + 1);
    }
    fs::write(dir.join("A.mtx"), mtx).unwrap();
    let lines = |v: &[f64]| v.iter().map(|x| format!("{x}\n")).collect::<String>();
    fs::write(dir.join("a.txt"), lines(a)).unwrap();
    fs::write(dir.join("b.txt"), lines(b)).unwrap();
}

fn solve_args<'a>(dir: &'a Path, c: &'a str, delta: &'a str) -> Vec<String> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    vec![
        "solve".into(),
        "--matrix".into(),
        p("A.mtx"),
        "--a".into(),
        p("a.txt"),
        "--b".into(),
        p("b.txt"),
        "--c".into(),
        c.into(),
        "--delta".into(),
        delta.into(),
    ]
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    etrs(&refs)
}

#[test]
fn solve_fixture_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_diag(dir.path(), &[-2.0, 1.0], &[0.0, 0.0], &[1.0, 0.0]);
    let x_path = dir.path().join("x.txt");
    let mut args = solve_args(dir.path(), "0", "1");
    args.extend(["--emit-x".into(), x_path.to_string_lossy().into_owned()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = ReportDocument::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(doc.status, Status::Solved);
    assert!((doc.objective + 2.0).abs() < 1e-10);
    let kkt = doc.kkt.unwrap();
    assert!(kkt.kkt1 <= 1e-10 && kkt.kkt2.abs() <= 1e-10 && kkt.kkt3.abs() <= 1e-10);
    let x = read_vector(&x_path).unwrap();
    assert!((x[0].abs() - 1.0).abs() < 1e-10);
}

#[test]
fn gap_fixture_exits_two_with_report() {
    let dir = tempfile::tempdir().unwrap();
    write_diag(dir.path(), &[-1.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]);
    let report = dir.path().join("report.json");
    let mut args = solve_args(dir.path(), "0", "1");
    args.extend(["--out".into(), report.to_string_lossy().into_owned()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    let doc = ReportDocument::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc.status, Status::DualityGap);
    assert!((doc.dual_value + 1.0).abs() < 1e-6);
    let cert = doc.gap_certificate.unwrap();
    assert!(cert.signs[0] * cert.signs[1] < 0.0);
}

#[test]
fn nonpositive_delta_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    write_diag(dir.path(), &[-2.0, 1.0], &[0.0, 0.0], &[1.0, 0.0]);
    let out = run(&solve_args(dir.path(), "0", "0"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta must be positive"));
}

#[test]
fn general_matrix_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_diag(dir.path(), &[-2.0, 1.0], &[0.0, 0.0], &[1.0, 0.0]);
    let text = fs::read_to_string(dir.path().join("A.mtx")).unwrap();
    fs::write(dir.path().join("A.mtx"), text.replace("symmetric", "general")).unwrap();
    let out = run(&solve_args(dir.path(), "0", "1"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("symmetric"));
}

fn generate(dir: &Path, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["generate", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = etrs(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic_and_loadable() {
    let root = tempfile::tempdir().unwrap();
    let flags = ["--class", "1", "--n", "100", "--m", "2", "--alpha", "1", "--density", "0.01", "--seed", "1"];
    let (d1, d2) = (root.path().join("one"), root.path().join("two"));
    let manifest = generate(&d1, &flags);
    generate(&d2, &flags);
    for f in ["A.mtx", "a.txt", "b.txt", "manifest.json"] {
        assert_eq!(fs::read(d1.join(f)).unwrap(), fs::read(d2.join(f)).unwrap(), "{f}");
    }
    assert_eq!(manifest["files"].as_object().unwrap().len(), 3);
    let c = manifest["c"].as_f64().unwrap();
    let inst = etrs_core::io::load_instance(&d1.join("A.mtx"), &d1.join("a.txt"), &d1.join("b.txt"), c, 1.0)
        .unwrap();
    assert!(validate(&inst, &EigConfig::default()).unwrap().is_ok());
}

#[test]
fn class_two_fixes_b_and_c() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path(), &["--class", "2", "--n", "100"]);
    assert_eq!(manifest["c"].as_f64(), Some(1.0));
    let b = read_vector(&dir.path().join("b.txt")).unwrap();
    assert_eq!(b[0], 1.0);
    assert!(b[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn verify_agrees_on_class_two() {
    let out = etrs(&["verify", "--class", "2", "--n", "50", "--count", "20", "--seed", "0", "--include-fixture"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("21/21 agree"));
    assert!(text.lines().any(|l| l.starts_with("gap fixture") && l.contains(" gap ")));
}

#[test]
fn verify_with_no_instances() {
    let out = etrs(&["verify", "--count", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("0/0 agree"));
}

#[test]
fn verify_refuses_sizes_above_the_oracle_cap() {
    let out = etrs(&["verify", "--n", "1000", "--count", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle cap"));
}

#[test]
fn verify_output_ignores_thread_count() {
    let args = ["verify", "--class", "1", "--n", "20", "--n-max", "60", "--count", "12", "--seed", "3"];
    let run_with = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_etrs"))
            .args(args)
            .env("ETRS_THREADS", threads)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run_with("1"), run_with("4"));
}

#[test]
fn bench_single_row_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = etrs(&["bench", "--n", "100", "--repeats", "1", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    let csv = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("100,1,0,"));
}
