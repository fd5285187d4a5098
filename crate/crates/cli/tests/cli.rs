use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn spectest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectest"))
        .args(args)
        .env_remove("SPECTEST_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

// Small deterministic generator so the fixture does not depend on a crate.
fn lcg_normalish(state: &mut u64) -> f64 {
    let mut s = 0.0;
    for _ in 0..12 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        s += (*state >> 11) as f64 / (1u64 << 53) as f64;
    }
    s - 6.0
}

fn write_sample(dir: &Path, coupling: f64, n: usize) -> PathBuf {
    let mut state = 7u64;
    let mut x = [0.0; 3];
    let mut text = String::from("x,y,z\n");
    for _ in 0..n {
        let e: Vec<f64> = (0..3).map(|_| lcg_normalish(&mut state)).collect();
        x = [0.5 * x[0] + e[0], 0.5 * x[1] + coupling * x[0] + e[1], e[2]];
        text.push_str(&format!("{},{},{}\n", x[0], x[1], x[2]));
    }
    let path = dir.join("sample.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn test_command_writes_flat_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 0.8, 400);
    let out = dir.path().join("report.json");
    let o = spectest(&["test", "--input", input.to_str().unwrap(), "--m", "20", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert!(stderr(&o).starts_with("REJECT"), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["n"], 400);
    assert_eq!(v["r"], 3);
    assert_eq!(v["m"], 20);
    assert_eq!(v["statistic"], "full:kl");
    assert_eq!(v["reject"], true);
    assert!(v["p_value"].as_f64().unwrap() < 1e-4);
    assert_eq!(v["input_hash"].as_str().unwrap().len(), 64);
    assert!(v.as_object().unwrap().values().all(|x| !x.is_object()));
}

#[test]
fn independent_sample_is_retained_and_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 0.0, 400);
    let args = ["test", "--input", input.to_str().unwrap(), "--m", "20", "--stat", "quadratic"];
    let a = spectest(&args);
    let b = spectest(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(v["statistic"], "quadratic");
}

#[test]
fn separable_and_graphical_hypotheses_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 0.3, 300);
    let i = input.to_str().unwrap();
    let o = spectest(&["test", "--input", i, "--m", "16", "--hypothesis", "separable", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("hypothesis,statistic"));
    assert!(lines.next().unwrap().starts_with("separable,full:kl"));
    let o = spectest(&["test", "--input", i, "--cvll", "--hypothesis", "graphical", "--edges", "1-2", "--kind", "j"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["bandwidth_selection"], "cvll");
    assert_eq!(v["edges"], "1-2");
}

#[test]
fn kernel_constants_line() {
    let o = spectest(&["kernel-constants"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "Cu=0.5 Du=0.333333 Bu=1.0\n");
}

#[test]
fn usage_errors_exit_64() {
    for args in [
        vec!["frobnicate"],
        vec!["test"],
        vec!["test", "--input", "x.csv", "--m", "15"],
        vec!["test", "--input", "x.csv"],
        vec!["test", "--input", "x.csv", "--m", "8", "--hypothesis", "graphical"],
        vec!["simulate-null", "--n", "101", "--m", "16", "--stat", "median"],
    ] {
        let o = spectest(&args);
        assert_eq!(o.status.code(), Some(64), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}");
    }
    assert_eq!(spectest(&["--help"]).status.code(), Some(0));
    assert_eq!(spectest(&["--version"]).status.code(), Some(0));
}

#[test]
fn malformed_input_exits_1_naming_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut text = String::from("a,b\n");
    for t in 0..20 {
        text.push_str(&format!("{t},{}\n", if t == 4 { "oops".to_string() } else { (t * t).to_string() }));
    }
    fs::write(&path, text).unwrap();
    let o = spectest(&["test", "--input", path.to_str().unwrap(), "--m", "4"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("row 5") && err.contains("column 2") && err.contains("oops"), "{err}");

    let o = spectest(&["test", "--input", dir.path().join("missing.csv").to_str().unwrap(), "--m", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.csv"));
}

#[test]
fn simulate_null_is_deterministic_across_thread_counts() {
    let base = ["simulate-null", "--n", "101", "--m", "16", "--reps", "120", "--seed", "11"];
    let one = spectest(&[&base[..], &["--threads", "1"]].concat());
    let four = spectest(&[&base[..], &["--threads", "4"]].concat());
    let again = spectest(&[&base[..], &["--threads", "4"]].concat());
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(four.stdout, again.stdout);
    let text = stdout(&one);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,n,m,stat,mean,var,skew,kurt,q95,size");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("quadratic,101,16,quadratic,"));

    let json = spectest(&[&base[..], &["--format", "json", "--threads", "2"]].concat());
    let v: Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(v["manifest"]["seed"], 11);
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_power_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("power.csv");
    let o = spectest(&[
        "simulate-power", "--phi1", "0.4", "--n", "201", "--m", "30", "--reps", "100", "--seed", "5",
        "--stat", "full", "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,n,m,stat,mean,var,skew,kurt,q95,power");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cells[..4], &["kl", "201", "30", "full"]);
    let power: f64 = cells[9].parse().unwrap();
    assert!(power > 0.9, "power {power}");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.with_extension("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate-power");
}

#[test]
fn threads_default_from_environment() {
    let base = ["simulate-null", "--n", "101", "--m", "16", "--reps", "100", "--seed", "2", "--stat", "block"];
    let env = Command::new(env!("CARGO_BIN_EXE_spectest")).args(base).env("SPECTEST_THREADS", "3").output().unwrap();
    assert_eq!(env.status.code(), Some(0));
    assert_eq!(env.stdout, spectest(&base).stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_spectest")).args(base).env("SPECTEST_THREADS", "lots").output().unwrap();
    assert_eq!(bad.status.code(), Some(64));
}

#[test]
fn cvll_reports_selected_bandwidth_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 0.3, 300);
    let o = spectest(&["cvll", "--input", input.to_str().unwrap(), "--grid", "6,10,20,40"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let m = v["m"].as_u64().unwrap();
    assert!([6, 10, 20, 40].contains(&m));
    assert_eq!(v["scores"].as_array().unwrap().len(), 4);
}
