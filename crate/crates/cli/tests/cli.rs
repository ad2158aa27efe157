use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const UNIFORM2: &str = r#"{"kind":"uniform","params":{"vocab":2}}"#;

fn speclimit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclimit"))
        .args(args)
        .output()
        .expect("spawn speclimit")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json payload")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn empty_trace_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write(dir.path(), "empty.jsonl", "");
    let out = speclimit(&["estimate", &trace]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_mu_is_rejected() {
    let out = speclimit(&["bound", "--mu", "0", "--mu2", "1", "-p", "60"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mu = 0"));
}

#[test]
fn renewal_check_refuses_arithmetic_family() {
    let out = speclimit(&["check", "--suite", "renewal", "--family", UNIFORM2, "--trials", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("arithmetic"));
}

#[test]
fn uniform_binary_tree_accepts_three_at_p7() {
    let out = speclimit(&["simulate", "--family", UNIFORM2, "-p", "7", "--tokens", "3000"]);
    let v = json(&out);
    assert!((v["run"]["mean_x"].as_f64().unwrap() - 3.0).abs() < 1e-12, "{v}");
    assert_eq!(v["run"]["stderr_x"].as_f64().unwrap(), 0.0);
}

#[test]
fn sweep_row_at_p1_is_one() {
    let fam = r#"{"kind":"dirichlet","params":{"alpha":1.0,"vocab":8},"seed":1}"#;
    let out = speclimit(&["sweep", "--family", fam, "--p-grid", "1,4", "--tokens", "500"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("P,mode,mean_x,stderr_x,exact_upper,limit_upper,ce_lower,valid"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    assert_eq!(row[2].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn estimate_of_fair_coin_trace_is_ln2() {
    let dir = tempfile::tempdir().unwrap();
    let rec = r#"{"p":[0.5,0.5]}"#;
    let trace = write(dir.path(), "coin.jsonl", &format!("{rec}\n{rec}\n{rec}\n"));
    let v = json(&speclimit(&["estimate", &trace]));
    assert!((v["mu"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn bound_matches_reference_row() {
    let v = json(&speclimit(&["bound", "--mu", "0.279", "--mu2", "0.777", "-p", "60"]));
    let s = v.to_string();
    assert!(s.contains("31.7236"), "{s}");
}

#[test]
fn gen_trace_then_estimate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl").to_string_lossy().into_owned();
    let fam = r#"{"kind":"fixed","params":{"probs":[0.7,0.3]}}"#;
    let out = speclimit(&["gen-trace", "--family", fam, "--records", "50", "--out", &trace]);
    assert!(out.status.success());
    let v = json(&speclimit(&["estimate", &trace]));
    let h = -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln());
    assert!((v["mu"].as_f64().unwrap() - h).abs() < 1e-9);
    assert_eq!(v["n_records"], 50);
}
