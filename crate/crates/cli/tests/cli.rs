use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn bsdej(args: &[&str], envs: &[(&str, &Path)]) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bsdej"));
    cmd.args(args).env_remove("BSDEJ_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn run(name: &str, out: &Path) -> (i32, String, String) {
    bsdej(&["--config", config(name).to_str().unwrap(), "--out", out.to_str().unwrap()], &[])
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn body(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text[text.find("\"body\":").unwrap()..].to_string()
}

#[test]
fn constant_terminal_solves_to_its_value() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run("constant.json", dir.path());
    assert_eq!(code, 0, "{stdout}");
    let r = report(&dir.path().join("solve-report.json"));
    assert_eq!(r["body"]["results"]["y0"], 2.0);
    assert_eq!(r["body"]["status"], "converged");
}

#[test]
fn long_horizon_without_subdivision_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run("long-horizon-divergent.json", dir.path());
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("not contracting"));
    let r = report(&dir.path().join("solve-report.json"));
    let ratios = r["body"]["results"]["divergence"]["ratios"].as_array().unwrap();
    assert!(ratios.len() >= 3 && ratios.iter().all(|x| x.as_f64().unwrap() >= 1.0));
    let csv = std::fs::read_to_string(dir.path().join("picard-trace.csv")).unwrap();
    assert!(csv.starts_with("interval,start,end,iteration"));
}

#[test]
fn subdivision_makes_the_long_horizon_converge() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run("long-horizon-subdivided.json", dir.path());
    assert_eq!(code, 0, "{stdout}");
    let r = report(&dir.path().join("solve-report.json"));
    let res = &r["body"]["results"];
    assert!(res["plan"]["breakpoints"].as_array().unwrap().len() > 2);
    assert!(res["traces"].as_array().unwrap().iter().all(|t| t["converged"] == true));
    assert!(res["pilot"]["ratios"][0].as_f64().unwrap() >= 1.0);
}

#[test]
fn negative_horizon_is_an_input_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run("negative-horizon.json", dir.path());
    assert_eq!(code, 1);
    assert!(stderr.contains("problem.horizon") && stderr.contains("line 5"), "{stderr}");
}

#[test]
fn missing_config_is_an_input_error() {
    let (code, _, stderr) = bsdej(&["--config", "/nonexistent/config.json"], &[]);
    assert_eq!(code, 1);
    assert!(stderr.contains("nonexistent"));
}

#[test]
fn unknown_flag_is_rejected() {
    let (code, _, _) = bsdej(&["--config", "x.json", "--threads", "4"], &[]);
    assert_ne!(code, 0);
}

#[test]
fn trivial_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run("verify-trivial.json", dir.path());
    assert_eq!(code, 0, "{stdout}");
    let r = report(&dir.path().join("verify-report.json"));
    let res = &r["body"]["results"];
    assert_eq!(res["full"]["implied_constant"], 1.0);
    assert_eq!(res["zv"]["implied_constant"], 0.0);
    assert_eq!(res["uniqueness"]["max_distance"], 0.0);
    let log = std::fs::read_to_string(dir.path().join("estimates.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn tampered_ceiling_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run("verify-tampered.json", dir.path());
    assert_eq!(code, 3);
    let r = report(&dir.path().join("verify-report.json"));
    assert_eq!(r["body"]["results"]["full"]["pass"], false);
}

#[test]
fn regression_verification_with_two_bases() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run("verify-coupled-mc.json", dir.path());
    assert_eq!(code, 0, "{stdout}");
    let r = report(&dir.path().join("verify-report.json"));
    let runs = r["body"]["results"]["uniqueness"]["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
}

#[test]
fn suite_writes_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run("suite.json", dir.path());
    assert_eq!(code, 0, "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("suite.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("index,generator,horizon,p,"));
}

#[test]
fn bounded_ladder_rows_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run("ladder-bounded.json", dir.path());
    assert_eq!(code, 0);
    let r = report(&dir.path().join("ladder-report.json"));
    let levels = r["body"]["results"]["report"]["levels"].as_array().unwrap();
    assert!(levels.iter().all(|l| l["y0"] == levels[0]["y0"]));
    let pairs = r["body"]["results"]["report"]["pairs"].as_array().unwrap();
    assert!(pairs.iter().all(|p| p["distance"] == 0.0));
}

#[test]
fn non_increasing_ladder_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("ladder-bounded.json")).unwrap().replace("[1.0, 2.0, 4.0]", "[1.0, 4.0, 2.0]");
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let (code, _, stderr) = bsdej(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code, 1);
    assert!(stderr.contains("ladder.levels"), "{stderr}");
}

#[test]
fn report_reruns_reproduce_the_body() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run("verify-coupled-mc.json", a.path()).0, 0);
    let first = a.path().join("verify-report.json");
    let (code, _, _) =
        bsdej(&["--config", first.to_str().unwrap(), "--out", b.path().to_str().unwrap()], &[]);
    assert_eq!(code, 0);
    assert_eq!(body(&first), body(&b.path().join("verify-report.json")));
}

#[test]
fn seed_override_is_embedded() {
    let a = tempfile::tempdir().unwrap();
    let cfg = config("verify-coupled-mc.json");
    let (code, _, _) = bsdej(&["--config", cfg.to_str().unwrap(), "--seed", "11", "--out", a.path().to_str().unwrap()], &[]);
    assert_eq!(code, 0);
    let r = report(&a.path().join("verify-report.json"));
    assert_eq!(r["body"]["config"]["seed"], 11);
    assert!(r["body"]["config"].get("output_dir").is_none());
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("constant.json");
    let (code, _, _) = bsdej(&["--config", cfg.to_str().unwrap()], &[("BSDEJ_OUT_DIR", dir.path())]);
    assert_eq!(code, 0);
    assert!(dir.path().join("solve-report.json").exists());
}
