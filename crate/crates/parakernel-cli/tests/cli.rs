use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_parakernel"));
    cmd.env_remove("PARAKERNEL_OUT");
    cmd
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const LOCAL: &str = r#"
id = "tiny"
kind = "local-regularity"
seed = 3

[coefficients]
family = "identity"
dim = 2

[params.cylinder]
center = [0.0, 0.0]
t0 = 1.0
radius = 0.5
half = true
"#;

#[test]
fn run_writes_csv_and_json() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, LOCAL).unwrap();
    let out = bin().arg("--out").arg(dir.path().join("o")).arg("run").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let csv = fs::read_to_string(dir.path().join("o/tiny.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "experiment,series,quantity,rule,levels,values,max_growth,passes");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("o/tiny.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], "parakernel.report/1");
    assert_eq!(json["seed"], 3);
    assert_eq!(json["outcome"], "pass");
    assert_eq!(json["config"]["params"]["cylinder"]["radius"], 0.5);
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, LOCAL).unwrap();
    let out = bin().env("PARAKERNEL_OUT", dir.path().join("env")).arg("run").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("env/tiny.csv").exists());
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("noseed.toml");
    fs::write(&cfg, LOCAL.replace("seed = 3\n", "")).unwrap();
    let out = bin().arg("--out").arg(dir.path()).arg("run").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
}

#[test]
fn unknown_param_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, LOCAL.replace("radius = 0.5", "radius = 0.5\nradios = 1.0")).unwrap();
    let out = bin().arg("--out").arg(dir.path()).arg("run").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("radios"), "{}", stderr(&out));
}

#[test]
fn expected_failure_exits_cleanly() {
    let dir = TempDir::new().unwrap();
    let out = bin().arg("--out").arg(dir.path()).arg("run").arg(shipped("kernel-identity-sigma-too-large.toml")).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("expected-fail matched"));
}

#[test]
fn empty_manifest_passes() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("none.json");
    fs::write(&manifest, r#"{"name": "none", "experiments": []}"#).unwrap();
    let out = bin().arg("--out").arg(dir.path()).arg("suite").arg(&manifest).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("none.suite.json")).unwrap()).unwrap();
    assert_eq!(summary["ok"], true);
    assert_eq!(summary["experiments"].as_array().unwrap().len(), 0);
}

#[test]
fn duplicate_ids_reject_the_suite() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("a.toml"), LOCAL).unwrap();
    fs::write(dir.path().join("b.toml"), LOCAL).unwrap();
    let manifest = dir.path().join("dup.json");
    fs::write(&manifest, r#"{"name": "dup", "experiments": ["a.toml", "b.toml"]}"#).unwrap();
    let out = bin().arg("--out").arg(dir.path().join("o")).arg("suite").arg(&manifest).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("duplicate"), "{}", stderr(&out));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn dump_grid_writes_every_level() {
    let dir = TempDir::new().unwrap();
    let out = bin().arg("--threads").arg("1").arg("--out").arg(dir.path()).arg("dump-grid").arg(shipped("box-demo-2d.toml")).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for level in 0..3 {
        let head: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(format!("box-demo-2d.u.level{level}.json"))).unwrap()).unwrap();
        assert_eq!(head["level"], level);
        let bytes = fs::metadata(dir.path().join(format!("box-demo-2d.u.level{level}.bin"))).unwrap().len();
        assert!(bytes > 0 && bytes % 8 == 0);
    }
}

#[test]
fn dump_grid_refuses_other_kinds() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, LOCAL).unwrap();
    let out = bin().arg("--out").arg(dir.path()).arg("dump-grid").arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dump-grid"), "{}", stderr(&out));
}
