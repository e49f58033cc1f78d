//! End-to-end runs of the `thinhom` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn thinhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thinhom")).args(args).env_remove("THINHOM_THREADS").output().unwrap()
}

fn run_with(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}.toml"));
    std::fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    thinhom(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json_hash(path: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let ok = thinhom(&["check", "--config", configs().join("check_norm.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let hash = json_hash(&out.join("check.json"));
    assert_eq!(hash.len(), 64);
    let (_, rows) = read_csv(&out.join("check.csv"));
    assert!(rows.iter().all(|r| r[2] == hash));

    let bad = dir.path().join("bad");
    let quad = thinhom(&["check", "--config", configs().join("check_quadratic.toml").to_str().unwrap(), "--out", bad.to_str().unwrap()]);
    assert_eq!(quad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&quad.stderr).contains("GrowthViolation"));

    let malformed = run_with(dir.path(), "check", "[integrand\ntag = \"norm\"\n", &[]);
    assert_eq!(malformed.status.code(), Some(1));
    let unknown = run_with(dir.path(), "check", "[integrand]\ntag = \"cubic\"\n", &[]);
    assert_eq!(unknown.status.code(), Some(1));
    let missing = thinhom(&["check", "--config", "/nonexistent/run.toml"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_flag = thinhom(&["check", "--format", "xml"]);
    assert_eq!(bad_flag.status.code(), Some(1));
}

#[test]
fn one_entry_bulk_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        dir.path(),
        "bulk",
        "[cell]\nt_list = [1.0, 2.0]\nn_xy = 6\n[grids.bulk]\ns_points = [[0.0, 0.0, 1.0]]\nxi = { kind = \"list\", points = [[0.6, 0.0, 0.0, 0.8]] }\n",
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/bulk.csv"));
    assert_eq!(rows.len(), 1);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let bulk: f64 = rows[0][col("bulk")].parse().unwrap();
    assert!((bulk - 1.0).abs() < 5e-3);
    assert_eq!(rows[0][col("provenance")], json_hash(&dir.path().join("out/bulk.json")));
}

#[test]
fn equal_endpoints_give_a_zero_jump_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        dir.path(),
        "jump",
        "[[grids.jump.pairs]]\na = [0.0, 1.0, 0.0]\nb = [0.0, 1.0, 0.0]\nnu = [1.0, 0.0]\n",
        &["--format", "csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/jump.csv"));
    assert_eq!(rows.len(), 1);
    let theta = header.iter().position(|h| h == "theta").unwrap();
    assert_eq!(rows[0][theta].parse::<f64>().unwrap(), 0.0);
    assert!(!dir.path().join("out/jump.json").exists());
}

#[test]
fn constant_gamma_run_is_all_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "gamma", "[gamma]\nscenario = \"constant\"\nh_list = [1.0, 0.5]\nn_xy = 5\nn3 = 4\n", &["--threads", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/gamma.csv"));
    assert_eq!(rows.len(), 2);
    for name in ["energy", "limit_value", "gap", "recovery_energy"] {
        let c = header.iter().position(|h| h == name).unwrap();
        assert!(rows.iter().all(|r| r[c].parse::<f64>().unwrap() == 0.0), "{name}");
    }
}

#[test]
fn seed_override_changes_the_fingerprint_and_info_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("check_norm.toml");
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(thinhom(&["check", "--config", cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(thinhom(&["check", "--config", cfg, "--out", b.to_str().unwrap(), "--seed", "99"]).status.code(), Some(0));
    assert_ne!(json_hash(&a.join("check.json")), json_hash(&b.join("check.json")));

    let info = Command::new(env!("CARGO_BIN_EXE_thinhom")).args(["info", "--config", cfg]).env("THINHOM_THREADS", "3").output().unwrap();
    assert_eq!(info.status.code(), Some(0));
    let text = String::from_utf8_lossy(&info.stdout);
    assert!(text.contains("threads: 3"));
    assert!(text.contains(&json_hash(&a.join("check.json"))));
}
