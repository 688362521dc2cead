use std::path::Path;
use std::process::{Command, Output};

fn modrx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modrx"))
        .args(args)
        .output()
        .expect("spawn modrx")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn presets_are_listed_and_printable() {
    let out = modrx(&["presets"]);
    assert!(out.status.success());
    let names = String::from_utf8(out.stdout).unwrap();
    for n in [
        "rotation",
        "mimo-linear",
        "mimo-nonlinear",
        "mimo-sparse-pilots",
    ] {
        assert!(names.lines().any(|l| l == n), "{n} missing from {names}");
    }
    let out = modrx(&["presets", "rotation"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("schema = 1"));
}

#[test]
fn invalid_config_reports_every_issue_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(modrx(&["presets", "mimo-linear"]).stdout)
        .unwrap()
        .replace("trials = 10", "trials = 0")
        .replace("users = 3", "users = 0");
    let path = write(dir.path(), "bad.toml", &text);
    let out = modrx(&[
        "run",
        "--config",
        &path,
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v = stderr_json(&out);
    assert_eq!(v["status"], "error");
    assert_eq!(v["kind"], "validation");
    assert!(v["messages"].as_array().unwrap().len() >= 2, "{v}");
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "bad.toml",
        "schema = 1\nname = \"x\"\nbogus = 3\n",
    );
    let out = modrx(&["run", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["status"], "error");
}

#[test]
fn missing_config_file_fails_with_nonzero_exit() {
    let out = modrx(&["run", "--config", "/nonexistent/modrx.toml"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["status"], "error");
}

#[test]
fn run_writes_every_csv_family() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(modrx(&["presets", "mimo-linear"]).stdout)
        .unwrap()
        .replace("n_blocks = 96", "n_blocks = 2")
        .replace("t_sync = 256", "t_sync = 16")
        .replace("snr_db = [4.0, 8.0, 12.0, 16.0]", "snr_db = [8.0]");
    let cfg = write(dir.path(), "small.toml", &text);
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_modrx"))
        .args(["run", "--config", &cfg, "--trials", "1", "--out-dir"])
        .arg(&out_dir)
        .env("MODRX_WORKERS", "1")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "ber_vs_snr.csv",
        "ber_vs_time.csv",
        "latency.csv",
        "ser_rotation.csv",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let snr = std::fs::read_to_string(out_dir.join("ber_vs_snr.csv")).unwrap();
    assert!(snr.starts_with("updater,snr_db,ber_mean,ber_std\n"));
    assert!(snr.contains("\ncm-ekf,8.0,"), "{snr}");
    assert!(snr.contains("\nmmse,8.0,"), "{snr}");
}

#[test]
fn selftest_passes() {
    let out = modrx(&["selftest"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("[PASS]")).count(),
        5,
        "{text}"
    );
}
