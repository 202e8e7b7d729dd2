//! Process-level checks of the installed binary: exit codes, artifact
//! layout, and override plumbing, driven through the bundled configs.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mirrorflow"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn equivalence_run_passes_and_writes_envelope() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["equivalence", "--config"])
        .arg(config("equivalence-uv.toml"))
        .arg("--out")
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let envelope = out.path().join("equivalence-uv-equivalence.json");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&envelope).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["pass"], true);
    assert_eq!(v["subcommand"], "equivalence");
    let hash = v["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 16);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(v["report"]["report"]["max_grad_vs_mirror"].as_f64().unwrap() < 1e-6);
    // Trajectory CSVs for all three flows land next to the envelope.
    for tag in ["gradient", "mirror", "riemannian"] {
        let p = out
            .path()
            .join(format!("equivalence-uv-equivalence-{tag}.csv"));
        let head = std::fs::read_to_string(&p).unwrap();
        assert!(head.starts_with("# schema_version=1 config_hash="), "{p:?}");
    }
}

#[test]
fn non_commuting_verdict_is_data_not_failure() {
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["check-commuting", "--config"])
        .arg(config("check-commuting-uut.toml"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let envelope = out.path().join("check-commuting-uut-check-commuting.json");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(envelope).unwrap()).unwrap();
    assert_eq!(v["report"]["bracket"]["commuting"], false);
}

#[test]
fn failed_quantitative_check_exits_two() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["equivalence", "--config"])
        .arg(config("equivalence-uv.toml"))
        .arg("--out")
        .arg(out.path())
        .args(["--set", "scenario.tolerance=1e-16"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_config_exits_one() {
    let status = bin()
        .args(["simulate", "--config", "/nonexistent/nope.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let output = bin().arg("--help").output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("equivalence"));
}
