use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scbf(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scbf"))
        .args(["--out", out.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

fn small(sub: &str) -> Vec<&str> {
    vec![
        sub,
        "--set",
        "basis.n=2",
        "--set",
        "scheme.dt=0.01",
        "--set",
        "monte_carlo.n_paths=4",
        "--set",
        "output.svg=false",
    ]
}

fn run_dir(o: &Output) -> PathBuf {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8_lossy(&o.stdout).trim())
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model\nmu = 1").unwrap();
    let o = scbf(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("\"exit_code\"") || err.contains("error"), "{err}");

    std::fs::write(&cfg, "[model]\nmu = 1.0\nviscosity = 2.0\n").unwrap();
    let o = scbf(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = scbf(dir.path(), &["simulate", "--set", "model.mu=-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fast_dissipation_violation_is_gated() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = small("frozen");
    args.extend(["--set", "model.coupling.l_g=5.0"]);
    let o = scbf(dir.path(), &args);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let mut args = small("average");
    args.extend(["--set", "model.eps=0.1", "--set", "model.delta=0.09"]);
    assert_eq!(scbf(dir.path(), &args).status.code(), Some(2));
}

#[test]
fn verify_passes_on_a_small_basis() {
    let dir = tempfile::tempdir().unwrap();
    let o = scbf(
        dir.path(),
        &["verify", "--set", "verify.n=3", "--set", "verify.pairs=10", "--set", "output.svg=false"],
    );
    let run = run_dir(&o);
    assert_eq!(o.status.code(), Some(0));
    for f in ["verify.json", "verify.csv", "manifest.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = small("simulate");
    let a = run_dir(&scbf(&dir.path().join("a"), &args));
    let b = run_dir(&scbf(&dir.path().join("b"), &args));
    assert_eq!(a.file_name(), b.file_name());
    let name = a.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("simulate-") && name.len() == "simulate-".len() + 16);
    for f in ["trajectory.csv", "endpoints.csv", "final_state.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["config_hash"].as_str().unwrap(), &name["simulate-".len()..]);

    let other = run_dir(&scbf(&dir.path().join("a"), &[&args[..], &["--seed", "7"]].concat()));
    assert_ne!(other.file_name(), a.file_name());
}

#[test]
fn skeleton_and_rate_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sk = run_dir(&scbf(dir.path(), &small("skeleton")));
    let text = std::fs::read_to_string(sk.join("skeleton.csv")).unwrap();
    assert!(text.lines().count() > 10);

    let mut args = small("rate");
    args.extend(["--set", "rate.n_knots=4", "--set", "rate.stages=2", "--set", "rate.max_iter=20"]);
    let rate = run_dir(&scbf(dir.path(), &args));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(rate.join("rate.json")).unwrap()).unwrap();
    assert!(r["control_energy"].as_f64().unwrap() >= 0.0);
    assert!(r["I"].is_null() || r["I"].as_f64().unwrap() >= 0.0);
    assert!(rate.join("control.csv").is_file());
}
