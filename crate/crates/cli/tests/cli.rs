use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn osl() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_osl"));
    cmd.env_remove("OSL_DEFAULT_SEED");
    cmd
}

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../specs")
        .join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn onestep_diagonal_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(osl()
        .args([
            "onestep", "--steps", "2000", "--trials", "100", "--seed", "4", "--out",
        ])
        .arg(dir.path())
        .arg("--spec")
        .arg(spec("diag.json")));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("onestep.json")).unwrap())
            .unwrap();
    let l1 = report["lambda_hat"][0].as_f64().unwrap();
    let l2 = report["lambda_hat"][1].as_f64().unwrap();
    assert!((l1 - 2f64.ln()).abs() < 1e-12 && (l2 + 2f64.ln()).abs() < 1e-12);
    assert_eq!(report["config"]["seed"], "4");
    assert!(dir.path().join("onestep_tail.csv").exists());
    assert!(dir.path().join("onestep_samples.csv").exists());
}

#[test]
fn onestep_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    for (name, verdict) in [
        ("counterexample.json", "growing"),
        ("rotgain.json", "converging"),
    ] {
        let o = run(osl()
            .args([
                "onestep", "--steps", "20000", "--trials", "20000", "--seed", "1", "--out",
            ])
            .arg(dir.path())
            .arg("--spec")
            .arg(spec(name)));
        assert!(o.status.success());
        assert!(
            stdout(&o).contains(&format!("verdict: {verdict}")),
            "{name}: {}",
            stdout(&o)
        );
    }
}

#[test]
fn reports_are_byte_identical_and_seed_env_is_honoured() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(osl()
        .args([
            "onestep", "--steps", "1000", "--trials", "500", "--seed", "77", "--out",
        ])
        .arg(a.path())
        .arg("--spec")
        .arg(spec("counterexample.json")));
    run(osl()
        .env("OSL_DEFAULT_SEED", "77")
        .args([
            "--jobs", "2", "onestep", "--steps", "1000", "--trials", "500", "--out",
        ])
        .arg(b.path())
        .arg("--spec")
        .arg(spec("counterexample.json")));
    let ja = std::fs::read(a.path().join("onestep.json")).unwrap();
    let jb = std::fs::read(b.path().join("onestep.json")).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn flexible_atom_and_lowcost() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(osl()
        .args([
            "flexible", "--mode", "bounded", "--budget", "0.3", "--steps", "5000", "--out",
        ])
        .arg(dir.path())
        .arg("--spec")
        .arg(spec("eta_atom.json")));
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("cell TV: 0 "));
    let steps = std::fs::read_to_string(dir.path().join("flexible_steps.csv")).unwrap();
    assert_eq!(steps.lines().next(), Some("index,cost,label,theta"));

    let o = run(osl()
        .args([
            "flexible",
            "--mode",
            "lowcost",
            "--epsilon",
            "0.1",
            "--steps",
            "50000",
            "--r1",
            "0.5",
            "--r2",
            "-0.5",
            "--out",
        ])
        .arg(dir.path())
        .arg("--spec")
        .arg(spec("eta_four_cells.json")));
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("ok mean step cost below epsilon"));
}

#[test]
fn infeasible_budget_exits_2_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(osl()
        .args([
            "flexible", "--mode", "bounded", "--budget", "0.1", "--steps", "100", "--out",
        ])
        .arg(dir.path())
        .arg("--spec")
        .arg(spec("eta_four_cells.json")));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[0, 1, 2]") && err.contains("[3]"), "{err}");
}

#[test]
fn usage_errors_exit_64() {
    let o = run(osl().args(["onestep", "--steps", "0"]));
    assert_eq!(o.status.code(), Some(64));
    let o = run(osl().args([
        "flexible", "--mode", "bounded", "--spec", "x.json", "--out", "/tmp/x",
    ]));
    assert_eq!(o.status.code(), Some(64));
    let bad = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(bad.path(), "{\"kind\": \"atoms\"").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let o = run(osl()
        .args(["onestep", "--out"])
        .arg(dir.path())
        .arg("--spec")
        .arg(bad.path()));
    assert_eq!(o.status.code(), Some(64));
    assert!(!o.stderr.is_empty());
}

#[test]
fn verify_fast_passes_and_fault_is_named() {
    let o = run(osl().args(["verify", "fast"]));
    assert!(o.status.success(), "{}", stdout(&o));
    let o = run(osl().args(["verify", "fast", "--inject-fault", "svd2"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL svd2 reconstruction"));
}

#[test]
fn tail_spec_runs_in_lowcost_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(osl()
        .args([
            "flexible",
            "--mode",
            "lowcost",
            "--epsilon",
            "0.5",
            "--steps",
            "20000",
            "--out",
        ])
        .arg(dir.path())
        .arg("--spec")
        .arg(spec("eta_tail.json")));
    assert!(
        o.status.success(),
        "{}{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
}
