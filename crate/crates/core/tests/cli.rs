use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_phasekit");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("PHASEKIT_THREADS")
        .output()
        .expect("spawn phasekit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const HOPF_PAIR: &str = r#"{
  "model": {"builtin": "hopf", "params": {"mu": 1, "omega": 1, "sigma": 0.1}},
  "N": 2, "graph": "complete", "epsilon": 0.05,
  "coupling_drift": ["xj1 - xi1", "xj2 - xi2"],
  "x0": [[1, 0], [0, 1]]
}"#;

#[test]
fn hopf_cycle_period() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cycle", "--model", "hopf", "--params", "mu=1,omega=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = json(&dir.path().join("cycle.json"));
    let t = c["T"].as_f64().unwrap();
    assert!((t - std::f64::consts::TAU).abs() <= 1e-8, "T = {t}");
    assert_eq!(c["G"].as_u64(), Some(1024));
    assert_eq!(c["gamma"].as_array().unwrap().len(), 1024);
}

#[test]
fn unknown_flag_lists_valid_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cycle", "--model", "hopf", "--gird", "64"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("--gird"), "{err}");
    for flag in ["--model", "--params", "--grid", "--out", "--threads"] {
        assert!(err.contains(flag), "missing {flag} in: {err}");
    }
}

#[test]
fn user_errors_exit_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["cycle", "--model", "hopf", "--params", "mu=1,omega"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("params"), "{}", stderr(&o));
    let o = run_in(dir.path(), &["cycle", "--model", "hopf", "--params", "mu=1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("omega"), "{}", stderr(&o));
    let o = run_in(dir.path(), &["prc", "--model", "hopf", "--params", "mu=1,omega=1", "--cycle", "missing.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("decay.json"), r#"{"dim": 2, "drift": ["-x1", "-2*x2"]}"#).unwrap();
    let o = run_in(dir.path(), &["cycle", "--model", "decay.json"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!dir.path().join("cycle.json").exists());
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["simulate", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--common-noise", "--trials", "--record-every", "--functionals"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn disconnected_certify_exits_zero_with_verdict() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("pm.json"),
        r#"{"N": 4, "weights": [[0,1,0,0],[1,0,0,0],[0,0,0,1],[0,0,1,0]],
            "epsilon": 0.5, "drift": {"const": 1.0}, "coupling": {"expr": "sin(phi)"}}"#,
    )
    .unwrap();
    let o = run_in(dir.path(), &["certify", "--phase-model", "pm.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = json(&dir.path().join("cert.json"));
    assert_eq!(c["verdict"].as_str(), Some("λ₂ = 0: not certifiable"));
    assert!(c["spectra"]["lambda2"].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn certify_rejects_foreign_network() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("pm.json"),
        r#"{"N": 2, "weights": [[0,1],[1,0]], "epsilon": 0.1, "fingerprint": "0000000000000000",
            "drift": {"const": 1.0}, "coupling": {"expr": "sin(phi)"}}"#,
    )
    .unwrap();
    std::fs::write(d.join("net.json"), HOPF_PAIR).unwrap();
    let o = run_in(d, &["certify", "--phase-model", "pm.json", "--network", "net.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
}

#[test]
fn single_path_csv_has_node_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "simulate", "--network", "leader_follower", "--params", "r=5,epsilon=1.3,delta=0.1,sigma=1",
            "--t", "1", "--h", "1e-2", "--x0", "0.1,0.5,-0.4", "--common-noise", "--out", "path.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,x3"));
    assert_eq!(lines.next(), Some("0.0,0.1,0.5,-0.4"));
    assert_eq!(text.lines().count(), 102);
}

/// Every stage of the pipeline, returning the bytes of each output file.
fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("net.json"), HOPF_PAIR).unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["cycle", "--model", "hopf", "--params", "mu=1,omega=1,sigma=0.1", "--grid", "256"],
        vec!["prc", "--model", "hopf", "--params", "mu=1,omega=1,sigma=0.1", "--cycle", "cycle.json"],
        vec!["reduce", "--network", "net.json", "--cycle", "cycle.json", "--prc", "prc.csv"],
        vec!["certify", "--phase-model", "phase_model.json", "--network", "net.json"],
        vec![
            "simulate", "--network", "net.json", "--cycle", "cycle.json", "--t", "20", "--trials", "24",
            "--seed", "11", "--common-noise", "--out", "ens.csv",
        ],
        vec![
            "simulate", "--phase-model", "phase_model.json", "--t", "20", "--trials", "24", "--seed", "11",
            "--out", "phase_ens.csv",
        ],
        vec!["verify", "--ensemble", "ens.csv", "--cert", "cert.json"],
        vec!["compare-ito", "--prc", "prc.csv"],
    ];
    for s in &steps {
        let mut args = s.clone();
        args.extend(["--threads", threads]);
        let o = run_in(dir, &args);
        assert_eq!(code(&o), 0, "{s:?}: {}", stderr(&o));
    }
    let mut out = vec![];
    for name in [
        "cycle.json",
        "prc.csv",
        "phase_model.json",
        "cert.json",
        "ens.csv",
        "phase_ens.csv",
        "report.json",
        "compare.csv",
    ] {
        out.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    out
}

#[test]
fn pipeline_is_deterministic_across_thread_counts() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = pipeline(a.path(), "1");
    let eight = pipeline(b.path(), "8");
    let again = pipeline(c.path(), "1");
    for ((name, x), ((_, y), (_, z))) in one.iter().zip(eight.iter().zip(&again)) {
        assert!(x == y, "{name} differs between 1 and 8 threads");
        assert!(x == z, "{name} differs between repeated runs");
    }
    let cert = json(&a.path().join("cert.json"));
    let fp = cert["fingerprint"].as_str().unwrap();
    let ens = std::fs::read_to_string(a.path().join("ens.csv")).unwrap();
    assert!(ens.starts_with(&format!("# fingerprint={fp}\n")));
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["cycle", "--model", "hopf", "--params", "mu=1,omega=1", "--grid", "64"])
        .current_dir(dir.path())
        .env("PHASEKIT_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("threads"), "{}", stderr(&o));
    let o = Command::new(BIN)
        .args(["cycle", "--model", "hopf", "--params", "mu=1,omega=1", "--grid", "64"])
        .current_dir(dir.path())
        .env("PHASEKIT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
