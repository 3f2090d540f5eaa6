//! End-to-end runs of the `poswitch` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn poswitch(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poswitch")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const TRIANGLE: &str = r#"
states = ["a", "b"]
policies = ["1", "2", "3"]
Q = [[-1.0, 1.0], [1.0, -1.0]]
lambda = [1.0, 2.0]
c = [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]]
K = [[0.0, 1.0, 0.1], [1.0, 0.0, 0.1], [0.1, 0.1, 0.0]]
rho = 0.0
"#;

const SINGLE_STATE: &str = r#"
states = ["s"]
policies = ["lo", "hi"]
Q = [[0.0]]
lambda = [2.0]
marks = [1.0, 3.0]
nu = [[0.5, 0.5]]
c = [[1.0, 1.5]]
c1 = [[0.2, 0.1], [0.0, 0.3]]
K = 0.2
rho = 0.5
"#;

#[test]
fn triangle_violation_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.cfg"), TRIANGLE).unwrap();
    let o = poswitch(&["solve", "bad.cfg", "--horizon", "1", "--out", "out"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("triangle"));
    let o = poswitch(&["check", "bad.cfg"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_model_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = poswitch(&["solve", "nothing-here", "--horizon", "1", "--out", "out"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn solve_writes_tables_plots_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = poswitch(&["solve", "onoff", "--horizon", "1", "--grid", "50", "--dt", "0.01", "--out", "s"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("s");
    for f in ["values.csv", "strategy.csv", "boundaries.csv", "regions.svg", "value.svg", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let values = fs::read_to_string(dir.join("values.csv")).unwrap();
    assert!(values.starts_with("tau,node,pi1,pi2,policy,value\n"));
    assert_eq!(values.lines().count(), 1 + 101 * 51 * 2);
    let bounds = fs::read_to_string(dir.join("boundaries.csv")).unwrap();
    assert!(bounds.starts_with("tau,from,to,lower_pi1,upper_pi1\n"));
    assert!(fs::read_to_string(dir.join("regions.svg")).unwrap().starts_with("<svg"));

    // plots are optional and do not touch the tables
    let o = poswitch(
        &["solve", "onoff", "--horizon", "1", "--grid", "50", "--dt", "0.01", "--no-plots", "--out", "np"],
        tmp.path(),
    );
    assert!(o.status.success());
    let np = tmp.path().join("np");
    assert!(!np.join("regions.svg").exists());
    assert_eq!(fs::read(np.join("values.csv")).unwrap(), values.as_bytes());
}

#[test]
fn three_state_solve_draws_per_policy_panels() {
    let tmp = tempfile::tempdir().unwrap();
    let o = poswitch(&["solve", "fed", "--horizon", "1", "--grid", "10", "--dt", "0.05", "--out", "f"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("f");
    assert!(!dir.join("boundaries.csv").exists());
    let svg = fs::read_to_string(dir.join("regions.svg")).unwrap();
    assert_eq!(svg.matches("current policy").count(), 3);
}

#[test]
fn infinite_horizon_needs_discounting() {
    let tmp = tempfile::tempdir().unwrap();
    let o = poswitch(&["solve", "onoff", "--infinite", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn simulate_is_deterministic_and_checks_the_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let solve = ["solve", "onoff", "--horizon", "1", "--grid", "50", "--dt", "0.01", "--no-plots", "--out", "s"];
    assert!(poswitch(&solve, p).status.success());
    for out in ["a", "b"] {
        let o = poswitch(&["simulate", "onoff", "--solution", "s", "--paths", "1", "--seed", "7", "--out", out], p);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("solved value U"));
    }
    let a = fs::read(p.join("a/paths.txt")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(p.join("b/paths.txt")).unwrap());
    let est = fs::read_to_string(p.join("a/mc_estimate.csv")).unwrap();
    assert!(est.starts_with("strategy,mean,std_error,count,seed,value\n"));

    // a solution for another model is rejected
    let o = poswitch(&["simulate", "fed", "--solution", "s", "--out", "c"], p);
    assert_eq!(code(&o), 4);
    // so is a missing one
    let o = poswitch(&["simulate", "onoff", "--solution", "nowhere", "--out", "c"], p);
    assert_eq!(code(&o), 4);
    let o = poswitch(&["simulate", "onoff", "--out", "c"], p);
    assert_eq!(code(&o), 4);
}

#[test]
fn tampered_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let solve = ["solve", "onoff", "--horizon", "1", "--grid", "20", "--dt", "0.05", "--no-plots", "--out", "s"];
    assert!(poswitch(&solve, p).status.success());
    let f = p.join("s/values.csv");
    let mut text = fs::read_to_string(&f).unwrap();
    text.push('\n');
    fs::write(&f, text).unwrap();
    let o = poswitch(&["simulate", "onoff", "--solution", "s", "--paths", "10", "--out", "x"], p);
    assert_eq!(code(&o), 4);
}

#[test]
fn never_switching_matches_the_no_action_value() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    // with prohibitive switching costs U equals the no-action value
    let cfg = bundled_onoff_with_k(100.0);
    fs::write(p.join("k.cfg"), cfg).unwrap();
    let solve = ["solve", "k.cfg", "--horizon", "1", "--grid", "50", "--no-plots", "--out", "s"];
    assert!(poswitch(&solve, p).status.success());
    let o = poswitch(
        &[
            "simulate",
            "k.cfg",
            "--strategy",
            "none",
            "--solution",
            "s",
            "--pi0",
            "0.3,0.7",
            "--paths",
            "20000",
            "--out",
            "m",
        ],
        p,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = fs::read_to_string(p.join("m/mc_estimate.csv")).unwrap();
    let row: Vec<f64> = est.lines().nth(1).unwrap().split(',').skip(1).map(|s| s.parse().unwrap()).collect();
    let (mean, se, value) = (row[0], row[1], row[4]);
    assert!((mean - value).abs() <= 4.0 * se + 1e-3, "{mean} +- {se} vs {value}");
}

fn bundled_onoff_with_k(k: f64) -> String {
    poswitch::bundled::ONOFF_CFG.replace("K = 0.05", &format!("K = {k}"))
}

#[test]
fn replay_reports_switches() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let solve = ["solve", "onoff", "--horizon", "2", "--grid", "50", "--dt", "0.01", "--no-plots", "--out", "s"];
    assert!(poswitch(&solve, p).status.success());
    fs::write(p.join("arr.txt"), "ARRIVAL 0.3 0\nARRIVAL 0.32 0\nARRIVAL 0.34 0\nARRIVAL 0.36 0\nARRIVAL 1.2 0\n")
        .unwrap();
    let o = poswitch(
        &["simulate", "onoff", "--solution", "s", "--replay", "arr.txt", "--pi0", "0.5,0.5", "--a0", "1", "--out", "r"],
        p,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // a burst of arrivals signals the alarm state: the tracker moves to
    // policy 2, then drifts back once the arrivals stop
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("1 -> 2 (at arrival)"), "{stdout}");
    assert!(stdout.contains("2 -> 1 (between arrivals)"), "{stdout}");
    let text = fs::read_to_string(p.join("r/replay.txt")).unwrap();
    assert_eq!(text.matches("ARRIVAL").count(), 5);
    assert!(text.contains("SWITCH 0.36 0 1 arrival"), "{text}");
}

#[test]
fn check_passes_on_bundled_and_degenerate_models() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let o = poswitch(&["check", "onoff", "--paths", "2000", "--out", "c"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["semigroup", "normalization", "convexity", "lipschitz", "fixed-point", "bounds", "mc-filter"] {
        assert!(stdout.contains(&format!("PASS {name}")), "{name}: {stdout}");
    }
    assert!(p.join("c/check_report.csv").exists());

    fs::write(p.join("one.cfg"), SINGLE_STATE).unwrap();
    let o = poswitch(&["check", "one.cfg", "--paths", "2000"], p);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.contains("PASS degenerate-filter"));
    assert!(stdout.contains("PASS degenerate-value"));
}

#[test]
fn rerun_reproduces_and_detects_changes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let solve = ["solve", "onoff", "--horizon", "1", "--grid", "30", "--dt", "0.02", "--out", "s"];
    assert!(poswitch(&solve, p).status.success());
    let o = poswitch(&["rerun", "s/manifest.json", "--out", "again", "--verify"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // a manifest whose recorded hashes no longer match
    let man = fs::read_to_string(p.join("s/manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&man).unwrap();
    let h = v["outputs"]["values.csv"].as_str().unwrap().to_string();
    fs::write(p.join("s/manifest.json"), man.replace(&h, &"0".repeat(64))).unwrap();
    let o = poswitch(&["rerun", "s/manifest.json", "--out", "third", "--verify"], p);
    assert_eq!(code(&o), 4);
}
