use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddsw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddsw"))
        .args(args)
        .env_remove("DDSW_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SCALAR: &str = r#"
name = "tiny"
sampling_time = 1.0
window_length = 5
horizon = 12
seed = 3
initial_state = [1.0]

[[modes]]
a = [[2.0]]
b = [[1.0]]

[excitation]
delta = 0.001
open_loop_range = 1.0

[schedule]
kind = "explicit"
segments = [[0, 0]]
"#;

#[test]
fn list_builtin_names_and_source() {
    let o = ddsw(&["list-builtin"]);
    assert_eq!(code(&o), 0);
    let names = String::from_utf8(o.stdout).unwrap();
    for n in ["f18", "f404", "scalar", "deadbeat"] {
        assert!(names.lines().any(|l| l == n), "{names}");
    }
    let o = ddsw(&["list-builtin", "--show", "f18"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("window_length = 15"));
    assert_eq!(code(&ddsw(&["list-builtin", "--show", "nope"])), 9);
}

#[test]
fn simulate_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ddsw(&["simulate", "scalar", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("scalar.trace.csv")).unwrap();
    assert!(csv.starts_with("k,mode,x_0,u_0,eps_0,norm_x,norm_K,solver_status,pe_ok,rank_ok\n"));
    assert_eq!(csv.lines().count(), 41);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scalar.report.json")).unwrap()).unwrap();
    assert_eq!(report["ok"], true);
    assert_eq!(report["summary"]["steps"], 40);
    assert!(report["trace_path"].as_str().unwrap().ends_with("scalar.trace.csv"));
}

#[test]
fn simulate_json_format_and_parallel_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddsw(&["simulate", "scalar", "deadbeat", "scalar", "--format", "json", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for stem in ["scalar-0", "deadbeat", "scalar-2"] {
        let rows: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("{stem}.trace.json"))).unwrap()).unwrap();
        assert!(!rows.as_array().unwrap().is_empty());
        assert!(rows[0].get("norm_K").is_some());
    }
    assert_eq!(
        fs::read(out.join("scalar-0.trace.json")).unwrap(),
        fs::read(out.join("scalar-2.trace.json")).unwrap()
    );
}

#[test]
fn seed_flag_and_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let out = dir.path().join(format!("r{}", extra.len() + env.map_or(0, |_| 10)));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddsw"));
        cmd.args(["simulate", "scalar", "--output", out.to_str().unwrap()]).args(extra);
        cmd.env_remove("DDSW_SEED");
        if let Some(s) = env {
            cmd.env("DDSW_SEED", s);
        }
        assert_eq!(code(&cmd.output().unwrap()), 0);
        let rep: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("scalar.report.json")).unwrap()).unwrap();
        (rep["seed"].as_u64().unwrap(), fs::read(out.join("scalar.trace.csv")).unwrap())
    };
    let (s_default, t_default) = run(&[], None);
    let (s_flag, t_flag) = run(&["--seed", "77"], None);
    let (s_env, t_env) = run(&[], Some("77"));
    assert_eq!(s_default, 1);
    assert_eq!((s_flag, s_env), (77, 77));
    assert_eq!(t_flag, t_env);
    assert_ne!(t_flag, t_default);
}

#[test]
fn report_to_stdout_without_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "tiny.toml", SCALAR);
    let o = ddsw(&["simulate", &path]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = stdout_json(&o);
    assert_eq!(rep["scenario"], "tiny");
    assert_eq!(rep["steps"]["horizon"], 12);
}

#[test]
fn distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let schema = write(dir.path(), "schema.toml", &SCALAR.replace("horizon = 12", "horizon = 12\nbogus = 1"));
    let dims = write(dir.path(), "dims.toml", &SCALAR.replace("b = [[1.0]]", "b = [[1.0], [2.0]]"));
    let short = write(dir.path(), "short.toml", &SCALAR.replace("window_length = 5", "window_length = 4"));
    let unctrl = write(dir.path(), "unctrl.toml", &SCALAR.replace("b = [[1.0]]", "b = [[0.0]]"));
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["simulate", &schema], 3),
        (vec!["simulate", &dims], 4),
        (vec!["simulate", &short], 5),
        (vec!["simulate", &unctrl], 6),
        (vec!["bounds", "f18", "--override", "analysis.lambda=0.01"], 9),
        (vec!["simulate", "/nonexistent/file.toml"], 11),
    ];
    for (args, want) in cases {
        let o = ddsw(&args);
        assert_eq!(code(&o), want, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn loop_failure_exit_code_keeps_partial_trace() {
    // with K = 0 a tiny radius shrinks the inputs below what the rank test resolves
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddsw(&[
        "simulate",
        "deadbeat",
        "--override",
        "excitation.delta=1e-9",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 7, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("deadbeat.trace.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn invariant_violation_exit_code() {
    // one IPM iteration never reaches optimality; the loop keeps going
    let o = ddsw(&["simulate", "scalar", "--override", "solver.max_iterations=1", "--override", "loop.max_consecutive_failures=1000"]);
    assert_eq!(code(&o), 8, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bounds_and_lqr_check() {
    let o = ddsw(&["bounds", "f18"]);
    assert_eq!(code(&o), 0);
    let rep = stdout_json(&o);
    let names: Vec<&str> = rep["table"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    for n in ["kappa", "delta_bar", "tau_bar", "C", "mu"] {
        assert!(names.contains(&n), "{names:?}");
    }
    let o = ddsw(&["bounds", "deadbeat"]);
    assert_eq!(stdout_json(&o)["constants"]["kappa"], 0.0);

    let o = ddsw(&["lqr-check", "scalar"]);
    assert_eq!(code(&o), 0);
    let rep = stdout_json(&o);
    let k = rep["k_dare"][0][0].as_f64().unwrap();
    assert!((k + 1.6180339887).abs() < 1e-8);
    assert!(rep["gain_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(code(&ddsw(&["lqr-check", "f18"])), 9);
}

#[test]
fn lqr_discrepancy_exit_code() {
    let o = ddsw(&["lqr-check", "scalar", "--override", "solver.max_iterations=2"]);
    assert_eq!(code(&o), 10, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn lqr_check_dumps_program() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("scalar.sdp");
    let o = ddsw(&["lqr-check", "scalar", "--dump-sdp", dump.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dump).unwrap();
    assert!(text.starts_with("# conic problem dump v1\n"));
    // gamma, Q (5x1), P (1), L (1)
    assert!(text.contains("variables 8\n"), "{text}");
    assert!(text.contains("lmi decrease nsd size 2"));
    assert!(text.contains("lmi cost psd size 2"));
}
