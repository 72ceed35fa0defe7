use ddsw_core::run::{run_scenario, trace_header, write_trace_csv, write_trace_json, TraceRow};
use ddsw_core::scenario::{builtin_names, load_scenario, parse_scenario, parse_scenario_str};

fn csv_for(name: &str) -> (String, ddsw_core::run::RunOutput) {
    let cfg = load_scenario(name, &[]).unwrap();
    let out = run_scenario(&cfg).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &out.trace, cfg.state_dim(), cfg.input_dim()).unwrap();
    (String::from_utf8(buf).unwrap(), out)
}

#[test]
fn summary_recomputes_from_csv() {
    for name in ["f18", "f404", "scalar"] {
        let (csv, out) = csv_for(name);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = |c: &str| header.iter().position(|h| *h == c).unwrap();
        let (ix, ik, is, ipe, irk) = (col("norm_x"), col("norm_K"), col("solver_status"), col("pe_ok"), col("rank_ok"));
        let mut max_x: f64 = 0.0;
        let mut max_k: f64 = 0.0;
        let (mut bad_solves, mut pe, mut rk, mut steps) = (0, 0, 0, 0);
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), header.len());
            max_x = max_x.max(f[ix].parse().unwrap());
            max_k = max_k.max(f[ik].parse().unwrap());
            bad_solves += usize::from(f[is] != "optimal");
            pe += usize::from(f[ipe] != "true");
            rk += usize::from(f[irk] != "true");
            steps += 1;
        }
        let s = &out.report.summary;
        assert_eq!(steps, s.steps, "{name}");
        assert_eq!(max_x.to_bits(), s.max_norm_x.to_bits(), "{name}");
        assert_eq!(max_k.to_bits(), s.max_norm_k.to_bits(), "{name}");
        assert_eq!(bad_solves, s.non_optimal_solves, "{name}");
        assert_eq!(pe, s.pe_violations, "{name}");
        assert_eq!(rk, s.rank_violations, "{name}");
    }
}

#[test]
fn csv_state_columns_reproduce_norm() {
    let (csv, _) = csv_for("f18");
    assert!(csv.starts_with(&trace_header(2, 2)));
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').take(4).map(|v| v.parse().unwrap()).collect();
        let norm: f64 = line.split(',').nth(8).unwrap().parse().unwrap();
        let direct = (f[2] * f[2] + f[3] * f[3]).sqrt();
        assert!((direct - norm).abs() <= 4.0 * f64::EPSILON * norm, "{line}");
    }
}

#[test]
fn json_trace_matches_csv_rows() {
    let cfg = load_scenario("scalar", &[]).unwrap();
    let out = run_scenario(&cfg).unwrap();
    let mut buf = Vec::new();
    write_trace_json(&mut buf, &out.trace).unwrap();
    let rows: Vec<TraceRow> = serde_json::from_slice(&buf).unwrap();
    assert_eq!(rows.len(), out.trace.len());
    for (row, rec) in rows.iter().zip(&out.trace) {
        assert_eq!(row.k, rec.k);
        assert_eq!(row.x, rec.x.as_slice());
        assert_eq!(row.u, rec.u.as_slice());
        assert_eq!(row.norm_k.to_bits(), rec.norm_k.to_bits());
    }
}

#[test]
fn builtins_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for name in builtin_names() {
        let cfg = load_scenario(name, &[]).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        let back = parse_scenario(&path).unwrap();
        assert_eq!(back, cfg, "{name}");
        assert_eq!(parse_scenario_str(&back.to_toml().unwrap(), &[]).unwrap(), cfg);
    }
}

#[test]
fn window_too_short_is_rejected() {
    // n = m = 2 needs T >= 15
    let err = load_scenario("f18", &["window_length=10".into()]).unwrap_err();
    assert!(matches!(err, ddsw_core::Error::WindowTooShort { t: 10, min: 15, n_min: 8 }), "{err}");
}
