//! Scenario execution, reports and trace files.

use std::io::{self, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_window::DataWindow;
use crate::dd_lqr::{closed_loop_h2_cost, dare_lqr, solve_dd_lqr, SolverStatus};
use crate::error::{Error, Result};
use crate::excitation::{ExcitationPolicy, Exciter};
use crate::plant::{
    generate_dwell_schedule, open_loop_experiment, run_online_loop, FaultKind, LinearMode,
    SwitchedPlant, SwitchingSchedule, TraceRecord,
};
use crate::scenario::{
    stream_seed, ScenarioConfig, ScheduleSpec, STREAM_EXCITATION, STREAM_EXPERIMENT,
    STREAM_SCHEDULE,
};
use crate::stability::StabilityConstants;

/// Slack of the gain bound check.
pub const GAIN_SLACK: f64 = 1e-6;
/// Slack of the one-step growth bound check.
pub const GROWTH_SLACK: f64 = 1e-9;

/// Builds the plant a scenario describes, drawing a schedule if needed.
pub fn build_plant(cfg: &ScenarioConfig) -> Result<SwitchedPlant> {
    let schedule = match &cfg.schedule {
        ScheduleSpec::Explicit { segments, .. } => SwitchingSchedule::new(segments.clone(), cfg.horizon)?,
        ScheduleSpec::Random { dwell } => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_SCHEDULE));
            generate_dwell_schedule(cfg.modes.len(), *dwell, cfg.horizon, &mut rng)?
        }
    };
    SwitchedPlant::new(cfg.modes.clone(), schedule, cfg.faults.clone())
}

/// Modes the bounds are computed over: every effective mode that drives
/// the plant within the horizon.
pub fn bound_modes(plant: &SwitchedPlant) -> Vec<LinearMode> {
    plant
        .modes_in_use()
        .into_iter()
        .map(|i| plant.effective_modes()[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub max_norm_x: f64,
    pub max_norm_k: f64,
    pub final_norm_x: f64,
    pub non_optimal_solves: usize,
    pub pe_violations: usize,
    pub rank_violations: usize,
}

impl Summary {
    pub fn from_trace(trace: &[TraceRecord], final_state: &DVector<f64>) -> Self {
        Self {
            steps: trace.len(),
            max_norm_x: trace.iter().map(|r| r.norm_x()).fold(0.0, f64::max),
            max_norm_k: trace.iter().map(|r| r.norm_k).fold(0.0, f64::max),
            final_norm_x: final_state.norm(),
            non_optimal_solves: trace.iter().filter(|r| r.flagged()).count(),
            pe_violations: trace.iter().filter(|r| !r.pe_ok).count(),
            rank_violations: trace.iter().filter(|r| !r.rank_ok).count(),
        }
    }
}

/// Runtime checks against the model-based bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub kappa: Option<f64>,
    pub growth_c: Option<f64>,
    /// Steps with `‖K(k)‖ > κ + slack`.
    pub gain_violations: Vec<usize>,
    /// Steps with `‖x(k+1)‖ > C ‖x(k)‖ + slack`.
    pub growth_violations: Vec<usize>,
    /// Why the bounds could not be evaluated, if they could not.
    pub bounds_error: Option<String>,
}

/// Times in steps after seconds conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEcho {
    pub horizon: usize,
    pub window_length: usize,
    pub switch_times: Vec<usize>,
    pub modes: Vec<usize>,
    /// `(start, end)` of every fault, in declaration order.
    pub fault_intervals: Vec<(usize, Option<usize>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub trace_path: Option<String>,
    pub steps: StepEcho,
    pub summary: Summary,
    pub invariants: InvariantReport,
    pub bounds: Option<StabilityConstants>,
    pub error: Option<String>,
    /// No error, no flagged step, no bound violation.
    pub ok: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Vec<TraceRecord>,
    pub final_state: DVector<f64>,
    pub plant: SwitchedPlant,
    pub error: Option<Error>,
}

impl RunOutput {
    /// `‖x(k)‖` for `k = 0..=len`, including the state after the last step.
    pub fn state_norms(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.trace.iter().map(|r| r.norm_x()).collect();
        v.push(self.final_state.norm());
        v
    }
}

/// Open-loop seeding, then the online loop, then the invariant checks.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let plant = build_plant(cfg)?;
    // offline data come from the fault-free mode scheduled at k = 0
    let first = &cfg.modes[plant.schedule().mode_at(0)];
    let window = open_loop_experiment(
        first,
        &cfg.initial_state,
        cfg.excitation.open_loop_range,
        cfg.window_length,
        stream_seed(cfg.seed, STREAM_EXPERIMENT),
    )?;
    let mut exciter = Exciter::new(ExcitationPolicy {
        delta: cfg.excitation.delta,
        mode: cfg.excitation.policy,
        rng_seed: stream_seed(cfg.seed, STREAM_EXCITATION),
    })?;
    let out = run_online_loop(
        &plant,
        window,
        &mut exciter,
        &cfg.solver,
        &cfg.loop_settings,
        cfg.horizon,
    );

    let modes = bound_modes(&plant);
    let bounds = StabilityConstants::compute(
        &modes,
        cfg.excitation.delta,
        cfg.window_length,
        cfg.analysis.lambda,
    );
    let mut inv = InvariantReport {
        kappa: None,
        growth_c: None,
        gain_violations: Vec::new(),
        growth_violations: Vec::new(),
        bounds_error: None,
    };
    let bounds = match bounds {
        Ok(c) => {
            inv.kappa = Some(c.kappa);
            inv.growth_c = Some(c.dwell.c);
            for r in &out.trace {
                if r.norm_k > c.kappa + GAIN_SLACK {
                    inv.gain_violations.push(r.k);
                }
            }
            let mut norms: Vec<f64> = out.trace.iter().map(|r| r.norm_x()).collect();
            norms.push(out.final_state.norm());
            for (k, pair) in norms.windows(2).enumerate() {
                if pair[1] > c.dwell.c * pair[0] + GROWTH_SLACK {
                    inv.growth_violations.push(k);
                }
            }
            Some(c)
        }
        Err(e) => {
            inv.bounds_error = Some(e.to_string());
            None
        }
    };
    let summary = Summary::from_trace(&out.trace, &out.final_state);
    let ok = out.error.is_none()
        && out.trace.len() == cfg.horizon
        && summary.non_optimal_solves == 0
        && summary.pe_violations == 0
        && summary.rank_violations == 0
        && inv.bounds_error.is_none()
        && inv.gain_violations.is_empty()
        && inv.growth_violations.is_empty();
    let report = RunReport {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        trace_path: cfg.output.trace.clone(),
        steps: StepEcho {
            horizon: cfg.horizon,
            window_length: cfg.window_length,
            switch_times: plant.schedule().switch_times(),
            modes: plant.schedule().segments().iter().map(|s| s.mode).collect(),
            fault_intervals: cfg.faults.iter().map(|f| (f.start, f.end)).collect(),
        },
        summary,
        invariants: inv,
        bounds,
        error: out.error.as_ref().map(|e| e.to_string()),
        ok,
    };
    Ok(RunOutput {
        report,
        trace: out.trace,
        final_state: out.final_state,
        plant,
        error: out.error,
    })
}

/// Trace file header for state dimension `n` and input dimension `m`.
pub fn trace_header(n: usize, m: usize) -> String {
    let mut cols = vec!["k".to_string(), "mode".to_string()];
    cols.extend((0..n).map(|i| format!("x_{i}")));
    cols.extend((0..m).map(|i| format!("u_{i}")));
    cols.extend((0..m).map(|i| format!("eps_{i}")));
    for c in ["norm_x", "norm_K", "solver_status", "pe_ok", "rank_ok"] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

/// Comma-separated trace. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[TraceRecord], n: usize, m: usize) -> io::Result<()> {
    writeln!(out, "{}", trace_header(n, m))?;
    for r in trace {
        let mut f: Vec<String> = vec![r.k.to_string(), r.mode.to_string()];
        f.extend(r.x.iter().map(|v| v.to_string()));
        f.extend(r.u.iter().map(|v| v.to_string()));
        f.extend(r.eps.iter().map(|v| v.to_string()));
        f.push(r.norm_x().to_string());
        f.push(r.norm_k.to_string());
        f.push(r.status.as_str().to_string());
        f.push(r.pe_ok.to_string());
        f.push(r.rank_ok.to_string());
        writeln!(out, "{}", f.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub mode: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub eps: Vec<f64>,
    pub norm_x: f64,
    #[serde(rename = "norm_K")]
    pub norm_k: f64,
    pub solver_status: SolverStatus,
    pub pe_ok: bool,
    pub rank_ok: bool,
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        Self {
            k: r.k,
            mode: r.mode,
            x: r.x.iter().copied().collect(),
            u: r.u.iter().copied().collect(),
            eps: r.eps.iter().copied().collect(),
            norm_x: r.norm_x(),
            norm_k: r.norm_k,
            solver_status: r.status,
            pe_ok: r.pe_ok,
            rank_ok: r.rank_ok,
        }
    }
}

/// Same fields as the CSV trace, as a JSON array of objects.
pub fn write_trace_json<W: Write>(out: &mut W, trace: &[TraceRecord]) -> io::Result<()> {
    let rows: Vec<TraceRow> = trace.iter().map(TraceRow::from).collect();
    serde_json::to_writer_pretty(&mut *out, &rows)?;
    writeln!(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub name: &'static str,
    pub formula: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub scenario: String,
    pub modes: Vec<String>,
    pub table: Vec<BoundRow>,
    pub constants: StabilityConstants,
}

/// Every stability constant for the modes the scenario visits.
pub fn bounds_command(cfg: &ScenarioConfig) -> Result<BoundsReport> {
    let plant = build_plant(cfg)?;
    let modes = bound_modes(&plant);
    let c = StabilityConstants::compute(&modes, cfg.excitation.delta, cfg.window_length, cfg.analysis.lambda)?;
    let d = &c.dwell;
    let table = vec![
        BoundRow { name: "kappa", formula: "max_i sqrt(gamma_i - n), gamma_i = tr P_i + tr(K_i P_i K_i^T), (A_i+B_iK_i) P_i (.)^T - P_i + I = 0", value: c.kappa },
        BoundRow { name: "lambda_bar_P", formula: "max_i lambda_max(P_i), (A_i+B_iK_i)^T P_i (.) - P_i + I = 0", value: c.lyapunov.lambda_max },
        BoundRow { name: "lambda_underbar_P", formula: "min_i lambda_min(P_i)", value: c.lyapunov.lambda_min },
        BoundRow { name: "delta_bar", formula: "min_i (-l|Acl_i| + sqrt(l^2|Acl_i|^2 + l/2)) / (l|B_i|), l = lambda_bar_P", value: c.lyapunov.delta_bar },
        BoundRow { name: "alpha", formula: "sqrt((lambda_bar_P - 1/2) / lambda_bar_P)", value: d.alpha },
        BoundRow { name: "lambda", formula: "decay rate, alpha < lambda < 1 (default (1 + alpha)/2)", value: d.lambda },
        BoundRow { name: "phi", formula: "sqrt(lambda_bar_P / lambda_underbar_P)", value: d.phi },
        BoundRow { name: "C0", formula: "max_i |A_i| + |B_i| (kappa + delta)", value: d.c0 },
        BoundRow { name: "C", formula: "max(C0, 1)", value: d.c },
        BoundRow { name: "mu", formula: "phi (C / alpha)^T", value: d.mu },
        BoundRow { name: "tau_bar", formula: "ln(mu) / ln(lambda / alpha)", value: d.tau_bar },
    ];
    Ok(BoundsReport {
        scenario: cfg.name.clone(),
        modes: modes.iter().map(|m| m.label.clone()).collect(),
        table,
        constants: c,
    })
}

pub const LQR_CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct LqrCheckReport {
    pub scenario: String,
    #[serde(serialize_with = "crate::linalg::ser_rows")]
    pub k_sdp: nalgebra::DMatrix<f64>,
    #[serde(serialize_with = "crate::linalg::ser_rows")]
    pub k_dare: nalgebra::DMatrix<f64>,
    pub gamma_sdp: f64,
    pub h2_cost_dare: f64,
    pub solver_status: SolverStatus,
    /// `‖K_sdp − K_dare‖ / ‖K_dare‖`, absolute when `K_dare = 0`.
    pub gain_error: f64,
    pub cost_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Offline experiment of a scenario on its first scheduled mode.
pub fn experiment_window(cfg: &ScenarioConfig) -> Result<DataWindow> {
    let plant = build_plant(cfg)?;
    open_loop_experiment(
        &cfg.modes[plant.schedule().mode_at(0)],
        &cfg.initial_state,
        cfg.excitation.open_loop_range,
        cfg.window_length,
        stream_seed(cfg.seed, STREAM_EXPERIMENT),
    )
}

/// Runs the data-driven program on one open-loop window and compares it
/// with the Riccati solution of the true model.
pub fn lqr_check_command(cfg: &ScenarioConfig) -> Result<LqrCheckReport> {
    if cfg.modes.len() != 1 || !cfg.faults.is_empty() {
        return Err(Error::Parameter(
            "lqr-check needs a single-mode scenario without faults".into(),
        ));
    }
    let md = &cfg.modes[0];
    let window = experiment_window(cfg)?;
    let sol = solve_dd_lqr(&window, &cfg.solver);
    let lqr = dare_lqr(&md.a, &md.b)?;
    let cost = closed_loop_h2_cost(&md.a, &md.b, &lqr.k)?;
    let diff = (&sol.k - &lqr.k).norm();
    let gain_error = if lqr.k.norm() > 0.0 { diff / lqr.k.norm() } else { diff };
    let cost_error = (sol.gamma - cost).abs() / sol.gamma.abs().max(f64::MIN_POSITIVE);
    let pass = sol.status == SolverStatus::Optimal && gain_error <= LQR_CHECK_TOL && cost_error <= LQR_CHECK_TOL;
    Ok(LqrCheckReport {
        scenario: cfg.name.clone(),
        k_sdp: sol.k,
        k_dare: lqr.k,
        gamma_sdp: sol.gamma,
        h2_cost_dare: cost,
        solver_status: sol.status,
        gain_error,
        cost_error,
        tolerance: LQR_CHECK_TOL,
        pass,
    })
}

/// Short description of the faults active at a step, for reports.
pub fn describe_faults(cfg: &ScenarioConfig, k: usize) -> Vec<String> {
    cfg.faults
        .iter()
        .filter(|f| f.is_active(k))
        .map(|f| match &f.kind {
            FaultKind::AdditiveStateFault { beta, .. } => format!("beta={beta}"),
            FaultKind::ActuatorOutage { column } => format!("outage u_{column}"),
        })
        .collect()
}
