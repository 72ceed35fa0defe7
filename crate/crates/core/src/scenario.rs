//! Scenario files: schema, validation, overrides and builtins.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_window::{excitation_length, min_window_length, RankTol};
use crate::dd_lqr::SolverOptions;
use crate::error::{Error, Result};
use crate::excitation::PolicyMode;
use crate::linalg::rows;
use crate::plant::{FaultEvent, FaultKind, LinearMode, LoopSettings, Segment, SwitchingSchedule};

const BUILTINS: &[(&str, &str)] = &[
    ("f18", include_str!("../scenarios/f18.toml")),
    ("f404", include_str!("../scenarios/f404.toml")),
    ("scalar", include_str!("../scenarios/scalar.toml")),
    ("deadbeat", include_str!("../scenarios/deadbeat.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Steps,
    Seconds,
}

// ---- file schema -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeFile {
    #[serde(default)]
    pub label: Option<String>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationFile {
    pub delta: f64,
    #[serde(default)]
    pub policy: PolicyMode,
    pub open_loop_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Explicit,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub kind: ScheduleKind,
    /// Declared minimum gap between switches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell: Option<f64>,
    /// `[start, mode]` pairs, explicit schedules only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<(f64, usize)>,
    /// Accept a dwell time not exceeding the window length.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_short_dwell: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKindFile {
    AdditiveState,
    ActuatorOutage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultFile {
    pub kind: FaultKindFile,
    pub start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFile {
    /// Decay rate of the dwell-time bound; default `(1 + alpha) / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Split point of the transient feasibility construction; default `N - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub time_unit: TimeUnit,
    pub sampling_time: f64,
    pub window_length: usize,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    pub initial_state: Vec<f64>,
    pub modes: Vec<ModeFile>,
    pub excitation: ExcitationFile,
    pub schedule: ScheduleFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultFile>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, rename = "loop")]
    pub loop_settings: LoopSettings,
    #[serde(default)]
    pub analysis: AnalysisFile,
    #[serde(default)]
    pub output: OutputFile,
}

// ---- validated config --------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Explicit {
        segments: Vec<Segment>,
        dwell: Option<usize>,
    },
    Random {
        dwell: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig {
    pub delta: f64,
    pub policy: PolicyMode,
    pub open_loop_range: f64,
}

/// Validated scenario with every time in steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub sampling_time: f64,
    pub window_length: usize,
    pub horizon: usize,
    pub seed: u64,
    /// State at the start of the open-loop experiment, `x(-T)`.
    pub initial_state: DVector<f64>,
    pub modes: Vec<LinearMode>,
    pub excitation: ExcitationConfig,
    pub schedule: ScheduleSpec,
    pub allow_short_dwell: bool,
    pub faults: Vec<FaultEvent>,
    pub solver: SolverOptions,
    pub loop_settings: LoopSettings,
    pub analysis: AnalysisFile,
    pub output: OutputFile,
}

fn matrix(what: &str, rows_in: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows_in.len();
    let c = rows_in.first().map(|x| x.len()).unwrap_or(0);
    if r == 0 || c == 0 {
        return Err(Error::dims(what, "nonempty matrix", format!("{r}x{c}")));
    }
    if let Some(bad) = rows_in.iter().find(|row| row.len() != c) {
        return Err(Error::dims(format!("{what} row length"), c, bad.len()));
    }
    if rows_in.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows_in[i][j]))
}

struct Clock {
    unit: TimeUnit,
    h: f64,
}

impl Clock {
    /// Times in seconds are floored to whole steps; the `1e-9` guard keeps
    /// values like `2.7 / 0.1` from landing one step short.
    fn steps(&self, what: &str, v: f64) -> Result<usize> {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Schema(format!("{what} must be a nonnegative time, got {v}")));
        }
        match self.unit {
            TimeUnit::Steps => {
                if v.fract() != 0.0 {
                    return Err(Error::Schema(format!(
                        "{what} = {v} must be a whole number of steps"
                    )));
                }
                Ok(v as usize)
            }
            TimeUnit::Seconds => Ok((v / self.h + 1e-9).floor() as usize),
        }
    }
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<ScenarioConfig> {
        if !(self.sampling_time > 0.0 && self.sampling_time.is_finite()) {
            return Err(Error::Schema(format!(
                "sampling_time must be positive, got {}",
                self.sampling_time
            )));
        }
        let clock = Clock {
            unit: self.time_unit,
            h: self.sampling_time,
        };
        if self.modes.is_empty() {
            return Err(Error::Schema("at least one [[modes]] entry is required".into()));
        }
        let mut modes = Vec::with_capacity(self.modes.len());
        for (i, mf) in self.modes.iter().enumerate() {
            let label = mf.label.clone().unwrap_or_else(|| i.to_string());
            let a = matrix(&format!("modes[{i}].a"), &mf.a)?;
            let b = matrix(&format!("modes[{i}].b"), &mf.b)?;
            modes.push(LinearMode::new(a, b, label)?);
        }
        let (n, m) = (modes[0].n(), modes[0].m());
        for md in &modes {
            if (md.n(), md.m()) != (n, m) {
                return Err(Error::dims(
                    format!("mode {:?}", md.label),
                    format!("n={n}, m={m}"),
                    format!("n={}, m={}", md.n(), md.m()),
                ));
            }
        }
        if self.initial_state.len() != n {
            return Err(Error::dims("initial_state", n, self.initial_state.len()));
        }
        let t = self.window_length;
        let min = min_window_length(n, m);
        if t < min {
            return Err(Error::WindowTooShort {
                t,
                min,
                n_min: excitation_length(n, m),
            });
        }
        for md in &modes {
            md.check_controllable()?;
        }
        let horizon = clock.steps("horizon", self.horizon)?;
        let ex = &self.excitation;
        if !(ex.delta > 0.0 && ex.delta.is_finite()) {
            return Err(Error::Parameter(format!("excitation.delta must be positive, got {}", ex.delta)));
        }
        if !(ex.open_loop_range > 0.0 && ex.open_loop_range.is_finite()) {
            return Err(Error::Parameter(format!(
                "excitation.open_loop_range must be positive, got {}",
                ex.open_loop_range
            )));
        }

        let sf = &self.schedule;
        let dwell = sf.dwell.map(|d| clock.steps("schedule.dwell", d)).transpose()?;
        let schedule = match sf.kind {
            ScheduleKind::Explicit => {
                if sf.segments.is_empty() {
                    return Err(Error::Schema("explicit schedule needs segments".into()));
                }
                let mut segs = Vec::with_capacity(sf.segments.len());
                for (i, (start, mode)) in sf.segments.iter().enumerate() {
                    if *mode >= modes.len() {
                        return Err(Error::Schema(format!(
                            "schedule.segments[{i}] uses mode {mode}, only {} defined",
                            modes.len()
                        )));
                    }
                    segs.push(Segment {
                        start: clock.steps(&format!("schedule.segments[{i}]"), *start)?,
                        mode: *mode,
                    });
                }
                let sched = SwitchingSchedule::new(segs.clone(), horizon)
                    .map_err(|e| Error::Schema(e.to_string()))?;
                if let (Some(d), Some(g)) = (dwell, sched.min_gap()) {
                    if g < d {
                        return Err(Error::Schema(format!(
                            "schedule has a gap of {g} steps, below the declared dwell {d}"
                        )));
                    }
                }
                ScheduleSpec::Explicit {
                    segments: segs,
                    dwell,
                }
            }
            ScheduleKind::Random => {
                if !sf.segments.is_empty() {
                    return Err(Error::Schema("random schedule takes no segments".into()));
                }
                let d = dwell.ok_or_else(|| Error::Schema("random schedule needs dwell".into()))?;
                if d == 0 {
                    return Err(Error::Schema("schedule.dwell must be at least one step".into()));
                }
                ScheduleSpec::Random { dwell: d }
            }
        };
        let switches = match &schedule {
            ScheduleSpec::Explicit { segments, .. } => segments.len() > 1,
            ScheduleSpec::Random { .. } => modes.len() > 1,
        };
        if switches && !sf.allow_short_dwell {
            let d = match &schedule {
                ScheduleSpec::Explicit { segments, dwell } => dwell.unwrap_or_else(|| {
                    segments.windows(2).map(|p| p[1].start - p[0].start).min().unwrap_or(usize::MAX)
                }),
                ScheduleSpec::Random { dwell } => *dwell,
            };
            if d <= t {
                return Err(Error::Parameter(format!(
                    "dwell time {d} must exceed the window length {t} (set schedule.allow_short_dwell to override)"
                )));
            }
        }

        let mut faults = Vec::with_capacity(self.faults.len());
        for (i, ff) in self.faults.iter().enumerate() {
            let what = format!("faults[{i}]");
            let kind = match ff.kind {
                FaultKindFile::AdditiveState => {
                    if ff.column.is_some() {
                        return Err(Error::Schema(format!("{what}: additive_state takes no column")));
                    }
                    let beta = ff
                        .beta
                        .ok_or_else(|| Error::Schema(format!("{what}: beta is required")))?;
                    let d = ff
                        .d
                        .as_ref()
                        .ok_or_else(|| Error::Schema(format!("{what}: d is required")))?;
                    FaultKind::AdditiveStateFault {
                        beta,
                        d: matrix(&format!("{what}.d"), d)?,
                    }
                }
                FaultKindFile::ActuatorOutage => {
                    if ff.beta.is_some() || ff.d.is_some() {
                        return Err(Error::Schema(format!("{what}: actuator_outage takes only column")));
                    }
                    FaultKind::ActuatorOutage {
                        column: ff
                            .column
                            .ok_or_else(|| Error::Schema(format!("{what}: column is required")))?,
                    }
                }
            };
            let ev = FaultEvent {
                kind,
                start: clock.steps(&format!("{what}.start"), ff.start)?,
                end: ff.end.map(|e| clock.steps(&format!("{what}.end"), e)).transpose()?,
            };
            ev.validate(n, m)?;
            if ev.start >= horizon.max(1) {
                return Err(Error::Schema(format!("{what} starts after the horizon")));
            }
            faults.push(ev);
        }
        self.solver.validate()?;
        if let RankTol::Fixed(v) = self.loop_settings.rank_tol {
            if !(v >= 0.0) {
                return Err(Error::Parameter(format!("loop.rank_tol must be nonnegative, got {v}")));
            }
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Parameter("seed must be below 2^63".into()));
        }
        if self.loop_settings.max_consecutive_failures == 0 {
            return Err(Error::Parameter("loop.max_consecutive_failures must be positive".into()));
        }
        if let Some(l) = self.analysis.lambda {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Parameter(format!("analysis.lambda must lie in (0, 1), got {l}")));
            }
        }
        Ok(ScenarioConfig {
            name: self.name.clone(),
            description: self.description.clone(),
            sampling_time: self.sampling_time,
            window_length: t,
            horizon,
            seed: self.seed,
            initial_state: DVector::from_vec(self.initial_state.clone()),
            modes,
            excitation: ExcitationConfig {
                delta: ex.delta,
                policy: ex.policy,
                open_loop_range: ex.open_loop_range,
            },
            schedule,
            allow_short_dwell: sf.allow_short_dwell,
            faults,
            solver: self.solver,
            loop_settings: self.loop_settings,
            analysis: self.analysis.clone(),
            output: self.output.clone(),
        })
    }
}

impl ScenarioConfig {
    pub fn state_dim(&self) -> usize {
        self.modes[0].n()
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].m()
    }

    /// File form with every time in steps.
    pub fn to_file(&self) -> ScenarioFile {
        let (dwell, segments, kind) = match &self.schedule {
            ScheduleSpec::Explicit { segments, dwell } => (
                dwell.map(|d| d as f64),
                segments.iter().map(|s| (s.start as f64, s.mode)).collect(),
                ScheduleKind::Explicit,
            ),
            ScheduleSpec::Random { dwell } => (Some(*dwell as f64), Vec::new(), ScheduleKind::Random),
        };
        ScenarioFile {
            name: self.name.clone(),
            description: self.description.clone(),
            time_unit: TimeUnit::Steps,
            sampling_time: self.sampling_time,
            window_length: self.window_length,
            horizon: self.horizon as f64,
            seed: self.seed,
            initial_state: self.initial_state.iter().copied().collect(),
            modes: self
                .modes
                .iter()
                .map(|md| ModeFile {
                    label: Some(md.label.clone()),
                    a: rows(&md.a),
                    b: rows(&md.b),
                })
                .collect(),
            excitation: ExcitationFile {
                delta: self.excitation.delta,
                policy: self.excitation.policy,
                open_loop_range: self.excitation.open_loop_range,
            },
            schedule: ScheduleFile {
                kind,
                dwell,
                segments,
                allow_short_dwell: self.allow_short_dwell,
            },
            faults: self
                .faults
                .iter()
                .map(|f| {
                    let (kind, beta, d, column) = match &f.kind {
                        FaultKind::AdditiveStateFault { beta, d } => {
                            (FaultKindFile::AdditiveState, Some(*beta), Some(rows(d)), None)
                        }
                        FaultKind::ActuatorOutage { column } => {
                            (FaultKindFile::ActuatorOutage, None, None, Some(*column))
                        }
                    };
                    FaultFile {
                        kind,
                        start: f.start as f64,
                        end: f.end.map(|e| e as f64),
                        beta,
                        d,
                        column,
                    }
                })
                .collect(),
            solver: self.solver,
            loop_settings: self.loop_settings,
            analysis: self.analysis.clone(),
            output: self.output.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_file()).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Applies `key.path=value` edits to a parsed TOML table. The value is read
/// as a TOML literal and falls back to a plain string.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("override {ov:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Schema(format!("override key {key:?} is malformed")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Error::Schema(format!("override {key:?}: {p} is not a table")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

pub fn parse_scenario_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    apply_overrides(&mut table, overrides)?;
    let file: ScenarioFile = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Schema(e.to_string()))?;
    file.validate()
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text, &[])
}

/// Builtin name or file path, with overrides.
pub fn load_scenario(spec: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    match builtin_source(spec) {
        Some(src) => parse_scenario_str(src, overrides),
        None => {
            let text = std::fs::read_to_string(spec)?;
            parse_scenario_str(&text, overrides)
        }
    }
}

/// Derives an independent seed for one of the random streams of a run.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_EXPERIMENT: u64 = 1;
pub const STREAM_EXCITATION: u64 = 2;
pub const STREAM_SCHEDULE: u64 = 3;
