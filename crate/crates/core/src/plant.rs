//! Switched plant: modes, dwell-time schedules, faults and the online loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_window::{excitation_length, numerical_rank, DataWindow, RankTol};
use crate::dd_lqr::{solve_dd_lqr, SolverOptions, SolverStatus};
use crate::error::{Error, Result};
use crate::excitation::{
    is_persistently_exciting, suffix_rank, window_input_rank, CandidateUsed, Exciter,
};
use crate::linalg::spectral_norm;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMode {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub label: String,
}

impl LinearMode {
    /// Checks shapes only; see [`LinearMode::check_controllable`].
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dims(
                format!("A of mode {label:?}"),
                "square, nonempty",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dims(
                format!("B of mode {label:?}"),
                format!("{n}xm with m >= 1"),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        Ok(Self { a, b, label })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Rank of `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_rank(&self) -> usize {
        let (n, m) = (self.n(), self.m());
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for i in 0..n {
            ctrb.columns_mut(i * m, m).copy_from(&blk);
            blk = &self.a * blk;
        }
        numerical_rank(&ctrb, RankTol::Auto)
    }

    pub fn check_controllable(&self) -> Result<()> {
        let rank = self.controllability_rank();
        if rank < self.n() {
            return Err(Error::Uncontrollable {
                label: self.label.clone(),
                rank,
                n: self.n(),
            });
        }
        Ok(())
    }
}

/// `A x + B u`
pub fn plant_step(mode: &LinearMode, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != mode.n() {
        return Err(Error::dims("state", mode.n(), x.len()));
    }
    if u.len() != mode.m() {
        return Err(Error::dims("input", mode.m(), u.len()));
    }
    Ok(&mode.a * x + &mode.b * u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingSchedule {
    segments: Vec<Segment>,
    horizon: usize,
}

impl SwitchingSchedule {
    pub fn new(segments: Vec<Segment>, horizon: usize) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Parameter("schedule needs at least one segment".into()))?;
        if first.start != 0 {
            return Err(Error::Parameter(format!(
                "first segment must start at step 0, not {}",
                first.start
            )));
        }
        for pair in segments.windows(2) {
            if pair[1].start <= pair[0].start {
                return Err(Error::Parameter(format!(
                    "segment starts must increase ({} then {})",
                    pair[0].start, pair[1].start
                )));
            }
            if pair[1].mode == pair[0].mode {
                return Err(Error::Parameter(format!(
                    "mode must change at step {} (stays {})",
                    pair[1].start, pair[1].mode
                )));
            }
        }
        Ok(Self { segments, horizon })
    }

    /// One segment covering the horizon.
    pub fn constant(mode: usize, horizon: usize) -> Self {
        Self {
            segments: vec![Segment { start: 0, mode }],
            horizon,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mode_at(&self, k: usize) -> usize {
        let idx = self.segments.partition_point(|s| s.start <= k);
        self.segments[idx.saturating_sub(1)].mode
    }

    /// Switching instants `k_s` for `s >= 1` that fall inside the horizon.
    pub fn switch_times(&self) -> Vec<usize> {
        self.segments
            .iter()
            .skip(1)
            .map(|s| s.start)
            .filter(|k| *k < self.horizon)
            .collect()
    }

    /// Smallest gap between consecutive switches (`None` with no switch).
    pub fn min_gap(&self) -> Option<usize> {
        self.segments.windows(2).map(|p| p[1].start - p[0].start).min()
    }
}

/// Random schedule with gaps drawn uniformly from `[dwell, 2 dwell]` and a
/// different mode after every switch. The first segment uses mode 0.
pub fn generate_dwell_schedule(
    num_modes: usize,
    dwell: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<SwitchingSchedule> {
    if num_modes == 0 {
        return Err(Error::Parameter("need at least one mode".into()));
    }
    if dwell == 0 {
        return Err(Error::Parameter("dwell time must be positive".into()));
    }
    let mut segments = vec![Segment { start: 0, mode: 0 }];
    if num_modes == 1 || dwell >= horizon {
        return SwitchingSchedule::new(segments, horizon);
    }
    let mut k = 0;
    loop {
        k += rng.random_range(dwell..=2 * dwell);
        if k >= horizon {
            break;
        }
        let prev = segments.last().unwrap().mode;
        let mut next = rng.random_range(0..num_modes - 1);
        if next >= prev {
            next += 1;
        }
        segments.push(Segment { start: k, mode: next });
    }
    SwitchingSchedule::new(segments, horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FaultKind {
    /// `A ← A + beta D`
    AdditiveStateFault { beta: f64, d: DMatrix<f64> },
    /// Column of `B` forced to zero.
    ActuatorOutage { column: usize },
}

/// Active on `start <= k < end` (`end = None` means forever).
#[derive(Debug, Clone, PartialEq)]
pub struct FaultEvent {
    pub kind: FaultKind,
    pub start: usize,
    pub end: Option<usize>,
}

impl FaultEvent {
    pub fn is_active(&self, k: usize) -> bool {
        k >= self.start && self.end.is_none_or(|e| k < e)
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if let Some(e) = self.end {
            if e <= self.start {
                return Err(Error::Parameter(format!(
                    "fault interval [{}, {e}) is empty",
                    self.start
                )));
            }
        }
        match &self.kind {
            FaultKind::AdditiveStateFault { beta, d } => {
                if d.shape() != (n, n) {
                    return Err(Error::dims(
                        "fault matrix D",
                        format!("{n}x{n}"),
                        format!("{}x{}", d.nrows(), d.ncols()),
                    ));
                }
                if !beta.is_finite() {
                    return Err(Error::Parameter("fault beta must be finite".into()));
                }
            }
            FaultKind::ActuatorOutage { column } => {
                if *column >= m {
                    return Err(Error::dims("outage column", format!("< {m}"), column));
                }
            }
        }
        Ok(())
    }
}

/// Applies every fault active at `k`, in declaration order.
pub fn effective_mode(base: &LinearMode, faults: &[FaultEvent], k: usize) -> LinearMode {
    let mut mode = base.clone();
    for f in faults.iter().filter(|f| f.is_active(k)) {
        match &f.kind {
            FaultKind::AdditiveStateFault { beta, d } => mode.a += d * *beta,
            FaultKind::ActuatorOutage { column } => mode.b.column_mut(*column).fill(0.0),
        }
    }
    mode
}

/// Base modes, a schedule and faults. Effective modes are numbered with
/// the base modes first, then every distinct faulted variant met within
/// the horizon in order of first appearance.
#[derive(Debug, Clone)]
pub struct SwitchedPlant {
    modes: Vec<LinearMode>,
    schedule: SwitchingSchedule,
    faults: Vec<FaultEvent>,
    effective: Vec<LinearMode>,
    index: Vec<usize>,
}

impl SwitchedPlant {
    pub fn new(
        modes: Vec<LinearMode>,
        schedule: SwitchingSchedule,
        faults: Vec<FaultEvent>,
    ) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::Parameter("plant needs at least one mode".into()))?;
        let (n, m) = (first.n(), first.m());
        for md in &modes {
            if md.n() != n || md.m() != m {
                return Err(Error::dims(
                    format!("mode {:?}", md.label),
                    format!("n={n}, m={m}"),
                    format!("n={}, m={}", md.n(), md.m()),
                ));
            }
        }
        if let Some(s) = schedule.segments().iter().find(|s| s.mode >= modes.len()) {
            return Err(Error::Parameter(format!(
                "schedule refers to mode {} but only {} are defined",
                s.mode,
                modes.len()
            )));
        }
        for f in &faults {
            f.validate(n, m)?;
        }
        let mut effective = modes.clone();
        let mut index = Vec::with_capacity(schedule.horizon());
        for k in 0..schedule.horizon() {
            let base = schedule.mode_at(k);
            if !faults.iter().any(|f| f.is_active(k)) {
                index.push(base);
                continue;
            }
            let mut md = effective_mode(&modes[base], &faults, k);
            let found = effective.iter().position(|e| e.a == md.a && e.b == md.b);
            let idx = match found {
                Some(i) => i,
                None => {
                    md.label = format!("{}+fault@{k}", modes[base].label);
                    effective.push(md);
                    effective.len() - 1
                }
            };
            index.push(idx);
        }
        Ok(Self {
            modes,
            schedule,
            faults,
            effective,
            index,
        })
    }

    pub fn modes(&self) -> &[LinearMode] {
        &self.modes
    }

    pub fn schedule(&self) -> &SwitchingSchedule {
        &self.schedule
    }

    pub fn faults(&self) -> &[FaultEvent] {
        &self.faults
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].n()
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].m()
    }

    /// Every mode listed in the numbering described on the type.
    pub fn effective_modes(&self) -> &[LinearMode] {
        &self.effective
    }

    /// Effective modes that actually drive the plant somewhere in
    /// `[0, horizon)`, plus the base mode of the first segment.
    pub fn modes_in_use(&self) -> Vec<usize> {
        let mut used = vec![self.schedule.mode_at(0)];
        for &i in &self.index {
            if !used.contains(&i) {
                used.push(i);
            }
        }
        used
    }

    pub fn mode_index(&self, k: usize) -> usize {
        self.index
            .get(k)
            .copied()
            .unwrap_or_else(|| self.schedule.mode_at(k))
    }

    pub fn mode_at(&self, k: usize) -> LinearMode {
        match self.index.get(k) {
            Some(&i) => self.effective[i].clone(),
            None => effective_mode(&self.modes[self.schedule.mode_at(k)], &self.faults, k),
        }
    }

    /// Steps where the dynamics change: switches, fault starts and ends,
    /// restricted to `(0, horizon)`, sorted and deduplicated.
    pub fn regime_boundaries(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (1..self.horizon())
            .filter(|&k| self.index[k] != self.index[k - 1])
            .collect();
        out.dedup();
        out
    }

    /// Start times of every switch and fault event inside the horizon.
    pub fn event_starts(&self) -> Vec<usize> {
        let mut out = self.schedule.switch_times();
        for f in &self.faults {
            if f.start < self.horizon() {
                out.push(f.start);
            }
            if let Some(e) = f.end {
                if e < self.horizon() {
                    out.push(e);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Open-loop experiment of `t` steps on `mode` from `x_start` with inputs
/// i.i.d. uniform on `[-range, range]`. The returned window has its last
/// state at time 0. The draw is repeated with the next seed until the
/// input suffix is persistently exciting and the rank condition holds.
pub fn open_loop_experiment(
    mode: &LinearMode,
    x_start: &DVector<f64>,
    range: f64,
    t: usize,
    seed: u64,
) -> Result<DataWindow> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Parameter(format!(
            "open-loop input range must be positive, got {range}"
        )));
    }
    if x_start.len() != mode.n() {
        return Err(Error::dims("initial state", mode.n(), x_start.len()));
    }
    let (n, m) = (mode.n(), mode.m());
    const ATTEMPTS: u64 = 100;
    for attempt in 0..ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut x = x_start.clone();
        let mut us = Vec::with_capacity(t);
        let mut xs = Vec::with_capacity(t + 1);
        xs.push(x.clone());
        for _ in 0..t {
            let u = DVector::from_fn(m, |_, _| rng.random_range(-range..=range));
            x = plant_step(mode, &x, &u)?;
            us.push(u);
            xs.push(x.clone());
        }
        let w = DataWindow::from_samples(us, xs, 0)?;
        let suffix = w.input_suffix(excitation_length(n, m));
        if is_persistently_exciting(&suffix, n + 1)? && w.rank_condition_holds(RankTol::Auto) {
            return Ok(w);
        }
    }
    Err(Error::RankDeficient {
        rank: 0,
        required: m + n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// Effective mode index, see [`SwitchedPlant`].
    pub mode: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub eps: DVector<f64>,
    pub gain: DMatrix<f64>,
    pub status: SolverStatus,
    pub norm_k: f64,
    /// Input suffix and full input window stay persistently exciting after
    /// the step.
    pub pe_ok: bool,
    /// Rank condition of the window the gain was computed from.
    pub rank_ok: bool,
    pub candidate: CandidateUsed,
    /// Largest constraint residual of the program solved at this step.
    pub residual: f64,
}

impl TraceRecord {
    pub fn norm_x(&self) -> f64 {
        self.x.norm()
    }

    /// Solver failed and the previous gain was held.
    pub fn flagged(&self) -> bool {
        self.status != SolverStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSettings {
    /// Abort once this many consecutive solves are not optimal.
    pub max_consecutive_failures: usize,
    /// Tolerance of the rank condition reported in the trace.
    pub rank_tol: RankTol,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            max_consecutive_failures: 10,
            rank_tol: RankTol::Auto,
        }
    }
}

#[derive(Debug)]
pub struct LoopOutcome {
    pub trace: Vec<TraceRecord>,
    /// State after the last recorded step.
    pub final_state: DVector<f64>,
    pub window: DataWindow,
    /// Set when the loop stopped before the horizon.
    pub error: Option<Error>,
}

/// Runs the online controller for `horizon` steps starting at `k = 0`.
pub fn run_online_loop(
    plant: &SwitchedPlant,
    initial_window: DataWindow,
    exciter: &mut Exciter,
    opts: &SolverOptions,
    settings: &LoopSettings,
    horizon: usize,
) -> LoopOutcome {
    let mut window = initial_window;
    let (n, m) = (window.state_dim(), window.input_dim());
    let target = m * (n + 1);
    let mut trace = Vec::with_capacity(horizon);
    let mut gain = DMatrix::zeros(m, n);
    let mut failures = 0;
    let mut error = None;
    if n != plant.state_dim() || m != plant.input_dim() {
        error = Some(Error::dims(
            "initial window",
            format!("n={}, m={}", plant.state_dim(), plant.input_dim()),
            format!("n={n}, m={m}"),
        ));
    }
    for k in 0..horizon {
        if error.is_some() {
            break;
        }
        let x = window.latest_state().clone();
        let rank_ok = window.rank_condition_holds(settings.rank_tol);
        let sol = solve_dd_lqr(&window, opts);
        if sol.status == SolverStatus::Optimal {
            gain = sol.k.clone();
            failures = 0;
        } else {
            failures += 1;
            if failures >= settings.max_consecutive_failures {
                error = Some(Error::SolverFailure {
                    count: failures,
                    status: sol.status.as_str().into(),
                });
            }
        }
        let sel = match exciter.select_input(&window, &gain, &x) {
            Ok(s) => s,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        let mode = plant.mode_at(k);
        let x_next = match plant_step(&mode, &x, &sel.u) {
            Ok(v) => v,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        if let Err(e) = window.push_sample(&sel.u, &x_next) {
            error = Some(e);
            break;
        }
        let pe_ok = suffix_rank(&window) == target && window_input_rank(&window) == target;
        trace.push(TraceRecord {
            k,
            mode: plant.mode_index(k),
            x,
            u: sel.u,
            eps: sel.eps,
            norm_k: spectral_norm(&gain),
            gain: gain.clone(),
            status: sol.status,
            pe_ok,
            rank_ok,
            candidate: sel.report.candidate_used,
            residual: sol.residuals.max(),
        });
    }
    LoopOutcome {
        final_state: window.latest_state().clone(),
        trace,
        window,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd_lqr::dare_lqr;
    use crate::excitation::{ExcitationPolicy, PolicyMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn f18_1() -> LinearMode {
        LinearMode::new(
            m(2, 2, &[0.977, 0.097, 0.002, 0.981]),
            m(2, 2, &[-0.013, -0.004, -0.171, -0.051]),
            "m1",
        )
        .unwrap()
    }

    fn f404() -> LinearMode {
        LinearMode::new(
            m(3, 3, &[0.867, 0.0, 0.202, 0.015, 0.961, -0.032, 0.026, 0.0, 0.803]),
            m(3, 2, &[0.011, 0.0, 0.014, -0.039, 0.009, 0.0]),
            "f404",
        )
        .unwrap()
    }

    fn d404() -> DMatrix<f64> {
        m(3, 3, &[0.075, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, -0.75])
    }

    #[test]
    fn plant_step_examples() {
        let md = f18_1();
        let x = plant_step(&md, &DVector::from_vec(vec![1.0, 0.0]), &DVector::zeros(2)).unwrap();
        assert_eq!(x, DVector::from_vec(vec![0.977, 0.002]));
        assert_eq!(
            plant_step(&md, &DVector::zeros(2), &DVector::zeros(2)).unwrap(),
            DVector::zeros(2)
        );
        let id = LinearMode::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), "id").unwrap();
        let x0 = DVector::from_vec(vec![0.3, -2.0]);
        assert_eq!(plant_step(&id, &x0, &DVector::zeros(1)).unwrap(), x0);
        assert!(plant_step(&id, &x0, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn controllability() {
        assert!(f18_1().check_controllable().is_ok());
        assert!(f404().check_controllable().is_ok());
        let bad = LinearMode::new(m(2, 2, &[1.0, 0.0, 0.0, 2.0]), m(2, 1, &[1.0, 0.0]), "bad").unwrap();
        assert!(matches!(bad.check_controllable(), Err(Error::Uncontrollable { rank: 1, .. })));
    }

    #[test]
    fn effective_mode_examples() {
        let base = f404();
        let faults = vec![
            FaultEvent {
                kind: FaultKind::AdditiveStateFault { beta: 0.1, d: d404() },
                start: 0,
                end: Some(27),
            },
            FaultEvent {
                kind: FaultKind::ActuatorOutage { column: 0 },
                start: 27,
                end: Some(52),
            },
            FaultEvent {
                kind: FaultKind::ActuatorOutage { column: 1 },
                start: 40,
                end: None,
            },
        ];
        let e = effective_mode(&base, &faults, 10);
        assert_relative_eq!(e.a, &base.a + d404() * 0.1, epsilon = 1e-15);
        assert_eq!(e.b, base.b);
        assert_eq!(effective_mode(&base, &[], 10), base);
        let both = effective_mode(&base, &faults, 45);
        assert_eq!(both.b, DMatrix::zeros(3, 2));
        assert_eq!(both.a, base.a);
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let s = SwitchingSchedule::new(
            vec![Segment { start: 0, mode: 0 }, Segment { start: 20, mode: 1 }],
            50,
        )
        .unwrap();
        assert_eq!(s.mode_at(0), 0);
        assert_eq!(s.mode_at(19), 0);
        assert_eq!(s.mode_at(20), 1);
        assert_eq!(s.mode_at(49), 1);
        assert_eq!(s.switch_times(), vec![20]);
        assert!(SwitchingSchedule::new(vec![Segment { start: 1, mode: 0 }], 5).is_err());
        assert!(SwitchingSchedule::new(
            vec![Segment { start: 0, mode: 0 }, Segment { start: 3, mode: 0 }],
            5
        )
        .is_err());
    }

    #[test]
    fn degenerate_schedules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(generate_dwell_schedule(1, 15, 100, &mut rng).unwrap().segments().len(), 1);
        assert_eq!(generate_dwell_schedule(3, 100, 100, &mut rng).unwrap().segments().len(), 1);
    }

    #[test]
    fn dwell_schedules_over_many_seeds() {
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_dwell_schedule(2, 15, 100, &mut rng).unwrap();
            assert!(s.min_gap().is_none_or(|g| g >= 15));
            for p in s.segments().windows(2) {
                assert_ne!(p[0].mode, p[1].mode);
            }
        }
    }

    #[test]
    fn plant_numbers_faulted_modes() {
        let faults = vec![
            FaultEvent {
                kind: FaultKind::AdditiveStateFault { beta: 0.1, d: d404() },
                start: 0,
                end: Some(5),
            },
            FaultEvent {
                kind: FaultKind::ActuatorOutage { column: 0 },
                start: 8,
                end: None,
            },
        ];
        let plant = SwitchedPlant::new(vec![f404()], SwitchingSchedule::constant(0, 12), faults).unwrap();
        assert_eq!(plant.effective_modes().len(), 3);
        assert_eq!(plant.mode_index(0), 1);
        assert_eq!(plant.mode_index(5), 0);
        assert_eq!(plant.mode_index(9), 2);
        assert_eq!(plant.regime_boundaries(), vec![5, 8]);
        assert_eq!(plant.event_starts(), vec![0, 5, 8]);
        assert_eq!(plant.modes_in_use(), vec![0, 1, 2]);
    }

    #[test]
    fn single_mode_loop_matches_lti_closed_loop() {
        let md = f18_1();
        let plant = SwitchedPlant::new(vec![md.clone()], SwitchingSchedule::constant(0, 50), vec![]).unwrap();
        let w = open_loop_experiment(&md, &DVector::from_vec(vec![1.0, 0.5]), 0.3, 15, 9).unwrap();
        let delta = 0.001;
        let mut ex = Exciter::new(ExcitationPolicy {
            delta,
            mode: PolicyMode::RandomThenGuarded,
            rng_seed: 1,
        })
        .unwrap();
        let out = run_online_loop(&plant, w, &mut ex, &SolverOptions::default(), &LoopSettings::default(), 50);
        assert!(out.error.is_none(), "{:?}", out.error);
        assert_eq!(out.trace.len(), 50);
        let lqr = dare_lqr(&md.a, &md.b).unwrap();
        let bnorm = spectral_norm(&md.b);
        for r in &out.trace {
            assert_eq!(r.status, SolverStatus::Optimal);
            assert!(r.pe_ok && r.rank_ok);
            let err = (&r.gain - &lqr.k).norm() / lqr.k.norm();
            assert!(err <= 1e-4, "k={} err={err}", r.k);
            // One-step deviation from the fixed-gain LTI loop is the ε term.
            let lti = (&md.a + &md.b * &lqr.k) * &r.x;
            let actual = plant_step(&md, &r.x, &r.u).unwrap();
            let slack = delta * bnorm * r.norm_x()
                + spectral_norm(&md.b) * spectral_norm(&(&r.gain - &lqr.k)) * r.norm_x();
            assert!((actual - lti).norm() <= slack + 1e-15);
        }
        assert!(out.final_state.norm() < out.trace[0].norm_x());
    }

    proptest! {
        #[test]
        fn dwell_schedule_respects_gap(seed in any::<u64>(), modes in 2usize..5, dwell in 1usize..30,
                                       horizon in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = generate_dwell_schedule(modes, dwell, horizon, &mut rng).unwrap();
            prop_assert_eq!(s.segments()[0].start, 0);
            for p in s.segments().windows(2) {
                prop_assert!(p[1].start - p[0].start >= dwell);
                prop_assert!(p[1].mode != p[0].mode);
                prop_assert!(p[1].mode < modes);
            }
        }
    }
}
