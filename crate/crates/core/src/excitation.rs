//! Persistence of excitation checks and selection of the auxiliary input.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_window::{build_hankel, excitation_length, numerical_rank, DataWindow, RankTol};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Sweep the fixed candidate list, `0` first.
    Guarded,
    /// One uniform draw from the cube, then the sweep if it fails.
    #[default]
    RandomThenGuarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationPolicy {
    pub delta: f64,
    pub mode: PolicyMode,
    pub rng_seed: u64,
}

impl ExcitationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Parameter(format!(
                "excitation delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Which perturbation ended up in `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateUsed {
    Random,
    Index(usize),
    /// `x = 0`: nothing to excite, no check performed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub pe_order_checked: usize,
    pub suffix_rank: usize,
    pub target_rank: usize,
    pub candidate_used: CandidateUsed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub u: DVector<f64>,
    pub eps: DVector<f64>,
    pub report: ExcitationReport,
}

/// True iff the order-`order` Hankel matrix of `signal` has rank `m * order`.
pub fn is_persistently_exciting(signal: &[DVector<f64>], order: usize) -> Result<bool> {
    let m = signal.first().map(|z| z.len()).unwrap_or(1);
    let needed = (m + 1) * order - 1;
    if signal.len() < needed {
        return Err(Error::SequenceTooShort {
            len: signal.len(),
            order,
            needed,
        });
    }
    let h = build_hankel(signal, order)?;
    Ok(numerical_rank(&h.entries, RankTol::Auto) == m * order)
}

/// `[0, δe_1, …, δe_m, −δe_1, …, −δe_m]`
pub fn epsilon_candidates(delta: f64, m: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(2 * m + 1);
    out.push(DVector::zeros(m));
    for sign in [1.0, -1.0] {
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = sign * delta;
            out.push(e);
        }
    }
    out
}

/// Policy plus its random stream.
#[derive(Debug, Clone)]
pub struct Exciter {
    policy: ExcitationPolicy,
    rng: ChaCha8Rng,
}

impl Exciter {
    pub fn new(policy: ExcitationPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(policy.rng_seed),
        })
    }

    pub fn policy(&self) -> &ExcitationPolicy {
        &self.policy
    }

    fn draw(&mut self, m: usize) -> DVector<f64> {
        let d = self.policy.delta;
        let mut e = DVector::from_fn(m, |_, _| self.rng.random_range(-d..=d));
        let norm = e.norm();
        if norm > d {
            e *= d / norm;
        }
        e
    }

    /// Picks `u = K x + ε |x|` so that the length-N input suffix stays
    /// persistently exciting of order `n + 1` once `u` is appended.
    pub fn select_input(
        &mut self,
        window: &DataWindow,
        gain: &DMatrix<f64>,
        x: &DVector<f64>,
    ) -> Result<Selection> {
        let (n, m) = (window.state_dim(), window.input_dim());
        if gain.shape() != (m, n) {
            return Err(Error::dims(
                "feedback gain",
                format!("{m}x{n}"),
                format!("{}x{}", gain.nrows(), gain.ncols()),
            ));
        }
        if x.len() != n {
            return Err(Error::dims("state", n, x.len()));
        }
        let order = n + 1;
        let target = m * order;
        let len = excitation_length(n, m);
        let mut suffix = window.input_suffix(len - 1);
        let rank_with = |suffix: &mut Vec<DVector<f64>>, u: &DVector<f64>| -> Result<usize> {
            suffix.push(u.clone());
            let h = build_hankel(suffix, order);
            suffix.pop();
            Ok(numerical_rank(&h?.entries, RankTol::Auto))
        };

        let xnorm = x.norm();
        let feedback = gain * x;
        if xnorm == 0.0 {
            let u = DVector::zeros(m);
            let suffix_rank = rank_with(&mut suffix, &u)?;
            return Ok(Selection {
                u,
                eps: DVector::zeros(m),
                report: ExcitationReport {
                    pe_order_checked: order,
                    suffix_rank,
                    target_rank: target,
                    candidate_used: CandidateUsed::Skipped,
                },
            });
        }

        let report = |rank, used| ExcitationReport {
            pe_order_checked: order,
            suffix_rank: rank,
            target_rank: target,
            candidate_used: used,
        };

        if self.policy.mode == PolicyMode::RandomThenGuarded {
            let eps = self.draw(m);
            let u = &feedback + &eps * xnorm;
            let r = rank_with(&mut suffix, &u)?;
            if r == target {
                return Ok(Selection {
                    u,
                    eps,
                    report: report(r, CandidateUsed::Random),
                });
            }
        }
        let mut best = 0;
        for (i, eps) in epsilon_candidates(self.policy.delta, m).into_iter().enumerate() {
            let u = &feedback + &eps * xnorm;
            let r = rank_with(&mut suffix, &u)?;
            if r == target {
                return Ok(Selection {
                    u,
                    eps,
                    report: report(r, CandidateUsed::Index(i)),
                });
            }
            best = best.max(r);
        }
        Err(Error::ExcitationFailure {
            k: window.current_time(),
            best_rank: best,
            target,
        })
    }
}

/// Rank of the order-`n+1` Hankel matrix of the window's last `N` inputs.
pub fn suffix_rank(window: &DataWindow) -> usize {
    let (n, m) = (window.state_dim(), window.input_dim());
    let suffix = window.input_suffix(excitation_length(n, m));
    build_hankel(&suffix, n + 1)
        .map(|h| numerical_rank(&h.entries, RankTol::Auto))
        .unwrap_or(0)
}

/// Rank of the order-`n+1` Hankel matrix of all `T` window inputs.
pub fn window_input_rank(window: &DataWindow) -> usize {
    let n = window.state_dim();
    let all: Vec<_> = window.inputs().cloned().collect();
    build_hankel(&all, n + 1)
        .map(|h| numerical_rank(&h.entries, RankTol::Auto))
        .unwrap_or(0)
}
