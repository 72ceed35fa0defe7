//! Stability constants computed from the true mode matrices, and the
//! explicit feasible point of the data-driven program during transients.
//!
//! Nothing here is used by the online controller.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::data_window::{excitation_length, numerical_rank, DataWindow, RankTol};
use crate::dd_lqr::{closed_loop_h2_cost, constraint_residuals, dare_lqr, Residuals};
use crate::error::{Error, Result};
use crate::linalg::{pinv, spectral_norm, stein};
use crate::plant::LinearMode;

/// `P` with `A_clᵀ P A_cl − P + I = 0`.
pub fn discrete_lyapunov(a_cl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    stein(&a_cl.transpose(), &DMatrix::identity(n, n))
}

/// `P` with `A_cl P A_clᵀ − P + I = 0` (the H2 cost orientation).
pub fn h2_gramian(a_cl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    stein(a_cl, &DMatrix::identity(n, n))
}

fn eig_range(p: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(p.clone()).eigenvalues;
    (e.min(), e.max())
}

/// Per-mode pieces of the gain bound.
#[derive(Debug, Clone, Serialize)]
pub struct ModeGain {
    pub label: String,
    #[serde(serialize_with = "crate::linalg::ser_rows")]
    pub k_opt: DMatrix<f64>,
    /// Solution of `A_cl P A_clᵀ − P + I = 0`.
    #[serde(serialize_with = "crate::linalg::ser_rows")]
    pub p_h2: DMatrix<f64>,
    pub gamma: f64,
    /// `sqrt(gamma - n)`
    pub c: f64,
}

/// Optimal gains and `κ = max_i sqrt(γ_i − n)`.
pub fn kappa_bound(modes: &[LinearMode]) -> Result<(f64, Vec<ModeGain>)> {
    let mut out = Vec::with_capacity(modes.len());
    let mut kappa: f64 = 0.0;
    for md in modes {
        let lqr = dare_lqr(&md.a, &md.b)?;
        let acl = &md.a + &md.b * &lqr.k;
        let p = h2_gramian(&acl)?;
        let l = &lqr.k * &p * lqr.k.transpose();
        let gamma = p.trace() + l.trace();
        let c = (gamma - md.n() as f64).max(0.0).sqrt();
        kappa = kappa.max(c);
        out.push(ModeGain {
            label: md.label.clone(),
            k_opt: lqr.k,
            p_h2: p,
            gamma,
            c,
        });
    }
    Ok((kappa, out))
}

/// Per-mode quantities of the excitation radius bound.
#[derive(Debug, Clone, Serialize)]
pub struct ModeLyapunov {
    pub label: String,
    /// Solution of `A_clᵀ P A_cl − P + I = 0`.
    #[serde(serialize_with = "crate::linalg::ser_rows")]
    pub p: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm_acl: f64,
    /// `+inf` when `B = 0`.
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaBar {
    pub delta_bar: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub modes: Vec<ModeLyapunov>,
}

/// Positive root of `λ̄‖B‖²ε² + 2λ̄‖A_cl‖‖B‖ε − 1/2`.
pub fn delta_root(lambda_bar: f64, norm_acl: f64, norm_b: f64) -> f64 {
    if norm_b == 0.0 {
        return f64::INFINITY;
    }
    let la = lambda_bar * norm_acl;
    (-la + (la * la + lambda_bar / 2.0).sqrt()) / (lambda_bar * norm_b)
}

/// `ψ(ε) = λ̄‖B‖²ε² + 2λ̄‖A_cl‖‖B‖ε − 1/2`
pub fn psi(lambda_bar: f64, norm_acl: f64, norm_b: f64, eps: f64) -> f64 {
    lambda_bar * norm_b * norm_b * eps * eps + 2.0 * lambda_bar * norm_acl * norm_b * eps - 0.5
}

pub fn delta_bar(modes: &[LinearMode], gains: &[DMatrix<f64>]) -> Result<DeltaBar> {
    if modes.len() != gains.len() || modes.is_empty() {
        return Err(Error::dims("gains", modes.len(), gains.len()));
    }
    let mut per = Vec::with_capacity(modes.len());
    let (mut lmax, mut lmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for (md, k) in modes.iter().zip(gains) {
        let acl = &md.a + &md.b * k;
        let p = discrete_lyapunov(&acl)?;
        let (lo, hi) = eig_range(&p);
        lmax = lmax.max(hi);
        lmin = lmin.min(lo);
        per.push(ModeLyapunov {
            label: md.label.clone(),
            p,
            lambda_min: lo,
            lambda_max: hi,
            norm_a: spectral_norm(&md.a),
            norm_b: spectral_norm(&md.b),
            norm_acl: spectral_norm(&acl),
            delta: 0.0,
        });
    }
    let mut db = f64::INFINITY;
    for m in &mut per {
        m.delta = delta_root(lmax, m.norm_acl, m.norm_b);
        db = db.min(m.delta);
    }
    Ok(DeltaBar {
        delta_bar: db,
        lambda_max: lmax,
        lambda_min: lmin,
        modes: per,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DwellBound {
    pub tau_bar: f64,
    pub alpha: f64,
    pub phi: f64,
    pub c0: f64,
    pub c: f64,
    pub mu: f64,
    pub lambda: f64,
}

/// `α = sqrt((λ̄ − 1/2)/λ̄)`
pub fn alpha_of(lambda_bar: f64) -> f64 {
    ((lambda_bar - 0.5) / lambda_bar).sqrt()
}

/// Dwell-time bound and its ingredients. `lambda = None` picks `(1+α)/2`.
pub fn tau_bar(
    modes: &[LinearMode],
    kappa: f64,
    lyap: &DeltaBar,
    delta: f64,
    t: usize,
    lambda: Option<f64>,
) -> Result<DwellBound> {
    let alpha = alpha_of(lyap.lambda_max);
    let lambda = lambda.unwrap_or((1.0 + alpha) / 2.0);
    if !(lambda > alpha && lambda < 1.0) {
        return Err(Error::Parameter(format!(
            "decay rate lambda = {lambda} must satisfy alpha = {alpha} < lambda < 1"
        )));
    }
    let phi = (lyap.lambda_max / lyap.lambda_min).sqrt();
    let c0 = modes
        .iter()
        .map(|m| spectral_norm(&m.a) + spectral_norm(&m.b) * (kappa + delta))
        .fold(f64::NEG_INFINITY, f64::max);
    let c = c0.max(1.0);
    let mu = phi * (c / alpha).powi(t as i32);
    let tau = mu.ln() / (lambda / alpha).ln();
    Ok(DwellBound {
        tau_bar: tau,
        alpha,
        phi,
        c0,
        c,
        mu,
        lambda,
    })
}

/// Every constant of the gain, growth and dwell-time bounds.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityConstants {
    pub n: usize,
    pub window_length: usize,
    pub delta: f64,
    pub gains: Vec<ModeGain>,
    pub lyapunov: DeltaBar,
    pub kappa: f64,
    pub dwell: DwellBound,
    /// `delta <= delta_bar`
    pub delta_admissible: bool,
}

impl StabilityConstants {
    pub fn compute(modes: &[LinearMode], delta: f64, t: usize, lambda: Option<f64>) -> Result<Self> {
        let (kappa, gains) = kappa_bound(modes)?;
        let ks: Vec<_> = gains.iter().map(|g| g.k_opt.clone()).collect();
        let lyap = delta_bar(modes, &ks)?;
        let dwell = tau_bar(modes, kappa, &lyap, delta, t, lambda)?;
        Ok(Self {
            n: modes[0].n(),
            window_length: t,
            delta,
            delta_admissible: delta <= lyap.delta_bar,
            gains,
            lyapunov: lyap,
            kappa,
            dwell,
        })
    }

    /// Largest `|γ_i − H2cost(K_opt^i)|` (a consistency check of the two
    /// routes to the optimal cost).
    pub fn gamma_consistency(&self, modes: &[LinearMode]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (md, g) in modes.iter().zip(&self.gains) {
            let cost = closed_loop_h2_cost(&md.a, &md.b, &g.k_opt)?;
            worst = worst.max((cost - g.gamma).abs());
        }
        Ok(worst)
    }
}

/// Which side of the split the tuple was built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TupleBranch {
    /// `t <= T0`: old-mode gain, new-mode columns zeroed.
    OldMode,
    /// `t > T0`: new-mode gain, old-mode columns zeroed.
    NewMode,
}

#[derive(Debug, Clone)]
pub struct FeasibilityTuple {
    pub gamma: f64,
    pub y: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Diagonal `T×T` selector of the last `t` columns.
    pub e: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// `(X_k − A_z X_{k−1} − B_z U_{k−1}) Y`
    pub sigma: DMatrix<f64>,
    pub t: usize,
    pub t0: usize,
    pub branch: TupleBranch,
    pub residuals: Residuals,
}

/// Builds the explicit feasible point of the program for a window that
/// straddles a switch at `k_s` (window ends at `k`, `t = k − k_s`).
pub fn build_feasibility_tuple(
    window: &DataWindow,
    old_mode: &LinearMode,
    new_mode: &LinearMode,
    k: i64,
    k_s: i64,
    t0: Option<usize>,
) -> Result<FeasibilityTuple> {
    let (n, m, tl) = (window.state_dim(), window.input_dim(), window.len());
    let big_n = excitation_length(n, m);
    let t0 = t0.unwrap_or(big_n - 1);
    if t0 + 1 < big_n || t0 + big_n > tl + 1 {
        return Err(Error::Parameter(format!(
            "split point T0 = {t0} outside [{}, {}]",
            big_n - 1,
            tl + 1 - big_n
        )));
    }
    let t = k - k_s;
    if t < 1 || t >= tl as i64 {
        return Err(Error::Parameter(format!(
            "step {k} is not in the transient interval after the switch at {k_s}"
        )));
    }
    let t = t as usize;
    let (branch, z) = if t <= t0 {
        (TupleBranch::OldMode, old_mode)
    } else {
        (TupleBranch::NewMode, new_mode)
    };

    let w = window.stacked();
    if numerical_rank(&w, RankTol::Auto) < m + n {
        return Err(Error::Construction(
            "window data [U; X] lack full row rank".into(),
        ));
    }
    let lqr = dare_lqr(&z.a, &z.b)?;
    let kz = lqr.k;
    let acl = &z.a + &z.b * &kz;
    let p = h2_gramian(&acl)?;
    let mut ki = DMatrix::zeros(m + n, n);
    ki.rows_mut(0, m).copy_from(&kz);
    ki.rows_mut(m, n).copy_from(&DMatrix::identity(n, n));
    let q = pinv(&w) * &ki * &p;

    let split = tl - t;
    let w1 = w.columns(0, split).clone_owned();
    let w2 = w.columns(split, t).clone_owned();
    let q1 = q.rows(0, split).clone_owned();
    let q2 = q.rows(split, t).clone_owned();
    let need_rank = |blk: &DMatrix<f64>, name: &str| -> Result<()> {
        let r = numerical_rank(blk, RankTol::Auto);
        if r < m + n {
            return Err(Error::Construction(format!(
                "partition block {name} has rank {r} < {}",
                m + n
            )));
        }
        Ok(())
    };
    let mut s = DMatrix::zeros(tl, n);
    match branch {
        TupleBranch::OldMode => {
            need_rank(&w1, "W1")?;
            s.rows_mut(0, split).copy_from(&(pinv(&w1) * &w2 * &q2));
            s.rows_mut(split, t).copy_from(&(-&q2));
        }
        TupleBranch::NewMode => {
            need_rank(&w2, "W2")?;
            s.rows_mut(0, split).copy_from(&(-&q1));
            s.rows_mut(split, t).copy_from(&(pinv(&w2) * &w1 * &q1));
        }
    }
    let y = &q + &s;
    let l = &kz * &p * kz.transpose();
    let gamma = p.trace() + l.trace();
    let mismatch = window.x_next() - &z.a * window.x_prev() - &z.b * window.u_prev();
    let sigma = mismatch * &y;
    let e = DMatrix::from_fn(tl, tl, |r, c| if r == c && r >= split { 1.0 } else { 0.0 });
    let residuals = constraint_residuals(window, gamma, &y, &p, &l);
    Ok(FeasibilityTuple {
        gamma,
        y,
        p,
        l,
        k: kz,
        w,
        e,
        q,
        s,
        sigma,
        t,
        t0,
        branch,
        residuals,
    })
}
