//! Data-driven LQR program on a window, plus model-based oracles.

use ddsw_sdp::{ConicProblem, LmiBlock, Sense, Settings, Status};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data_window::{DataWindow, RankTol};
use crate::error::{Error, Result};
use crate::linalg::{pinv, spectral_radius, stein, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    NumericalTrouble,
}

impl SolverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::NumericalTrouble => "numerical_trouble",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualityHandling {
    #[default]
    LinearEquality,
    /// `|a·x - b| <= feasibility_tol` as two inequality rows.
    TwoSidedInequality,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub equality_handling: EqualityHandling,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            equality_handling: EqualityHandling::LinearEquality,
            max_iterations: 100,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.feasibility_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "feasibility_tol must be positive, got {}",
                self.feasibility_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Constraint violations re-evaluated on the returned tuple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// `λ_max([[I-P, X_k Q], [.., -P]])`, clipped at 0
    pub decrease_block: f64,
    /// `-λ_min([[L, U Q], [.., P]])`, clipped at 0
    pub cost_block: f64,
    /// `max |X_{k-1} Q - P|`
    pub equality: f64,
    /// `tr P + tr L - γ`, clipped at 0
    pub trace: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.decrease_block
            .max(self.cost_block)
            .max(self.equality)
            .max(self.trace)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub gamma: f64,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub status: SolverStatus,
    pub residuals: Residuals,
    pub iterations: usize,
}

/// Variable numbering of the program: `γ`, then `Q` row-major, then the
/// upper triangles of `P` and `L` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdpLayout {
    pub n: usize,
    pub m: usize,
    pub t: usize,
}

impl SdpLayout {
    pub fn gamma(&self) -> usize {
        0
    }

    pub fn q(&self, row: usize, col: usize) -> usize {
        1 + row * self.n + col
    }

    pub fn p(&self, i: usize, j: usize) -> usize {
        1 + self.t * self.n + tri_offset(self.n, i, j)
    }

    pub fn l(&self, i: usize, j: usize) -> usize {
        1 + self.t * self.n + self.n * (self.n + 1) / 2 + tri_offset(self.m, i, j)
    }

    pub fn num_variables(&self) -> usize {
        1 + self.t * self.n + self.n * (self.n + 1) / 2 + self.m * (self.m + 1) / 2
    }
}

/// Row-major position of `(min, max)` in an upper triangle of size `dim`.
fn tri_offset(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

fn encode(
    u: &DMatrix<f64>,
    xp: &DMatrix<f64>,
    xn: &DMatrix<f64>,
    opts: &SolverOptions,
) -> (ConicProblem, SdpLayout) {
    let (m, t) = u.shape();
    let n = xp.nrows();
    let lay = SdpLayout { n, m, t };
    let mut prob = ConicProblem::new();
    prob.add_variable("gamma");
    for r in 0..t {
        for c in 0..n {
            prob.add_variable(format!("Q[{r},{c}]"));
        }
    }
    for i in 0..n {
        for j in i..n {
            prob.add_variable(format!("P[{i},{j}]"));
        }
    }
    for i in 0..m {
        for j in i..m {
            prob.add_variable(format!("L[{i},{j}]"));
        }
    }
    prob.set_objective(lay.gamma(), 1.0);

    // [[I - P, X_k Q], [Qᵀ X_kᵀ, -P]] ⪯ 0
    let mut dec = LmiBlock::new("decrease", Sense::Nsd, 2 * n);
    for i in 0..n {
        dec.add_constant(i, i, 1.0);
        for j in i..n {
            dec.add_entry(lay.p(i, j), i, j, -1.0);
            dec.add_entry(lay.p(i, j), n + i, n + j, -1.0);
        }
    }
    for i in 0..n {
        for r in 0..t {
            let a = xn[(i, r)];
            if a != 0.0 {
                for c in 0..n {
                    dec.add_entry(lay.q(r, c), i, n + c, a);
                }
            }
        }
    }
    prob.add_lmi(dec);

    // [[L, U Q], [Qᵀ Uᵀ, P]] ⪰ 0
    let mut cost = LmiBlock::new("cost", Sense::Psd, m + n);
    for i in 0..m {
        for j in i..m {
            cost.add_entry(lay.l(i, j), i, j, 1.0);
        }
    }
    for i in 0..n {
        for j in i..n {
            cost.add_entry(lay.p(i, j), m + i, m + j, 1.0);
        }
    }
    for i in 0..m {
        for r in 0..t {
            let a = u[(i, r)];
            if a != 0.0 {
                for c in 0..n {
                    cost.add_entry(lay.q(r, c), i, m + c, a);
                }
            }
        }
    }
    prob.add_lmi(cost);

    // X_{k-1} Q = P
    for i in 0..n {
        for c in 0..n {
            let mut row: Vec<(usize, f64)> = (0..t)
                .filter(|r| xp[(i, *r)] != 0.0)
                .map(|r| (lay.q(r, c), xp[(i, r)]))
                .collect();
            row.push((lay.p(i, c), -1.0));
            let name = format!("XQ=P[{i},{c}]");
            match opts.equality_handling {
                EqualityHandling::LinearEquality => prob.add_equality(name, row, 0.0),
                EqualityHandling::TwoSidedInequality => {
                    let neg = row.iter().map(|(v, a)| (*v, -a)).collect();
                    prob.add_inequality(format!("{name}+"), row, opts.feasibility_tol);
                    prob.add_inequality(format!("{name}-"), neg, opts.feasibility_tol);
                }
            }
        }
    }

    // tr P + tr L <= γ
    let mut tr: Vec<(usize, f64)> = (0..n).map(|i| (lay.p(i, i), 1.0)).collect();
    tr.extend((0..m).map(|i| (lay.l(i, i), 1.0)));
    tr.push((lay.gamma(), -1.0));
    prob.add_inequality("trace", tr, 0.0);
    (prob, lay)
}

/// Conic program for the window's raw data (useful for the text dump).
pub fn build_sdp(window: &DataWindow, opts: &SolverOptions) -> (ConicProblem, SdpLayout) {
    encode(&window.u_prev(), &window.x_prev(), &window.x_next(), opts)
}

fn unpack_sym(x: &[f64], dim: usize, index: impl Fn(usize, usize) -> usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| x[index(i, j)])
}

/// Re-evaluates every constraint of the program at `(γ, Q, P, L)`.
pub fn constraint_residuals(
    window: &DataWindow,
    gamma: f64,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> Residuals {
    let (n, m) = (window.state_dim(), window.input_dim());
    let xq = window.x_next() * q;
    let uq = window.u_prev() * q;
    let mut dec = DMatrix::zeros(2 * n, 2 * n);
    dec.view_mut((0, 0), (n, n))
        .copy_from(&(DMatrix::identity(n, n) - p));
    dec.view_mut((0, n), (n, n)).copy_from(&xq);
    dec.view_mut((n, 0), (n, n)).copy_from(&xq.transpose());
    dec.view_mut((n, n), (n, n)).copy_from(&(-p));
    let mut cost = DMatrix::zeros(m + n, m + n);
    cost.view_mut((0, 0), (m, m)).copy_from(l);
    cost.view_mut((0, m), (m, n)).copy_from(&uq);
    cost.view_mut((m, 0), (n, m)).copy_from(&uq.transpose());
    cost.view_mut((m, m), (n, n)).copy_from(p);
    let dec_max = SymmetricEigen::new(symmetrize(&dec)).eigenvalues.max();
    let cost_min = SymmetricEigen::new(symmetrize(&cost)).eigenvalues.min();
    let eq = (window.x_prev() * q - p).abs().max();
    Residuals {
        decrease_block: dec_max.max(0.0),
        cost_block: (-cost_min).max(0.0),
        equality: eq,
        trace: (p.trace() + l.trace() - gamma).max(0.0),
    }
}

/// Solves the data-driven LQR program on the window and extracts
/// `K = U_{k-1} Q P⁻¹`.
///
/// Each time column of the stacked data is scaled to unit norm before the
/// program is built. This is an exact change of variables on `Q` that keeps
/// the program well conditioned when the state has decayed by orders of
/// magnitude.
pub fn solve_dd_lqr(window: &DataWindow, opts: &SolverOptions) -> SdpSolution {
    let (n, m, t) = (window.state_dim(), window.input_dim(), window.len());
    let (u, xp, xn) = (window.u_prev(), window.x_prev(), window.x_next());
    let scale: Vec<f64> = (0..t)
        .map(|c| {
            let s = (u.column(c).norm_squared()
                + xp.column(c).norm_squared()
                + xn.column(c).norm_squared())
            .sqrt();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        })
        .collect();
    let scaled = |d: &DMatrix<f64>| DMatrix::from_fn(d.nrows(), t, |r, c| d[(r, c)] * scale[c]);
    let (prob, lay) = encode(&scaled(&u), &scaled(&xp), &scaled(&xn), opts);
    let settings = Settings {
        max_iterations: opts.max_iterations,
        ..Settings::default()
    };
    let sol = ddsw_sdp::solve(&prob, &settings);
    let x = &sol.x;
    let gamma = x[lay.gamma()];
    let q = DMatrix::from_fn(t, n, |r, c| x[lay.q(r, c)] * scale[r]);
    let p = unpack_sym(x, n, |i, j| lay.p(i, j));
    let l = unpack_sym(x, m, |i, j| lay.l(i, j));
    let k = match p.clone().try_inverse() {
        Some(pi) => &u * &q * pi,
        None => DMatrix::zeros(m, n),
    };
    let residuals = constraint_residuals(window, gamma, &q, &p, &l);
    let status = match sol.status {
        Status::Optimal if residuals.max() <= opts.feasibility_tol && k.iter().all(|v| v.is_finite()) => {
            SolverStatus::Optimal
        }
        Status::Infeasible => SolverStatus::Infeasible,
        _ => SolverStatus::NumericalTrouble,
    };
    SdpSolution {
        gamma,
        q,
        p,
        l,
        k,
        status,
        residuals,
        iterations: sol.iterations,
    }
}

/// Stabilizing DARE solution with unit weights and the optimal gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Lqr {
    pub k: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub iterations: usize,
}

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;

fn riccati_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let m = b.ncols();
    let bts = b.transpose() * s;
    let r = DMatrix::identity(m, m) + &bts * b;
    let rhs = &bts * a;
    match r.clone().cholesky() {
        Some(ch) => -ch.solve(&rhs),
        None => -r.lu().solve(&rhs).unwrap_or_else(|| DMatrix::zeros(m, a.ncols())),
    }
}

/// Iterates `S ← AᵀSA − AᵀSB(I+BᵀSB)⁻¹BᵀSA + I` from `S = I`.
pub fn dare_lqr(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Lqr> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims("A", format!("{n}x{n}"), format!("{n}x{}", a.ncols())));
    }
    if b.nrows() != n {
        return Err(Error::dims("B rows", n, b.nrows()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut s = eye.clone();
    let mut change = f64::INFINITY;
    for it in 1..=DARE_MAX_ITER {
        let k = riccati_gain(a, b, &s);
        // Equivalent form (A+BK)ᵀ S (A+BK) + KᵀK + I keeps S symmetric PSD.
        let acl = a + b * &k;
        let next = symmetrize(&(acl.transpose() * &s * &acl + k.transpose() * &k + &eye));
        change = (&next - &s).norm() / next.norm();
        s = next;
        if !change.is_finite() || s.norm() > 1e300 {
            break;
        }
        if change <= DARE_TOL {
            let k = riccati_gain(a, b, &s);
            let radius = spectral_radius(&(a + b * &k));
            if radius >= 1.0 {
                return Err(Error::Unstable { radius });
            }
            return Ok(Lqr { k, s, iterations: it });
        }
    }
    Err(Error::RiccatiDivergence {
        iterations: DARE_MAX_ITER,
        change,
    })
}

/// `tr P + tr(K P Kᵀ)` with `(A+BK) P (A+BK)ᵀ − P + I = 0`.
pub fn closed_loop_h2_cost(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    let acl = a + b * k;
    let p = stein(&acl, &DMatrix::identity(a.nrows(), a.nrows()))?;
    Ok(p.trace() + (k * &p * k.transpose()).trace())
}

/// `[B̂ Â] = X_k [U; X_{k-1}]†`
pub fn least_squares_id(window: &DataWindow) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (window.state_dim(), window.input_dim());
    let rank = window.stacked_rank(RankTol::Auto);
    if rank < m + n {
        return Err(Error::RankDeficient {
            rank,
            required: m + n,
        });
    }
    let ba = window.x_next() * pinv(&window.stacked());
    let b = ba.columns(0, m).clone_owned();
    let a = ba.columns(m, n).clone_owned();
    Ok((a, b))
}
