//! Primal-dual path-following method (HKM direction, Mehrotra
//! predictor-corrector) for problems of the form
//!
//! ```text
//! minimize    c·w
//! subject to  Z = F0 + sum_i w_i F_i ⪰ 0     (block diagonal)
//! ```
//!
//! whose conic dual is `maximize -<F0, X>` s.t. `<F_i, X> = c_i`, `X ⪰ 0`.
//!
//! A [`ConicProblem`] is brought into this form by eliminating the equality
//! rows through a null-space parametrization, turning `<=` rows into 1×1
//! blocks, and dropping every direction that leaves all constraints
//! unchanged. The last step keeps the Schur complement nonsingular when the
//! problem has redundant variables.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use crate::problem::ConicProblem;

/// Termination status reported by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// No point satisfies the constraints.
    Infeasible,
    /// The objective decreases without bound.
    Unbounded,
    MaxIterations,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub max_iterations: usize,
    /// Relative primal/dual residual target.
    pub feasibility_tol: f64,
    /// Relative duality gap target.
    pub gap_tol: f64,
    /// Relative singular value threshold below which a direction of the
    /// constraint map is treated as absent.
    pub reduction_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            feasibility_tol: 1e-9,
            gap_tol: 1e-10,
            reduction_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    /// Values of the original problem variables.
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Number of free directions left after eliminating equalities and
    /// redundant variables.
    pub reduced_dimension: usize,
}

impl Solution {
    fn failed(status: Status, nv: usize) -> Self {
        Self {
            status,
            x: vec![0.0; nv],
            objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
            reduced_dimension: 0,
        }
    }
}

/// Full right-singular basis of `a` (rows × cols) split by the threshold:
/// returns `(range basis, kernel basis, singular values of range)`.
fn split_row_space(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), Vec::new());
    }
    // Pad to at least square so the thin SVD yields a complete basis.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma = svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cut = rel_tol * smax;
    let mut keep = Vec::new();
    let mut drop = Vec::new();
    for (i, s) in sigma.iter().enumerate() {
        if smax > 0.0 && *s > cut {
            keep.push(i);
        } else {
            drop.push(i);
        }
    }
    let range = DMatrix::from_fn(cols, keep.len(), |r, c| v_t[(keep[c], r)]);
    let kernel = DMatrix::from_fn(cols, drop.len(), |r, c| v_t[(drop[c], r)]);
    let kept_sigma = keep.iter().map(|&i| sigma[i]).collect();
    (range, kernel, kept_sigma)
}

/// Standard-form data: per variable, the list of `(block, coefficient)`
/// pairs that are not identically zero.
struct Standard {
    sizes: Vec<usize>,
    f0: Vec<DMatrix<f64>>,
    f: Vec<Vec<(usize, DMatrix<f64>)>>,
    c: DVector<f64>,
}

impl Standard {
    fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn affine(&self, w: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out = self.f0.clone();
        for (i, terms) in self.f.iter().enumerate() {
            for (b, m) in terms {
                out[*b] += m * w[i];
            }
        }
        out
    }

    fn adjoint(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_fn(self.f.len(), |i, _| {
            self.f[i].iter().map(|(b, m)| m.dot(&x[*b])).sum()
        })
    }
}

/// Solves `problem`; never panics on numerical failure.
pub fn solve(problem: &ConicProblem, settings: &Settings) -> Solution {
    let nv = problem.num_variables();
    let c_full = DVector::from_column_slice(&problem.objective);

    // Equalities: x = x0 + N z.
    let (x0, null_basis) = if problem.equalities.is_empty() {
        (DVector::zeros(nv), DMatrix::identity(nv, nv))
    } else {
        let p = problem.equalities.len();
        let mut a = DMatrix::zeros(p, nv);
        let mut b = DVector::zeros(p);
        for (r, row) in problem.equalities.iter().enumerate() {
            for (v, coef) in &row.coeffs {
                a[(r, *v)] += coef;
            }
            b[r] = row.rhs;
        }
        let eps_tol = (p.max(nv) as f64) * f64::EPSILON;
        let (range, kernel, sigma) = split_row_space(&a, eps_tol.max(1e-13));
        // x0 = V_r Σ^-1 U_r^T b computed as V_r (A V_r)^+ b without forming U.
        let av = &a * &range;
        let mut x0 = DVector::zeros(nv);
        if range.ncols() > 0 {
            // Columns of A V_r are orthogonal with norms sigma.
            let mut coeffs = DVector::zeros(range.ncols());
            for (j, s) in sigma.iter().enumerate() {
                coeffs[j] = av.column(j).dot(&b) / (s * s);
            }
            x0 = &range * coeffs;
        }
        let resid = (&a * &x0 - &b).amax();
        if resid > 1e-8 * (1.0 + b.amax()) {
            return Solution::failed(Status::Infeasible, nv);
        }
        (x0, kernel)
    };
    let nz = null_basis.ncols();

    // Every constraint as a PSD block in z.
    let mut sizes = Vec::new();
    let mut f0_z: Vec<DMatrix<f64>> = Vec::new();
    let mut fz: Vec<Vec<DMatrix<f64>>> = Vec::new(); // [block][var]
    let x0s = x0.as_slice();
    for lmi in &problem.lmis {
        let (constant, terms) = lmi.as_psd();
        let s = constant.nrows();
        let mut c0 = constant;
        for (v, m) in &terms {
            c0 += m * x0s[*v];
        }
        let mut per_var = vec![DMatrix::zeros(s, s); nz];
        for (v, m) in &terms {
            for (k, slot) in per_var.iter_mut().enumerate() {
                let coef = null_basis[(*v, k)];
                if coef != 0.0 {
                    *slot += m * coef;
                }
            }
        }
        sizes.push(s);
        f0_z.push(c0);
        fz.push(per_var);
    }
    for row in &problem.inequalities {
        // rhs - a·x >= 0
        let c0 = row.rhs - row.evaluate(x0s);
        let mut per_var = vec![DMatrix::zeros(1, 1); nz];
        for (v, a) in &row.coeffs {
            for (k, slot) in per_var.iter_mut().enumerate() {
                slot[(0, 0)] -= a * null_basis[(*v, k)];
            }
        }
        sizes.push(1);
        f0_z.push(DMatrix::from_element(1, 1, c0));
        fz.push(per_var);
    }
    let c_z = null_basis.transpose() * &c_full;
    let c_const = c_full.dot(&x0);

    if sizes.is_empty() {
        // Only equalities: bounded iff the objective is constant on the null space.
        if c_z.amax() > 1e-12 * (1.0 + c_full.amax()) {
            return Solution::failed(Status::Unbounded, nv);
        }
        return Solution {
            status: Status::Optimal,
            x: x0.as_slice().to_vec(),
            objective: c_const,
            dual_objective: c_const,
            iterations: 0,
            reduced_dimension: 0,
        };
    }

    // Remove directions that do not affect any constraint.
    let rows: usize = sizes.iter().map(|s| s * (s + 1) / 2).sum();
    let mut map = DMatrix::zeros(rows, nz);
    for k in 0..nz {
        let mut r = 0;
        for (b, &s) in sizes.iter().enumerate() {
            let m = &fz[b][k];
            for j in 0..s {
                for i in 0..=j {
                    map[(r, k)] = m[(i, j)];
                    r += 1;
                }
            }
        }
    }
    let (reduce, kernel, _) = split_row_space(&map, settings.reduction_tol);
    if kernel.ncols() > 0 {
        let drift = kernel.transpose() * &c_z;
        if drift.amax() > 1e-9 * (1.0 + c_z.amax()) {
            return Solution::failed(Status::Unbounded, nv);
        }
    }
    let nw = reduce.ncols();
    let mut f: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); nw];
    for (i, terms) in f.iter_mut().enumerate() {
        for (b, &s) in sizes.iter().enumerate() {
            let mut m = DMatrix::zeros(s, s);
            for k in 0..nz {
                let coef = reduce[(k, i)];
                if coef != 0.0 {
                    m += &fz[b][k] * coef;
                }
            }
            if m.amax() > 0.0 {
                terms.push((b, m));
            }
        }
    }
    let standard = Standard {
        sizes,
        f0: f0_z,
        f,
        c: reduce.transpose() * &c_z,
    };

    let outcome = path_following(&standard, settings);
    let z = &reduce * &outcome.w;
    let x = &x0 + &null_basis * z;
    Solution {
        status: outcome.status,
        objective: c_full.dot(&x),
        dual_objective: outcome.dual_objective + c_const,
        x: x.as_slice().to_vec(),
        iterations: outcome.iterations,
        reduced_dimension: nw,
    }
}

struct Outcome {
    status: Status,
    w: DVector<f64>,
    dual_objective: f64,
    iterations: usize,
}

fn block_identity(sizes: &[usize], scale: &[f64]) -> Vec<DMatrix<f64>> {
    sizes
        .iter()
        .zip(scale)
        .map(|(&s, &v)| DMatrix::identity(s, s) * v)
        .collect()
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest `alpha` with `x + alpha dx ⪰ 0` (infinite when unconstrained),
/// or `None` if `x` is not positive definite.
fn max_step(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        let chol = Cholesky::new(xb.clone())?;
        let l = chol.l();
        let linv = l.clone().try_inverse()?;
        let mut m = &linv * db * linv.transpose();
        symmetrize(&mut m);
        let lmin = SymmetricEigen::new(m).eigenvalues.min();
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    Some(alpha)
}

fn inverse_blocks(z: &[DMatrix<f64>]) -> Option<Vec<DMatrix<f64>>> {
    z.iter()
        .map(|b| {
            let mut inv = Cholesky::new(b.clone())?.inverse();
            symmetrize(&mut inv);
            Some(inv)
        })
        .collect()
}

/// Tolerance relaxation accepted when the iteration breaks down.
const NEAR_FACTOR: f64 = 1e3;

fn path_following(p: &Standard, settings: &Settings) -> Outcome {
    let nw = p.c.len();
    let nb = p.sizes.len();
    let dim = p.dim() as f64;

    let c_norm = p.c.norm();
    let f0_norm = frob(&p.f0);
    let mut xi = vec![0.0; nb];
    let mut eta = vec![0.0; nb];
    for b in 0..nb {
        let s = p.sizes[b] as f64;
        let mut x_scale = 10.0_f64.max(s.sqrt());
        let mut z_scale = x_scale.max(p.f0[b].norm());
        for (i, terms) in p.f.iter().enumerate() {
            for (bb, m) in terms {
                if *bb == b {
                    let n = m.norm();
                    x_scale = x_scale.max(s * (1.0 + p.c[i].abs()) / (1.0 + n));
                    z_scale = z_scale.max(n);
                }
            }
        }
        xi[b] = x_scale;
        eta[b] = z_scale;
    }
    let mut x = block_identity(&p.sizes, &xi);
    let mut z = block_identity(&p.sizes, &eta);
    let mut w = DVector::zeros(nw);

    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let mut stalls = 0;
    // Best iterate by scaled residual, kept for breakdowns late in the run.
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    for iter in 0..settings.max_iterations {
        iterations = iter;
        let fw = p.affine(&w);
        let rd: Vec<DMatrix<f64>> = fw.iter().zip(&z).map(|(a, b)| a - b).collect();
        let ax = p.adjoint(&x);
        let rp = &p.c - &ax;
        let primal = p.c.dot(&w);
        let dual = -inner(&p.f0, &x);
        let gap = inner(&x, &z);
        let mu = gap / dim;
        let rel_gap = (primal - dual).abs() / (1.0 + primal.abs() + dual.abs());
        let pinf = rp.norm() / (1.0 + c_norm);
        let dinf = frob(&rd) / (1.0 + f0_norm);

        if pinf <= settings.feasibility_tol
            && dinf <= settings.feasibility_tol
            && rel_gap <= settings.gap_tol
        {
            status = Status::Optimal;
            break;
        }
        // Close to the solution the Schur system loses precision and the
        // residuals can drift up again, so the best point seen is remembered.
        let merit = (pinf.max(dinf) / settings.feasibility_tol).max(rel_gap / settings.gap_tol);
        if best.as_ref().is_none_or(|(m, _, _)| merit < *m) {
            best = Some((merit, w.clone(), dual));
        }

        // Certificate that no w makes F(w) ⪰ 0: X ⪰ 0 with <F_i, X> = 0 and <F0, X> < 0.
        let tx: f64 = x.iter().map(|b| b.trace()).sum();
        if tx > 1e8 {
            let scaled = ax / tx;
            if scaled.norm() <= 1e-8 * (1.0 + c_norm) && dual / tx > 1e-8 {
                status = Status::Infeasible;
                break;
            }
        }
        if w.amax() > 1e14 {
            status = Status::Unbounded;
            break;
        }

        let zinv = match inverse_blocks(&z) {
            Some(v) => v,
            None => {
                status = Status::NumericalTrouble;
                break;
            }
        };

        // Schur complement M_ij = <F_i, Z^-1 F_j X>.
        let mut schur = DMatrix::zeros(nw, nw);
        let mut g: Vec<Vec<(usize, DMatrix<f64>)>> = Vec::with_capacity(nw);
        for terms in &p.f {
            g.push(
                terms
                    .iter()
                    .map(|(b, m)| (*b, &zinv[*b] * m * &x[*b]))
                    .collect(),
            );
        }
        for i in 0..nw {
            for j in i..nw {
                let mut acc = 0.0;
                for (bi, fi) in &p.f[i] {
                    for (bj, gj) in &g[j] {
                        if bi == bj {
                            acc += fi.dot(gj);
                        }
                    }
                }
                schur[(i, j)] = acc;
                schur[(j, i)] = acc;
            }
        }
        let diag_max = (0..nw).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max);
        let chol = match Cholesky::new(schur.clone()) {
            Some(c) => c,
            None => {
                let mut reg = schur;
                for i in 0..nw {
                    reg[(i, i)] += 1e-14 * diag_max.max(1.0);
                }
                match Cholesky::new(reg) {
                    Some(c) => c,
                    None => {
                        status = Status::NumericalTrouble;
                        break;
                    }
                }
            }
        };

        // X Rd Z^-1 appears in every right-hand side.
        let x_rd_zinv: Vec<DMatrix<f64>> = (0..nb).map(|b| &x[b] * &rd[b] * &zinv[b]).collect();

        let direction = |target: f64, corr: Option<&[DMatrix<f64>]>| {
            let mut base: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| &zinv[b] * target - &x_rd_zinv[b])
                .collect();
            if let Some(corr) = corr {
                for b in 0..nb {
                    base[b] -= &corr[b];
                }
            }
            let rhs = p.adjoint(&base) - &p.c;
            let dw = chol.solve(&rhs);
            let mut dz = rd.clone();
            for (i, terms) in p.f.iter().enumerate() {
                for (b, m) in terms {
                    dz[*b] += m * dw[i];
                }
            }
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| {
                    let mut d = &zinv[b] * target - &x[b] - &x[b] * &dz[b] * &zinv[b];
                    if let Some(corr) = corr {
                        d -= &corr[b];
                    }
                    symmetrize(&mut d);
                    d
                })
                .collect();
            (dw, dx, dz)
        };

        // Predictor.
        let (_, dx_a, dz_a) = direction(0.0, None);
        let (ap, ad) = match (max_step(&x, &dx_a), max_step(&z, &dz_a)) {
            (Some(a), Some(b)) => (a.min(1.0), b.min(1.0)),
            _ => {
                status = Status::NumericalTrouble;
                break;
            }
        };
        let x_aff: Vec<DMatrix<f64>> = (0..nb).map(|b| &x[b] + &dx_a[b] * ap).collect();
        let z_aff: Vec<DMatrix<f64>> = (0..nb).map(|b| &z[b] + &dz_a[b] * ad).collect();
        let mu_aff = inner(&x_aff, &z_aff) / dim;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector with second-order term.
        let corr: Vec<DMatrix<f64>> = (0..nb).map(|b| &dx_a[b] * &dz_a[b] * &zinv[b]).collect();
        let (dw, dx, dz) = direction(sigma * mu, Some(&corr));
        let (sp, sd) = match (max_step(&x, &dx), max_step(&z, &dz)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                status = Status::NumericalTrouble;
                break;
            }
        };
        let damp = 0.9 + 0.09 * ap.min(ad);
        let ap = (damp * sp).min(1.0);
        let ad = (damp * sd).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls > 3 {
                status = Status::NumericalTrouble;
                break;
            }
        } else {
            stalls = 0;
        }
        for b in 0..nb {
            x[b] += &dx[b] * ap;
            z[b] += &dz[b] * ad;
            symmetrize(&mut x[b]);
            symmetrize(&mut z[b]);
        }
        w += &dw * ad;
        iterations = iter + 1;
    }

    let mut dual_objective = -inner(&p.f0, &x);
    if matches!(status, Status::NumericalTrouble | Status::MaxIterations) {
        if let Some((merit, bw, bd)) = best {
            if merit <= NEAR_FACTOR {
                status = Status::Optimal;
                w = bw;
                dual_objective = bd;
            }
        }
    }
    Outcome {
        status,
        dual_objective,
        w,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LmiBlock, Sense};
    use approx::assert_relative_eq;

    #[test]
    fn scalar_lp_through_inequalities() {
        // min x s.t. x >= 2, x <= 5
        let mut p = ConicProblem::new();
        let x = p.add_variable("x");
        p.set_objective(x, 1.0);
        p.add_inequality("lo", vec![(x, -1.0)], -2.0);
        p.add_inequality("hi", vec![(x, 1.0)], 5.0);
        let s = solve(&p, &Settings::default());
        assert_eq!(s.status, Status::Optimal);
        assert_relative_eq!(s.x[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn max_eigenvalue_as_sdp() {
        // min t s.t. t I - A ⪰ 0  => t = lambda_max(A)
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let mut p = ConicProblem::new();
        let t = p.add_variable("t");
        p.set_objective(t, 1.0);
        let mut b = LmiBlock::new("eig", Sense::Psd, 3);
        b.constant = -a.clone();
        for i in 0..3 {
            b.add_entry(t, i, i, 1.0);
        }
        p.add_lmi(b);
        let s = solve(&p, &Settings::default());
        assert_eq!(s.status, Status::Optimal);
        let lmax = SymmetricEigen::new(a).eigenvalues.max();
        assert_relative_eq!(s.x[0], lmax, epsilon = 1e-8);
    }

    #[test]
    fn equality_and_redundant_variable() {
        // min x + y s.t. x - y = 1, [[x, 1],[1, y+1]] ⪰ 0; z appears nowhere.
        let mut p = ConicProblem::new();
        let x = p.add_variable("x");
        let y = p.add_variable("y");
        let _z = p.add_variable("z");
        p.set_objective(x, 1.0);
        p.set_objective(y, 1.0);
        p.add_equality("link", vec![(x, 1.0), (y, -1.0)], 1.0);
        let mut b = LmiBlock::new("blk", Sense::Psd, 2);
        b.add_entry(x, 0, 0, 1.0);
        b.add_entry(y, 1, 1, 1.0);
        b.add_constant(1, 1, 1.0);
        b.add_constant(0, 1, 1.0);
        p.add_lmi(b);
        let s = solve(&p, &Settings::default());
        assert_eq!(s.status, Status::Optimal);
        // With y = x - 1: x * x >= 1 so x = 1, y = 0.
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(s.x[1], 0.0, epsilon = 1e-6);
        assert_eq!(s.x[2], 0.0);
        assert_eq!(s.reduced_dimension, 1);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = ConicProblem::new();
        let x = p.add_variable("x");
        p.add_equality("a", vec![(x, 1.0)], 1.0);
        p.add_equality("b", vec![(x, 1.0)], 2.0);
        assert_eq!(solve(&p, &Settings::default()).status, Status::Infeasible);
    }

    #[test]
    fn empty_lmi_feasible_set_is_detected() {
        // x >= 1 and x <= -1 written as matrix constraints.
        let mut p = ConicProblem::new();
        let x = p.add_variable("x");
        p.set_objective(x, 1.0);
        let mut b = LmiBlock::new("pair", Sense::Psd, 2);
        b.add_entry(x, 0, 0, 1.0);
        b.add_constant(0, 0, -1.0);
        b.add_entry(x, 1, 1, -1.0);
        b.add_constant(1, 1, -1.0);
        p.add_lmi(b);
        let s = solve(&p, &Settings::default());
        assert_ne!(s.status, Status::Optimal);
    }

    #[test]
    fn free_objective_direction_is_unbounded() {
        let mut p = ConicProblem::new();
        let x = p.add_variable("x");
        let y = p.add_variable("y");
        p.set_objective(y, 1.0);
        p.add_inequality("x", vec![(x, 1.0)], 1.0);
        assert_eq!(solve(&p, &Settings::default()).status, Status::Unbounded);
    }
}
