//! Sliding input/state data matrices and block-Hankel matrices.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular value cutoff used for rank decisions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTol {
    /// `max(rows, cols) * eps * sigma_max`
    #[default]
    Auto,
    Fixed(f64),
}

/// Number of singular values of `m` above the tolerance.
pub fn numerical_rank(m: &DMatrix<f64>, tol: RankTol) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    let cut = match tol {
        RankTol::Auto => (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * smax,
        RankTol::Fixed(t) => t,
    };
    sv.iter().filter(|s| **s > cut).count()
}

/// Minimal excitation length `N = (m + 1) n + m`.
pub fn excitation_length(n: usize, m: usize) -> usize {
    (m + 1) * n + m
}

/// Smallest admissible window length `2N - 1`.
pub fn min_window_length(n: usize, m: usize) -> usize {
    2 * excitation_length(n, m) - 1
}

/// Block-Hankel matrix of a vector signal: block `(r, c)` holds `z(r + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub order: usize,
    pub depth: usize,
    pub signal_dim: usize,
    pub entries: DMatrix<f64>,
}

pub fn build_hankel(signal: &[DVector<f64>], order: usize) -> Result<HankelMatrix> {
    if order == 0 {
        return Err(Error::Parameter("Hankel order must be positive".into()));
    }
    if signal.len() < order {
        return Err(Error::SequenceTooShort {
            len: signal.len(),
            order,
            needed: order,
        });
    }
    let sigma = signal[0].len();
    if sigma == 0 {
        return Err(Error::dims("Hankel signal", ">= 1", 0));
    }
    if let Some(bad) = signal.iter().find(|z| z.len() != sigma) {
        return Err(Error::dims("Hankel signal sample", sigma, bad.len()));
    }
    let depth = signal.len() - order + 1;
    let entries = DMatrix::from_fn(sigma * order, depth, |row, col| {
        signal[row / sigma + col][row % sigma]
    });
    Ok(HankelMatrix {
        order,
        depth,
        signal_dim: sigma,
        entries,
    })
}

/// Aligned length-`T` buffers `u(k-T)..u(k-1)` and `x(k-T)..x(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWindow {
    len: usize,
    n: usize,
    m: usize,
    inputs: VecDeque<DVector<f64>>,
    states: VecDeque<DVector<f64>>,
    time: i64,
}

impl DataWindow {
    /// Builds a window from `T` inputs and `T + 1` states; `current_time`
    /// is the index `k` of the last state.
    pub fn from_samples(
        inputs: Vec<DVector<f64>>,
        states: Vec<DVector<f64>>,
        current_time: i64,
    ) -> Result<Self> {
        let len = inputs.len();
        if states.len() != len + 1 {
            return Err(Error::dims("window states", len + 1, states.len()));
        }
        let m = inputs.first().map(|u| u.len()).unwrap_or(0);
        let n = states[0].len();
        if m == 0 || n == 0 {
            return Err(Error::dims("window sample size", ">= 1", 0));
        }
        if let Some(u) = inputs.iter().find(|u| u.len() != m) {
            return Err(Error::dims("window input", m, u.len()));
        }
        if let Some(x) = states.iter().find(|x| x.len() != n) {
            return Err(Error::dims("window state", n, x.len()));
        }
        let min = min_window_length(n, m);
        if len < min {
            return Err(Error::WindowTooShort {
                t: len,
                min,
                n_min: excitation_length(n, m),
            });
        }
        Ok(Self {
            len,
            n,
            m,
            inputs: inputs.into(),
            states: states.into(),
            time: current_time,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn current_time(&self) -> i64 {
        self.time
    }

    pub fn inputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.inputs.iter()
    }

    pub fn states(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.states.iter()
    }

    /// Most recent state `x(k)`.
    pub fn latest_state(&self) -> &DVector<f64> {
        self.states.back().expect("window holds T+1 states")
    }

    /// Last `len` inputs, oldest first.
    pub fn input_suffix(&self, len: usize) -> Vec<DVector<f64>> {
        let skip = self.inputs.len().saturating_sub(len);
        self.inputs.iter().skip(skip).cloned().collect()
    }

    /// Appends `u(k)` and `x(k+1)`, dropping `u(k-T)` and `x(k-T)`.
    pub fn push_sample(&mut self, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::dims("pushed input", self.m, u.len()));
        }
        if x_next.len() != self.n {
            return Err(Error::dims("pushed state", self.n, x_next.len()));
        }
        self.inputs.pop_front();
        self.inputs.push_back(u.clone());
        self.states.pop_front();
        self.states.push_back(x_next.clone());
        self.time += 1;
        Ok(())
    }

    fn columns<'a>(rows: usize, it: impl Iterator<Item = &'a DVector<f64>>, len: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, len);
        for (c, v) in it.take(len).enumerate() {
            out.set_column(c, v);
        }
        out
    }

    /// `U_{k-1} = [u(k-T) ... u(k-1)]`
    pub fn u_prev(&self) -> DMatrix<f64> {
        Self::columns(self.m, self.inputs.iter(), self.len)
    }

    /// `X_{k-1} = [x(k-T) ... x(k-1)]`
    pub fn x_prev(&self) -> DMatrix<f64> {
        Self::columns(self.n, self.states.iter(), self.len)
    }

    /// `X_k = [x(k-T+1) ... x(k)]`
    pub fn x_next(&self) -> DMatrix<f64> {
        Self::columns(self.n, self.states.iter().skip(1), self.len)
    }

    /// `[U_{k-1}; X_{k-1}]`
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.m + self.n, self.len);
        w.rows_mut(0, self.m).copy_from(&self.u_prev());
        w.rows_mut(self.m, self.n).copy_from(&self.x_prev());
        w
    }

    pub fn stacked_rank(&self, tol: RankTol) -> usize {
        numerical_rank(&self.stacked(), tol)
    }

    /// `rank [U_{k-1}; X_{k-1}] = m + n`
    pub fn rank_condition_holds(&self, tol: RankTol) -> bool {
        self.stacked_rank(tol) == self.m + self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|x| DVector::from_element(1, *x)).collect()
    }

    fn window_from(inputs: &[f64], states: &[f64]) -> DataWindow {
        DataWindow::from_samples(scalars(inputs), scalars(states), 0).unwrap()
    }

    #[test]
    fn hankel_scalar_layout() {
        let h = build_hankel(&scalars(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(
            h.entries,
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0])
        );
        let single = build_hankel(&scalars(&[5.0]), 1).unwrap();
        assert_eq!(single.entries, DMatrix::from_element(1, 1, 5.0));
    }

    #[test]
    fn hankel_vector_signal_index_by_index() {
        let signal: Vec<_> = (0..8)
            .map(|i| DVector::from_vec(vec![i as f64 * 0.1 - 0.3, 0.25 - i as f64 * 0.05]))
            .collect();
        let h = build_hankel(&signal, 3).unwrap();
        assert_eq!(h.entries.shape(), (6, 6));
        for c in 0..6 {
            for blk in 0..3 {
                for i in 0..2 {
                    assert_eq!(h.entries[(2 * blk + i, c)], signal[c + blk][i]);
                }
            }
        }
    }

    #[test]
    fn hankel_too_short() {
        assert!(matches!(
            build_hankel(&scalars(&[1.0, 2.0]), 3),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), RankTol::Auto), 0);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), RankTol::Auto), 3);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(numerical_rank(&m, RankTol::Auto), 1);
        assert_eq!(numerical_rank(&m, RankTol::Fixed(10.0)), 0);
    }

    #[test]
    fn rank_condition_fails_on_zero_and_constant_inputs() {
        let zero = window_from(&[0.0; 5], &[0.0; 6]);
        assert!(!zero.rank_condition_holds(RankTol::Auto));
        // x(k+1) = 0.5 x + u with constant u from the fixed point: states constant too.
        let constant = window_from(&[1.0; 5], &[2.0; 6]);
        assert!(!constant.rank_condition_holds(RankTol::Auto));
    }

    #[test]
    fn window_rejects_short_length() {
        let err = DataWindow::from_samples(scalars(&[1.0; 4]), scalars(&[1.0; 5]), 0).unwrap_err();
        assert!(matches!(err, Error::WindowTooShort { t: 4, min: 5, .. }));
    }

    #[test]
    fn push_shifts_buffers() {
        let mut w = window_from(&[1.0, 2.0, 3.0, 4.0, 5.0], &[10.0, 11.0, 12.0, 13.0, 14.0, 15.0]);
        let old_next = w.x_next();
        w.push_sample(&DVector::from_element(1, 6.0), &DVector::from_element(1, 16.0))
            .unwrap();
        assert_eq!(w.current_time(), 1);
        assert_eq!(w.u_prev()[(0, 4)], 6.0);
        assert_eq!(w.u_prev()[(0, 0)], 2.0);
        // New X_{k-1} equals old X_k.
        assert_eq!(w.x_prev(), old_next);
        assert_eq!(w.x_next()[(0, 4)], 16.0);
        assert!(w
            .push_sample(&DVector::zeros(2), &DVector::zeros(1))
            .is_err());
    }

    #[test]
    fn t_pushes_flush_old_data() {
        let mut w = window_from(&[1.0; 5], &[1.0; 6]);
        for i in 0..5 {
            w.push_sample(&DVector::from_element(1, -(i as f64)), &DVector::from_element(1, -2.0))
                .unwrap();
        }
        assert!(w.inputs().all(|u| u[0] <= 0.0));
        assert!(w.states().skip(1).all(|x| x[0] == -2.0));
    }

    proptest! {
        #[test]
        fn hankel_shape_and_reconstruction(
            len in 1usize..12,
            sigma in 1usize..4,
            order_frac in 0.0f64..1.0,
            seed in prop::collection::vec(-5.0f64..5.0, 48),
        ) {
            let signal: Vec<DVector<f64>> = (0..len)
                .map(|i| DVector::from_fn(sigma, |r, _| seed[(i * sigma + r) % seed.len()] + i as f64))
                .collect();
            let order = 1 + ((len - 1) as f64 * order_frac) as usize;
            let h = build_hankel(&signal, order).unwrap();
            prop_assert_eq!(h.entries.nrows(), sigma * order);
            prop_assert_eq!(h.entries.ncols(), len - order + 1);
            // First block column then last block row recover the signal.
            let mut rebuilt = Vec::new();
            for blk in 0..order {
                rebuilt.push(h.entries.view((blk * sigma, 0), (sigma, 1)).clone_owned());
            }
            for c in 1..h.depth {
                rebuilt.push(h.entries.view(((order - 1) * sigma, c), (sigma, 1)).clone_owned());
            }
            for (a, b) in rebuilt.iter().zip(&signal) {
                prop_assert_eq!(a.column(0).clone_owned(), b.clone());
            }
        }

        #[test]
        fn rank_is_transpose_invariant(rows in 1usize..6, cols in 1usize..6, rank_cap in 1usize..6,
                                       vals in prop::collection::vec(-3.0f64..3.0, 72)) {
            let r = rank_cap.min(rows).min(cols);
            let left = DMatrix::from_fn(rows, r, |i, j| vals[(i * 6 + j) % 72]);
            let right = DMatrix::from_fn(r, cols, |i, j| vals[(36 + i * 6 + j) % 72]);
            let m = left * right;
            prop_assert_eq!(numerical_rank(&m, RankTol::Auto), numerical_rank(&m.transpose(), RankTol::Auto));
        }

        #[test]
        fn rank_condition_is_permutation_invariant(
            us in prop::collection::vec(-1.0f64..1.0, 5),
            xs in prop::collection::vec(-1.0f64..1.0, 6),
            shift in 0usize..5,
        ) {
            let w = window_from(&us, &xs);
            let stacked = w.stacked();
            let mut permuted = stacked.clone();
            for c in 0..5 {
                permuted.set_column(c, &stacked.column((c + shift) % 5));
            }
            prop_assert_eq!(
                w.stacked_rank(RankTol::Auto),
                numerical_rank(&permuted, RankTol::Auto)
            );
        }

        #[test]
        fn push_keeps_overlap_exact(
            us in prop::collection::vec(-1.0f64..1.0, 5),
            xs in prop::collection::vec(-1.0f64..1.0, 6),
            u in -1.0f64..1.0,
            x in -1.0f64..1.0,
        ) {
            let mut w = window_from(&us, &xs);
            let before = w.x_next();
            w.push_sample(&DVector::from_element(1, u), &DVector::from_element(1, x)).unwrap();
            let after = w.x_prev();
            prop_assert_eq!(after, before);
        }
    }
}
