//! Dense description of a linear conic program.
//!
//! A problem has scalar decision variables, a linear objective to minimize,
//! linear equality rows, linear `<=` rows, and symmetric affine matrix
//! constraints `F0 + sum_i x_i F_i` that must be positive (or negative)
//! semidefinite.

use std::fmt;
use std::io::{self, Write};

use nalgebra::DMatrix;

/// Orientation of a matrix constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F(x) ⪰ 0`
    Psd,
    /// `F(x) ⪯ 0`
    Nsd,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sense::Psd => f.write_str("psd"),
            Sense::Nsd => f.write_str("nsd"),
        }
    }
}

/// Affine symmetric matrix constraint `constant + sum_i x_i * terms[i]`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub sense: Sense,
    pub constant: DMatrix<f64>,
    /// Sparse list of `(variable index, symmetric coefficient matrix)`.
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn new(name: impl Into<String>, sense: Sense, size: usize) -> Self {
        Self {
            name: name.into(),
            sense,
            constant: DMatrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `coef` to the symmetric entry pair `(r, c)`/`(c, r)` of the
    /// coefficient matrix of variable `var`.
    pub fn add_entry(&mut self, var: usize, r: usize, c: usize, coef: f64) {
        let size = self.size();
        let idx = match self.terms.iter().position(|(v, _)| *v == var) {
            Some(i) => i,
            None => {
                self.terms.push((var, DMatrix::zeros(size, size)));
                self.terms.len() - 1
            }
        };
        let m = &mut self.terms[idx].1;
        m[(r, c)] += coef;
        if r != c {
            m[(c, r)] += coef;
        }
    }

    /// Adds `value` to the symmetric entry pair `(r, c)`/`(c, r)` of the constant.
    pub fn add_constant(&mut self, r: usize, c: usize, value: f64) {
        self.constant[(r, c)] += value;
        if r != c {
            self.constant[(c, r)] += value;
        }
    }

    /// Evaluates the affine matrix at `x`.
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coef) in &self.terms {
            out += coef * x[*var];
        }
        out
    }

    /// Same constraint rewritten as `G(x) ⪰ 0`.
    pub(crate) fn as_psd(&self) -> (DMatrix<f64>, Vec<(usize, DMatrix<f64>)>) {
        match self.sense {
            Sense::Psd => (self.constant.clone(), self.terms.clone()),
            Sense::Nsd => (
                -&self.constant,
                self.terms.iter().map(|(v, m)| (*v, -m)).collect(),
            ),
        }
    }
}

/// Linear row `coeffs · x (= or <=) rhs`.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(v, a)| a * x[*v]).sum()
    }
}

/// `minimize objective · x` subject to the listed constraints.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub variables: Vec<String>,
    pub objective: Vec<f64>,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
    pub lmis: Vec<LmiBlock>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn add_variable(&mut self, name: impl Into<String>) -> usize {
        self.variables.push(name.into());
        self.objective.push(0.0);
        self.variables.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub fn add_equality(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearRow {
            name: name.into(),
            coeffs,
            rhs,
        });
    }

    pub fn add_inequality(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(LinearRow {
            name: name.into(),
            coeffs,
            rhs,
        });
    }

    pub fn add_lmi(&mut self, block: LmiBlock) {
        self.lmis.push(block);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Writes the plain-text dump described in the crate docs.
    pub fn dump<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let nv = self.num_variables();
        writeln!(out, "# conic problem dump v1")?;
        writeln!(out, "variables {nv}")?;
        for (i, name) in self.variables.iter().enumerate() {
            writeln!(out, "var {i} {name}")?;
        }
        writeln!(out, "objective {}", join(&self.objective))?;
        for (kind, rows) in [("eq", &self.equalities), ("leq", &self.inequalities)] {
            for row in rows.iter() {
                let mut dense = vec![0.0; nv];
                for (v, a) in &row.coeffs {
                    dense[*v] += a;
                }
                writeln!(out, "{kind} {} rhs {} row {}", row.name, row.rhs, join(&dense))?;
            }
        }
        for block in &self.lmis {
            writeln!(out, "lmi {} {} size {}", block.name, block.sense, block.size())?;
            writeln!(out, "  const {}", join(block.constant.transpose().as_slice()))?;
            let mut terms: Vec<_> = block.terms.iter().collect();
            terms.sort_by_key(|(v, _)| *v);
            for (var, coef) in terms {
                writeln!(out, "  coef {var} {}", join(coef.transpose().as_slice()))?;
            }
        }
        Ok(())
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_entry_keeps_symmetry() {
        let mut b = LmiBlock::new("b", Sense::Psd, 3);
        b.add_entry(0, 0, 2, 1.5);
        b.add_entry(0, 1, 1, 2.0);
        let m = &b.terms[0].1;
        assert_eq!(m[(0, 2)], 1.5);
        assert_eq!(m[(2, 0)], 1.5);
        assert_eq!(m[(1, 1)], 2.0);
        assert_eq!(b.evaluate(&[2.0]), m * 2.0);
    }

    #[test]
    fn dump_lists_every_piece() {
        let mut p = ConicProblem::new();
        let x = p.add_variable("x");
        p.set_objective(x, 1.0);
        p.add_equality("e", vec![(x, 1.0)], 2.0);
        let mut b = LmiBlock::new("blk", Sense::Nsd, 1);
        b.add_entry(x, 0, 0, -1.0);
        p.add_lmi(b);
        let mut buf = Vec::new();
        p.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("var 0 x"));
        assert!(text.contains("eq e rhs 2 row 1"));
        assert!(text.contains("lmi blk nsd size 1"));
        assert!(text.contains("  coef 0 -1"));
    }
}
