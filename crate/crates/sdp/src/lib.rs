//! Dense interior-point solver for small semidefinite programs.
//!
//! Problems are described with [`ConicProblem`]: scalar variables, a linear
//! objective, linear equality and `<=` rows, and affine symmetric matrix
//! constraints. [`solve`] reduces the problem to a pure linear matrix
//! inequality in a minimal set of free directions and runs a primal-dual
//! path-following method on it.
//!
//! # Text dump
//!
//! [`ConicProblem::dump`] writes a line-oriented description meant for
//! cross-checking with external solvers:
//!
//! ```text
//! # conic problem dump v1
//! variables <count>
//! var <index> <name>                       (one per variable)
//! objective <c_0> ... <c_{n-1}>
//! eq  <name> rhs <b> row <a_0> ... <a_{n-1}>   (a·x = b)
//! leq <name> rhs <b> row <a_0> ... <a_{n-1}>   (a·x <= b)
//! lmi <name> <psd|nsd> size <s>
//!   const <s*s entries, row-major>
//!   coef <var> <s*s entries, row-major>   (one per variable present)
//! ```
//!
//! An `lmi` block states `const + sum_var x_var * coef_var ⪰ 0` (`psd`) or
//! `⪯ 0` (`nsd`).

mod ipm;
mod problem;

pub use ipm::{solve, Settings, Solution, Status};
pub use problem::{ConicProblem, LinearRow, LmiBlock, Sense};
