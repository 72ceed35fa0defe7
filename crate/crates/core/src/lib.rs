//! Online data-driven stabilization of unknown switched linear systems.
//!
//! The controller only ever sees a sliding window of measured inputs and
//! states. At every step it solves a data-parametrized LQR semidefinite
//! program on that window, applies `u = K x + eps |x|` with a small
//! excitation term that keeps the data persistently exciting, and shifts the
//! window. Model-based oracles (Riccati, Lyapunov, stability constants) live
//! alongside for verification only.

pub mod data_window;
pub mod dd_lqr;
pub mod error;
pub mod excitation;
pub mod linalg;
pub mod plant;
pub mod run;
pub mod scenario;
pub mod stability;

pub use error::{Error, Result};
