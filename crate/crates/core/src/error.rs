use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

/// Hard failures raised by the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    /// A parameter or threshold lies outside its admissible set.
    #[error("{0}")]
    Domain(String),

    /// A 2x2 coefficient system is numerically singular.
    #[error("singular linear system {system} (scaled determinant {det:e})")]
    SingularSystem { system: &'static str, det: f64 },

    /// The outer root search ran out of iterations.
    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
        best: Vec<f64>,
    },

    /// The residual map produced a NaN or infinity.
    #[error("non-finite residual")]
    NonFinite,

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("invalid simulation config: {0}")]
    Config(String),
}

impl SolverError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SolverError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Soft diagnostics: the computation proceeds on a stabilized path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warning {
    /// `|a_{i,1}|` fell under the degeneracy tolerance; the cubic particular solution is used.
    DegenerateCoefficient { interval: usize, a1: f64 },
    /// The characteristic roots are closer than the double-root tolerance.
    NearDoubleRoot { interval: usize, gap: f64 },
    /// A characteristic root nearly coincides with the jump rate.
    NearResonance { interval: usize, rho: f64, mu: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Warning::DegenerateCoefficient { interval, a1 } => {
                write!(f, "interval {interval}: degenerate a1 = {a1:e}, cubic branch")
            }
            Warning::NearDoubleRoot { interval, gap } => {
                write!(f, "interval {interval}: near double root (gap {gap:e})")
            }
            Warning::NearResonance { interval, rho, mu } => {
                write!(f, "interval {interval}: root {rho} resonates with mu = {mu}")
            }
        }
    }
}

impl Serialize for Warning {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

pub(crate) fn push_unique(list: &mut Vec<Warning>, w: Warning) {
    if !list.contains(&w) {
        list.push(w);
    }
}
