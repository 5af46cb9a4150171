//! Robust ergodic singular control of a jump-diffusion with drift and
//! jump-intensity ambiguity.
//!
//! The optimal policy is a reflecting band `[x_low, x_high]`; nature's worst
//! case switches its drift at `x_kappa` and its jump intensity at `x_lambda`.
//! [`outer::solve_robust`] finds the four thresholds and the ergodic value,
//! [`verification::verify`] certifies a solution and [`simulate`] provides a
//! Monte Carlo cross-check.

pub mod error;
pub mod experiments;
pub mod inner;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod outer;
pub mod quadrature;
pub mod simulate;
pub mod stable;
pub mod verification;

pub use error::{Result, SolverError, Warning};
pub use inner::{inner_solve, InnerSolution, PiecewiseH};
pub use model::{ModelParams, Regime, Thresholds};
pub use outer::{solve_nonrobust, solve_robust, worstcase_value_of_policy, SolveReport};
