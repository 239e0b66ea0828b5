//! Parallel-in-time evaluation of nonlinear recurrences and ODEs.
//!
//! A nonlinear sequential model is solved as a fixed-point iteration whose
//! update is a linear time-varying recurrence. That recurrence is evaluated
//! with a parallel associative scan, so each iteration costs `O(log L)` depth
//! instead of `L` dependent steps.

pub mod bench;
pub mod config;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod ode;
pub mod problems;
pub mod pscan;
pub mod rnn;
pub mod scalar;
pub mod sensitivity;
pub mod smallmat;
pub mod types;

pub use config::{ConvergenceMetric, DeerConfig, DeerReport, InitGuess};
pub use dynamics::{finite_difference_jacobian, Dynamics, FdStep, FnDynamics};
pub use engine::{deer_solve, residual, Linearization};
pub use error::{DeerError, Result};
pub use ode::{deer_solve_ode, reference_rk4, sequential_deer_fixed_point, Interpolation, OdeProblem};
pub use pscan::{combine, scan_inclusive, sequential_scan, LinearRecurrenceSystem, ScanConfig, ScanElement};
pub use rnn::{deer_eval_rnn, eval_strided, gru_jacobian, gru_step, sequential_eval_rnn, GruCell, GruParams, HeadLayout};
pub use scalar::{Precision, Real};
pub use sensitivity::{backward_gradient, forward_sensitivity, CotangentSequence, ParamDerivatives};
pub use smallmat::SmallMatrix;
pub use types::{InputSequence, Sequence, StateSequence, TimeGrid};
