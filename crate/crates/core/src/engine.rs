//! The fixed-point loop shared by every instantiation.
//!
//! Each iteration samples `f` and its state Jacobians on the current iterate,
//! sets `G_p = −∂ₚf` and `z = f + Σₚ G_p y(r − sₚ)`, hands `(G, z)` to a
//! [`Linearizer`] that turns them into an affine recurrence, and solves that
//! recurrence with the parallel scan. With this choice of `G_p` the loop is
//! Newton's method on the whole sequence, so it converges quadratically near
//! the solution and solves linear problems in a single step.
//!
//! Sampling points: a [`Shifter`] maps the `L` unknown states to `E`
//! evaluation points (`E = L` for recurrences, `E = L + 1` for ODE grids,
//! where the known initial state is sampled too). Inputs are given per
//! evaluation point.

use std::time::Instant;

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::config::{ConvergenceMetric, DeerConfig, DeerReport, InitGuess};
use crate::dynamics::Dynamics;
use crate::error::{DeerError, Result};
use crate::ode::Interpolation;
use crate::pscan::{solve_recurrence, LinearRecurrenceSystem};
use crate::scalar::Real;
use crate::smallmat::{matvec_into, matvec_t_into};
use crate::types::{InputSequence, StateSequence};

/// Produces the shifted copies `y(r − sₚ)` of the current iterate.
pub trait Shifter<T: Real>: Sync {
    /// Evaluation points for `unknown_len` unknown steps.
    fn eval_len(&self, unknown_len: usize) -> usize;

    /// Unknown steps for `eval_len` evaluation points.
    fn unknown_len(&self, eval_len: usize) -> Option<usize>;

    /// Boundary state injected before the first unknown.
    fn initial_state(&self) -> &[T];

    /// One `E × n` sequence per shift.
    fn shift(&self, states: &StateSequence<T>) -> Vec<StateSequence<T>>;
}

/// Shift by one step: evaluation point `i` sees `yᵢ₋₁`, with `y₀` given.
#[derive(Debug, Clone)]
pub struct PreviousStepShifter<T> {
    initial: Vec<T>,
}

impl<T: Real> PreviousStepShifter<T> {
    pub fn new(initial: Vec<T>) -> Self {
        PreviousStepShifter { initial }
    }
}

impl<T: Real> Shifter<T> for PreviousStepShifter<T> {
    fn eval_len(&self, unknown_len: usize) -> usize {
        unknown_len
    }

    fn unknown_len(&self, eval_len: usize) -> Option<usize> {
        Some(eval_len)
    }

    fn initial_state(&self) -> &[T] {
        &self.initial
    }

    fn shift(&self, states: &StateSequence<T>) -> Vec<StateSequence<T>> {
        let n = states.dim();
        let len = states.len();
        let mut data = Vec::with_capacity(len * n);
        if len > 0 {
            data.extend_from_slice(&self.initial);
            data.extend_from_slice(&states.as_slice()[..(len - 1) * n]);
        }
        vec![StateSequence::from_flat_unchecked(len, n, data)]
    }
}

/// Zero shift on a time grid: evaluation points are `t₀..t_L`, and the
/// sample at `t₀` is the fixed initial state.
#[derive(Debug, Clone)]
pub struct GridPointShifter<T> {
    initial: Vec<T>,
}

impl<T: Real> GridPointShifter<T> {
    pub fn new(initial: Vec<T>) -> Self {
        GridPointShifter { initial }
    }
}

impl<T: Real> Shifter<T> for GridPointShifter<T> {
    fn eval_len(&self, unknown_len: usize) -> usize {
        unknown_len + 1
    }

    fn unknown_len(&self, eval_len: usize) -> Option<usize> {
        eval_len.checked_sub(1)
    }

    fn initial_state(&self) -> &[T] {
        &self.initial
    }

    fn shift(&self, states: &StateSequence<T>) -> Vec<StateSequence<T>> {
        let n = states.dim();
        let mut data = Vec::with_capacity((states.len() + 1) * n);
        data.extend_from_slice(&self.initial);
        data.extend_from_slice(states.as_slice());
        vec![StateSequence::from_flat_unchecked(states.len() + 1, n, data)]
    }
}

/// How per-point forcing `δf` enters the offsets of the linearized system.
#[derive(Debug, Clone, PartialEq)]
pub enum ForcingMap<T> {
    /// `b̃ᵢ = δfᵢ` (discrete recurrences).
    Identity,
    /// `b̃ᵢ = Wᵢ · δf̃ᵢ` with `δf̃ᵢ` interpolated from grid samples (ODEs).
    Weighted {
        weights: Vec<T>,
        interpolation: Interpolation,
    },
}

impl<T: Real> ForcingMap<T> {
    /// Maps `E × n` point forcing to `L × n` step offsets.
    pub fn apply(&self, n: usize, steps: usize, forcing: &[T]) -> Vec<T> {
        match self {
            ForcingMap::Identity => forcing[..steps * n].to_vec(),
            ForcingMap::Weighted { weights, interpolation } => {
                let mut out = vec![T::zero(); steps * n];
                let mut avg = vec![T::zero(); n];
                let nn = n * n;
                for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate().take(steps) {
                    interpolation.sample(&forcing[i * n..(i + 1) * n], &forcing[(i + 1) * n..(i + 2) * n], &mut avg);
                    matvec_into(n, &weights[i * nn..(i + 1) * nn], &avg, o);
                }
                out
            }
        }
    }

    /// Adjoint of [`ForcingMap::apply`]: `L × n` offset cotangents to `E × n`.
    pub fn apply_transpose(&self, n: usize, steps: usize, cotangent: &[T]) -> Vec<T> {
        match self {
            ForcingMap::Identity => cotangent[..steps * n].to_vec(),
            ForcingMap::Weighted { weights, interpolation } => {
                let mut out = vec![T::zero(); (steps + 1) * n];
                let mut wt = vec![T::zero(); n];
                let nn = n * n;
                let (left, right) = interpolation.weights::<T>();
                for i in 0..steps {
                    matvec_t_into(n, &weights[i * nn..(i + 1) * nn], &cotangent[i * n..(i + 1) * n], &mut wt);
                    for j in 0..n {
                        out[i * n + j] += left * wt[j];
                        out[(i + 1) * n + j] += right * wt[j];
                    }
                }
                out
            }
        }
    }
}

/// The affine recurrence of one iteration together with its forcing map.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization<T> {
    pub system: LinearRecurrenceSystem<T>,
    pub forcing: ForcingMap<T>,
}

/// Turns sampled `G` matrices and `z` vectors into an affine recurrence.
pub trait Linearizer<T: Real>: Sync {
    /// `g` holds `E × P` row-major `n × n` blocks (`G_p` at each point),
    /// `z` holds `E × n`.
    fn linearize(&self, n: usize, num_shifts: usize, g: &[T], z: &[T], initial: &[T]) -> Result<Linearization<T>>;
}

/// Discrete recurrence `yᵢ + Gᵢ yᵢ₋₁ = zᵢ`, i.e. `Aᵢ = −Gᵢ`, `bᵢ = zᵢ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecurrenceLinearizer;

impl<T: Real> Linearizer<T> for RecurrenceLinearizer {
    fn linearize(&self, n: usize, num_shifts: usize, g: &[T], z: &[T], initial: &[T]) -> Result<Linearization<T>> {
        if num_shifts != 1 {
            return Err(DeerError::Config(format!(
                "recurrence linearizer supports a single shift, got {num_shifts}"
            )));
        }
        let transitions = g.iter().map(|&v| -v).collect();
        Ok(Linearization {
            system: LinearRecurrenceSystem::from_parts_unchecked(n, transitions, z.to_vec(), initial.to_vec()),
            forcing: ForcingMap::Identity,
        })
    }
}

/// `max |next − prev|` over all entries.
pub fn residual<T: Real>(prev: &StateSequence<T>, next: &StateSequence<T>) -> Result<T> {
    if prev.len() != next.len() || prev.dim() != next.dim() {
        return Err(DeerError::shape(
            "residual",
            format!("{}x{}", prev.len(), prev.dim()),
            format!("{}x{}", next.len(), next.dim()),
        ));
    }
    Ok(prev
        .as_slice()
        .iter()
        .zip(next.as_slice())
        .fold(T::zero(), |m, (&a, &b)| m.max((b - a).abs())))
}

fn max_abs<T: Real>(s: &StateSequence<T>) -> T {
    s.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Samples `G` and `z` on the current iterate and linearizes.
pub fn linearize_at<T, D, S, Lz>(
    dynamics: &D,
    shifter: &S,
    linearizer: &Lz,
    inputs: &InputSequence<T>,
    states: &StateSequence<T>,
) -> Result<Linearization<T>>
where
    T: Real,
    D: Dynamics<T> + ?Sized,
    S: Shifter<T> + ?Sized,
    Lz: Linearizer<T> + ?Sized,
{
    let n = dynamics.state_dim();
    let p_count = dynamics.num_shifts();
    let shifted = shifter.shift(states);
    if shifted.len() != p_count {
        return Err(DeerError::shape("shifter output", p_count, shifted.len()));
    }
    let points = inputs.len();
    if let Some(s) = shifted.iter().find(|s| s.len() != points || s.dim() != n) {
        return Err(DeerError::shape(
            "shifted sequence",
            format!("{points}x{n}"),
            format!("{}x{}", s.len(), s.dim()),
        ));
    }
    let nn = n * n;
    let mut g = vec![T::zero(); points * p_count * nn];
    let mut z = vec![T::zero(); points * n];
    if n > 0 {
        g.par_chunks_mut(p_count * nn)
            .zip(z.par_chunks_mut(n))
            .enumerate()
            .for_each_init(
                || vec![T::zero(); n],
                |tmp, (e, (g_e, z_e))| {
                    let args: SmallVec<[&[T]; 4]> = shifted.iter().map(|s| s.row(e)).collect();
                    let x = inputs.row(e);
                    dynamics.eval(&args, x, z_e);
                    for (p, g_p) in g_e.chunks_exact_mut(nn).enumerate() {
                        dynamics.jacobian(&args, x, p, g_p);
                        for v in g_p.iter_mut() {
                            *v = -*v;
                        }
                        matvec_into(n, g_p, args[p], tmp);
                        for (zj, &t) in z_e.iter_mut().zip(tmp.iter()) {
                            *zj += t;
                        }
                    }
                },
            );
    }
    if let Some(p) = z.iter().position(|v| !v.is_finite()) {
        return Err(DeerError::NonFinite {
            context: "dynamics output",
            location: format!("evaluation point {}", p / n.max(1)),
        });
    }
    if let Some(p) = g.iter().position(|v| !v.is_finite()) {
        return Err(DeerError::NonFinite {
            context: "state jacobian",
            location: format!("evaluation point {}", p / (p_count * nn).max(1)),
        });
    }
    linearizer.linearize(n, p_count, &g, &z, shifter.initial_state())
}

/// Runs the fixed-point iteration to convergence.
///
/// On exhausting `max_iters` the iterate with the smallest step is returned
/// with `converged = false`. Non-finite values or residual growth beyond
/// `divergence_factor` times the first residual abort with
/// [`DeerError::Divergence`].
pub fn deer_solve<T, D, S, Lz>(
    dynamics: &D,
    shifter: &S,
    linearizer: &Lz,
    inputs: &InputSequence<T>,
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, DeerReport)>
where
    T: Real,
    D: Dynamics<T> + ?Sized,
    S: Shifter<T> + ?Sized,
    Lz: Linearizer<T> + ?Sized,
{
    deer_solve_keep(dynamics, shifter, linearizer, inputs, config).map(|(y, report, _)| (y, report))
}

/// [`deer_solve`] that also returns the linearization of the final iteration,
/// for reuse by the sensitivity operators.
pub fn deer_solve_keep<T, D, S, Lz>(
    dynamics: &D,
    shifter: &S,
    linearizer: &Lz,
    inputs: &InputSequence<T>,
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, DeerReport, Linearization<T>)>
where
    T: Real,
    D: Dynamics<T> + ?Sized,
    S: Shifter<T> + ?Sized,
    Lz: Linearizer<T> + ?Sized,
{
    let start = Instant::now();
    config.validate()?;
    let n = dynamics.state_dim();
    if inputs.dim() != dynamics.input_dim() {
        return Err(DeerError::shape("input channels", dynamics.input_dim(), inputs.dim()));
    }
    if shifter.initial_state().len() != n {
        return Err(DeerError::shape("initial state", n, shifter.initial_state().len()));
    }
    let steps = shifter
        .unknown_len(inputs.len())
        .ok_or_else(|| DeerError::shape("input length", "at least one evaluation point", inputs.len()))?;

    let mut y = match &config.init_guess {
        InitGuess::Zeros => StateSequence::zeros(steps, n),
        InitGuess::Sequence(s) => {
            if s.len() != steps || s.dim() != n {
                return Err(DeerError::shape(
                    "initial guess",
                    format!("{steps}x{n}"),
                    format!("{}x{}", s.len(), s.dim()),
                ));
            }
            if !s.is_finite() {
                return Err(DeerError::NonFinite {
                    context: "initial guess",
                    location: "one or more entries".into(),
                });
            }
            s.clone()
        }
    };

    let tolerance = config.tolerance;
    let mut history = Vec::new();
    let mut converged = false;
    let mut best: Option<(f64, StateSequence<T>)> = None;
    let mut last_lin = None;

    for iteration in 1..=config.max_iters {
        let lin = linearize_at(dynamics, shifter, linearizer, inputs, &y).map_err(|e| match e {
            DeerError::NonFinite { context, location } => DeerError::Divergence {
                iteration,
                reason: format!("non-finite {context} at {location}"),
            },
            other => other,
        })?;
        let flat = solve_recurrence(&lin.system, &config.scan);
        if let Some(p) = flat.iter().position(|v| !v.is_finite()) {
            return Err(DeerError::Divergence {
                iteration,
                reason: format!("non-finite iterate at step {}", p / n.max(1)),
            });
        }
        let next = StateSequence::from_flat_unchecked(steps, n, flat);
        let r = residual(&y, &next)?.as_f64();
        history.push(r);
        let first = history[0];
        if iteration > 1 && r > config.divergence_factor * first {
            return Err(DeerError::Divergence {
                iteration,
                reason: format!("residual {r:e} grew beyond {:e} x the first residual {first:e}", config.divergence_factor),
            });
        }
        let threshold = match config.metric {
            ConvergenceMetric::Absolute => tolerance,
            ConvergenceMetric::Relative => tolerance * max_abs(&next).as_f64().max(1.0),
        };
        y = next;
        last_lin = Some(lin);
        if r <= threshold {
            converged = true;
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            best = Some((r, y.clone()));
        }
    }

    let states = match (converged, best) {
        (false, Some((_, b))) => b,
        _ => y,
    };
    let report = DeerReport {
        iterations: history.len(),
        residual_history: history,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    };
    // max_iters >= 1, so at least one linearization exists
    Ok((states, report, last_lin.expect("at least one iteration")))
}
