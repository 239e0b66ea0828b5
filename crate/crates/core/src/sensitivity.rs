//! Derivatives of a converged solution through the linearized operator.
//!
//! At the fixed point the solution satisfies `y = L_G⁻¹[f(y) + G y]`, so a
//! forcing perturbation `δf` moves it by `δy = L_G⁻¹ δf`: one linear solve.
//! Reverse mode applies the dual operator to the loss cotangent first,
//! `w = g · L_G⁻¹`, which is the transposed recurrence run backward in time
//! and again needs a single scan. Contracting `w` with `∂f/∂θ` or `∂f/∂x`
//! is left to the cell through [`ParamDerivatives`].
//!
//! For ODEs the discrete scheme also depends on `G` through the exponential
//! weights, so these derivatives match the discrete solution's derivatives
//! only up to discretization error. For recurrences they are exact.

use rayon::prelude::*;

use crate::dynamics::Dynamics;
use crate::engine::Linearization;
use crate::error::{DeerError, Result};
use crate::pscan::{solve_recurrence, LinearRecurrenceSystem, ScanConfig};
use crate::rnn::linearize_rnn_at;
use crate::scalar::Real;
use crate::smallmat::{matvec_t_into, transpose_into};
use crate::types::{InputSequence, Sequence, StateSequence};

/// `∂Loss/∂yᵢ` for every solved step.
pub type CotangentSequence<T> = Sequence<T>;

/// Parameter and input derivative hooks of a single-shift cell.
pub trait ParamDerivatives<T: Real>: Dynamics<T> {
    fn num_params(&self) -> usize;

    /// `out = (∂f/∂θ) tangent`.
    fn param_jvp(&self, shifted: &[&[T]], input: &[T], tangent: &[T], out: &mut [T]);

    /// Accumulates `(∂f/∂θ)ᵀ cotangent` into `grad`.
    fn param_vjp(&self, shifted: &[&[T]], input: &[T], cotangent: &[T], grad: &mut [T]);

    /// Writes `(∂f/∂x)ᵀ cotangent` into `out`.
    fn input_vjp(&self, shifted: &[&[T]], input: &[T], cotangent: &[T], out: &mut [T]);
}

/// Where the linearization used for derivatives comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianSource {
    /// Use the matrices saved from the last forward iteration.
    #[default]
    Reuse,
    /// Re-evaluate the Jacobians at the final states.
    Recompute,
}

/// Result of [`backward_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardGradient<T> {
    /// Adjoint `wᵢ` for every step, `L × n`.
    pub adjoint: Sequence<T>,
    /// `∂Loss/∂f` at every evaluation point (`E × n`).
    pub forcing_cotangent: Sequence<T>,
    /// `∂Loss/∂y₀ = A₁ᵀ w₁`.
    pub initial: Vec<T>,
}

fn check_forcing<T: Real>(lin: &Linearization<T>, rows: usize, dim: usize) -> Result<()> {
    let sys = &lin.system;
    let expect = match lin.forcing {
        crate::engine::ForcingMap::Identity => sys.len(),
        crate::engine::ForcingMap::Weighted { .. } => sys.len() + 1,
    };
    if rows != expect || dim != sys.n() {
        return Err(DeerError::shape("forcing perturbation", format!("{expect}x{}", sys.n()), format!("{rows}x{dim}")));
    }
    Ok(())
}

/// `δy = L_G⁻¹ δf` with `δy₀ = 0`. `delta_f` is sampled at the evaluation
/// points (`L` rows for recurrences, `L+1` grid rows for ODEs).
pub fn forward_sensitivity<T: Real>(lin: &Linearization<T>, delta_f: &Sequence<T>) -> Result<StateSequence<T>> {
    forward_sensitivity_with(lin, delta_f, &ScanConfig::default())
}

pub fn forward_sensitivity_with<T: Real>(
    lin: &Linearization<T>,
    delta_f: &Sequence<T>,
    scan: &ScanConfig,
) -> Result<StateSequence<T>> {
    scan.validate()?;
    check_forcing(lin, delta_f.len(), delta_f.dim())?;
    let (n, steps) = (lin.system.n(), lin.system.len());
    let offsets = lin.forcing.apply(n, steps, delta_f.as_slice());
    let sys = lin.system.with_offsets(offsets, vec![T::zero(); n])?;
    Ok(StateSequence::from_flat_unchecked(steps, n, solve_recurrence(&sys, scan)))
}

/// Adjoint of the linearized solve: `wᵢ = gᵢ + Aᵢ₊₁ᵀ wᵢ₊₁`, `w_L = g_L`,
/// evaluated as one forward scan over the time-reversed transposed system.
pub fn backward_gradient<T: Real>(lin: &Linearization<T>, cotangent: &CotangentSequence<T>) -> Result<BackwardGradient<T>> {
    backward_gradient_with(lin, cotangent, &ScanConfig::default())
}

pub fn backward_gradient_with<T: Real>(
    lin: &Linearization<T>,
    cotangent: &CotangentSequence<T>,
    scan: &ScanConfig,
) -> Result<BackwardGradient<T>> {
    scan.validate()?;
    let sys = &lin.system;
    let (n, steps) = (sys.n(), sys.len());
    if cotangent.len() != steps || cotangent.dim() != n {
        return Err(DeerError::shape(
            "cotangent",
            format!("{steps}x{n}"),
            format!("{}x{}", cotangent.len(), cotangent.dim()),
        ));
    }
    let reversed = reversed_adjoint_system(sys, cotangent.as_slice());
    let u = solve_recurrence(&reversed, scan);
    let mut adjoint = vec![T::zero(); steps * n];
    if n > 0 {
        for (j, row) in u.chunks_exact(n).enumerate() {
            adjoint[(steps - 1 - j) * n..(steps - j) * n].copy_from_slice(row);
        }
    }
    let mut initial = vec![T::zero(); n];
    if steps > 0 {
        matvec_t_into(n, sys.transition(0), &adjoint[..n], &mut initial);
    }
    let forcing = lin.forcing.apply_transpose(n, steps, &adjoint);
    let forcing_rows = if n == 0 { 0 } else { forcing.len() / n };
    Ok(BackwardGradient {
        adjoint: Sequence::from_flat_unchecked(steps, n, adjoint),
        forcing_cotangent: Sequence::from_flat_unchecked(forcing_rows, n, forcing),
        initial,
    })
}

/// `u_j = A_{L+1−j}ᵀ u_{j−1} + g_{L−j}` (0-based), `u_{−1} = 0`, so that
/// `u_j = w_{L−1−j}`.
fn reversed_adjoint_system<T: Real>(sys: &LinearRecurrenceSystem<T>, g: &[T]) -> LinearRecurrenceSystem<T> {
    let (n, steps) = (sys.n(), sys.len());
    let nn = n * n;
    let mut transitions = vec![T::zero(); steps * nn];
    let mut offsets = vec![T::zero(); steps * n];
    if n > 0 {
        transitions.par_chunks_mut(nn).enumerate().skip(1).for_each(|(j, out)| {
            transpose_into(n, sys.transition(steps - j), out);
        });
        for (j, out) in offsets.chunks_exact_mut(n).enumerate() {
            let i = steps - 1 - j;
            out.copy_from_slice(&g[i * n..(i + 1) * n]);
        }
    }
    LinearRecurrenceSystem::from_parts_unchecked(n, transitions, offsets, vec![T::zero(); n])
}

/// Points per deterministic partial sum in the parameter reductions.
const REDUCE_CHUNK: usize = 256;

/// Parameter tangent `(∂f/∂θ) tangent` at every step of a recurrence.
pub fn rnn_param_forcing<T: Real, D: ParamDerivatives<T>>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
    states: &StateSequence<T>,
    tangent: &[T],
) -> Result<Sequence<T>> {
    check_rnn_args(cell, inputs, y0, states)?;
    if tangent.len() != cell.num_params() {
        return Err(DeerError::shape("parameter tangent", cell.num_params(), tangent.len()));
    }
    let n = cell.state_dim();
    let mut out = vec![T::zero(); states.len() * n];
    if n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, o)| {
            let prev = if i == 0 { y0 } else { states.row(i - 1) };
            cell.param_jvp(&[prev], inputs.row(i), tangent, o);
        });
    }
    Ok(Sequence::from_flat_unchecked(states.len(), n, out))
}

/// Gradients of a scalar loss of a solved recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnGradient<T> {
    pub params: Vec<T>,
    pub inputs: Sequence<T>,
    pub initial: Vec<T>,
}

fn check_rnn_args<T: Real, D: Dynamics<T>>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
    states: &StateSequence<T>,
) -> Result<()> {
    let n = cell.state_dim();
    if y0.len() != n {
        return Err(DeerError::shape("initial state", n, y0.len()));
    }
    if states.len() != inputs.len() || states.dim() != n {
        return Err(DeerError::shape(
            "solved states",
            format!("{}x{n}", inputs.len()),
            format!("{}x{}", states.len(), states.dim()),
        ));
    }
    if inputs.dim() != cell.input_dim() {
        return Err(DeerError::shape("input channels", cell.input_dim(), inputs.dim()));
    }
    Ok(())
}

/// Reverse-mode gradient of a recurrence solved by DEER: one adjoint scan,
/// then per-step contractions with the cell's derivative hooks.
#[allow(clippy::too_many_arguments)]
pub fn rnn_gradient<T: Real, D: ParamDerivatives<T>>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
    states: &StateSequence<T>,
    saved: Option<&Linearization<T>>,
    source: JacobianSource,
    cotangent: &CotangentSequence<T>,
) -> Result<RnnGradient<T>> {
    check_rnn_args(cell, inputs, y0, states)?;
    let recomputed;
    let lin = match (source, saved) {
        (JacobianSource::Reuse, Some(l)) => l,
        (JacobianSource::Reuse, None) => {
            return Err(DeerError::Config("reusing Jacobians requires the saved linearization".into()))
        }
        (JacobianSource::Recompute, _) => {
            recomputed = linearize_rnn_at(cell, inputs, y0, states)?;
            &recomputed
        }
    };
    let back = backward_gradient(lin, cotangent)?;
    let n = cell.state_dim();
    let m = cell.input_dim();
    let p = cell.num_params();
    let w = &back.forcing_cotangent;
    let len = states.len();

    let prev = |i: usize| if i == 0 { y0 } else { states.row(i - 1) };
    let partials: Vec<Vec<T>> = (0..len.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![T::zero(); p];
            for i in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(len) {
                cell.param_vjp(&[prev(i)], inputs.row(i), w.row(i), &mut acc);
            }
            acc
        })
        .collect();
    let mut params = vec![T::zero(); p];
    for part in partials {
        for (a, b) in params.iter_mut().zip(part) {
            *a += b;
        }
    }

    let mut input_grad = vec![T::zero(); len * m];
    if m > 0 && n > 0 {
        input_grad.par_chunks_mut(m).enumerate().for_each(|(i, o)| {
            cell.input_vjp(&[prev(i)], inputs.row(i), w.row(i), o);
        });
    }
    Ok(RnnGradient {
        params,
        inputs: Sequence::from_flat_unchecked(len, m, input_grad),
        initial: back.initial,
    })
}
