//! ODE instantiation: `dy/dt = f(y, x(t))` on a time grid.
//!
//! Between grid points the linearized equation `y' + G̃ᵢ y = z̃ᵢ` is solved
//! exactly, giving
//!
//! ```text
//! y_{i+1} = exp(−G̃ᵢΔᵢ) yᵢ + Δᵢ φ₁(−G̃ᵢΔᵢ) z̃ᵢ
//! ```
//!
//! where `G̃ᵢ, z̃ᵢ` are interpolated from the values sampled at `tᵢ` and
//! `tᵢ₊₁` (midpoint average by default, or the left value). φ₁ keeps the
//! offset well defined when `G̃ᵢ` is singular.
//!
//! Direct multiple shooting with one shooting interval per grid step and a
//! single linearized sub-step reduces to this scheme, so no separate shooting
//! solver is provided.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DeerConfig, DeerReport};
use crate::dynamics::Dynamics;
use crate::engine::{deer_solve_keep, linearize_at, ForcingMap, GridPointShifter, Linearization, Linearizer};
use crate::error::{DeerError, Result};
use crate::pscan::LinearRecurrenceSystem;
use crate::scalar::Real;
use crate::smallmat::{expm_phi1_into, matvec_into};
use crate::types::{InputSequence, StateSequence, TimeGrid};

/// How per-interval `G̃ᵢ, z̃ᵢ` are taken from the grid samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// `½(v(tᵢ) + v(tᵢ₊₁))`, second order.
    #[default]
    Midpoint,
    /// `v(tᵢ)`.
    Left,
}

impl Interpolation {
    /// Weights on the left and right samples.
    pub fn weights<T: Real>(self) -> (T, T) {
        match self {
            Interpolation::Midpoint => (T::of(0.5), T::of(0.5)),
            Interpolation::Left => (T::one(), T::zero()),
        }
    }

    pub fn sample<T: Real>(self, left: &[T], right: &[T], out: &mut [T]) {
        match self {
            Interpolation::Midpoint => {
                let half = T::of(0.5);
                for ((o, &a), &b) in out.iter_mut().zip(left).zip(right) {
                    *o = half * (a + b);
                }
            }
            Interpolation::Left => out.copy_from_slice(&left[..out.len()]),
        }
    }
}

impl std::str::FromStr for Interpolation {
    type Err = DeerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "midpoint" => Ok(Interpolation::Midpoint),
            "left" | "left-value" => Ok(Interpolation::Left),
            other => Err(DeerError::Config(format!("unknown interpolation mode `{other}`"))),
        }
    }
}

/// An initial-value problem on a fixed grid.
pub struct OdeProblem<T: Real, D> {
    pub dynamics: D,
    pub y0: Vec<T>,
    pub grid: TimeGrid<T>,
    /// Input samples at every grid point, `(L+1) × m`.
    pub inputs: InputSequence<T>,
}

impl<T: Real, D: Dynamics<T>> OdeProblem<T, D> {
    /// Problem without inputs.
    pub fn autonomous(dynamics: D, y0: Vec<T>, grid: TimeGrid<T>) -> Result<Self> {
        let inputs = InputSequence::empty(grid.times().len());
        Self::new(dynamics, y0, grid, inputs)
    }

    pub fn new(dynamics: D, y0: Vec<T>, grid: TimeGrid<T>, inputs: InputSequence<T>) -> Result<Self> {
        let n = dynamics.state_dim();
        if y0.len() != n {
            return Err(DeerError::shape("ode initial state", n, y0.len()));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite { context: "ode initial state", location: "y0".into() });
        }
        if dynamics.num_shifts() != 1 {
            return Err(DeerError::Config("ode dynamics must use a single zero shift".into()));
        }
        if inputs.len() != grid.times().len() {
            return Err(DeerError::shape("ode input samples", grid.times().len(), inputs.len()));
        }
        if inputs.dim() != dynamics.input_dim() {
            return Err(DeerError::shape("ode input channels", dynamics.input_dim(), inputs.dim()));
        }
        Ok(OdeProblem { dynamics, y0, grid, inputs })
    }

    pub fn state_dim(&self) -> usize {
        self.y0.len()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }
}

/// Exponential discretization of the sampled linear system.
#[derive(Debug, Clone)]
pub struct ExponentialLinearizer<T> {
    deltas: Vec<T>,
    interpolation: Interpolation,
}

impl<T: Real> ExponentialLinearizer<T> {
    pub fn new(grid: &TimeGrid<T>, interpolation: Interpolation) -> Self {
        ExponentialLinearizer { deltas: grid.deltas().to_vec(), interpolation }
    }
}

impl<T: Real> Linearizer<T> for ExponentialLinearizer<T> {
    fn linearize(&self, n: usize, num_shifts: usize, g: &[T], z: &[T], initial: &[T]) -> Result<Linearization<T>> {
        if num_shifts != 1 {
            return Err(DeerError::Config(format!("ode linearizer supports a single shift, got {num_shifts}")));
        }
        let steps = self.deltas.len();
        let nn = n * n;
        if g.len() != (steps + 1) * nn || z.len() != (steps + 1) * n {
            return Err(DeerError::shape("ode samples", (steps + 1) * n, z.len()));
        }
        let mut transitions = vec![T::zero(); steps * nn];
        let mut weights = vec![T::zero(); steps * nn];
        let mut offsets = vec![T::zero(); steps * n];
        if n == 0 {
            return Ok(Linearization {
                system: LinearRecurrenceSystem::from_parts_unchecked(0, transitions, offsets, initial.to_vec()),
                forcing: ForcingMap::Weighted { weights, interpolation: self.interpolation },
            });
        }
        let interp = self.interpolation;
        transitions
            .par_chunks_mut(nn)
            .zip(weights.par_chunks_mut(nn))
            .zip(offsets.par_chunks_mut(n))
            .enumerate()
            .try_for_each_init(
                || (vec![T::zero(); nn], vec![T::zero(); n]),
                |(arg, zt), (i, ((a_i, w_i), b_i))| -> Result<()> {
                    let delta = self.deltas[i];
                    interp.sample(&g[i * nn..(i + 1) * nn], &g[(i + 1) * nn..(i + 2) * nn], arg);
                    for v in arg.iter_mut() {
                        *v = -*v * delta;
                    }
                    expm_phi1_into(n, arg, a_i, w_i)?;
                    for v in w_i.iter_mut() {
                        *v *= delta;
                    }
                    interp.sample(&z[i * n..(i + 1) * n], &z[(i + 1) * n..(i + 2) * n], zt);
                    matvec_into(n, w_i, zt, b_i);
                    Ok(())
                },
            )?;
        Ok(Linearization {
            system: LinearRecurrenceSystem::from_parts_unchecked(n, transitions, offsets, initial.to_vec()),
            forcing: ForcingMap::Weighted { weights, interpolation: interp },
        })
    }
}

/// Builds `Aᵢ = exp(−G̃ᵢΔᵢ)`, `bᵢ = Δᵢ φ₁(−G̃ᵢΔᵢ) z̃ᵢ` from `G` and `z`
/// sampled at all `L+1` grid points (`g` holds row-major `n × n` blocks).
pub fn discretize_linear<T: Real>(
    n: usize,
    g: &[T],
    z: &[T],
    grid: &TimeGrid<T>,
    y0: &[T],
    interpolation: Interpolation,
) -> Result<LinearRecurrenceSystem<T>> {
    if y0.len() != n {
        return Err(DeerError::shape("initial state", n, y0.len()));
    }
    if g.len() != grid.times().len() * n * n {
        return Err(DeerError::shape("G samples", grid.times().len() * n * n, g.len()));
    }
    ExponentialLinearizer::new(grid, interpolation)
        .linearize(n, 1, g, z, y0)
        .map(|l| l.system)
}

/// Solves the problem with midpoint interpolation. The returned sequence has
/// `L+1` rows, the first being `y0`.
pub fn deer_solve_ode<T: Real, D: Dynamics<T>>(
    problem: &OdeProblem<T, D>,
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, DeerReport)> {
    deer_solve_ode_with(problem, Interpolation::Midpoint, config).map(|(y, r, _)| (y, r))
}

/// [`deer_solve_ode`] with a chosen interpolation; also returns the final
/// linearization. An initial guess, if given, covers the `L` unknown rows.
pub fn deer_solve_ode_with<T: Real, D: Dynamics<T>>(
    problem: &OdeProblem<T, D>,
    interpolation: Interpolation,
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, DeerReport, Linearization<T>)> {
    let shifter = GridPointShifter::new(problem.y0.clone());
    let lin = ExponentialLinearizer::new(&problem.grid, interpolation);
    let (y, report, last) = deer_solve_keep(&problem.dynamics, &shifter, &lin, &problem.inputs, config)?;
    Ok((with_initial_row(&problem.y0, &y), report, last))
}

/// Linearization at a given trajectory (`L+1` rows including `y0`).
pub fn linearize_ode_at<T: Real, D: Dynamics<T>>(
    problem: &OdeProblem<T, D>,
    interpolation: Interpolation,
    trajectory: &StateSequence<T>,
) -> Result<Linearization<T>> {
    let n = problem.state_dim();
    if trajectory.len() != problem.steps() + 1 || trajectory.dim() != n {
        return Err(DeerError::shape(
            "ode trajectory",
            format!("{}x{n}", problem.steps() + 1),
            format!("{}x{}", trajectory.len(), trajectory.dim()),
        ));
    }
    let unknowns = StateSequence::from_flat_unchecked(problem.steps(), n, trajectory.as_slice()[n..].to_vec());
    let shifter = GridPointShifter::new(problem.y0.clone());
    let lin = ExponentialLinearizer::new(&problem.grid, interpolation);
    linearize_at(&problem.dynamics, &shifter, &lin, &problem.inputs, &unknowns)
}

pub(crate) fn with_initial_row<T: Real>(y0: &[T], rest: &StateSequence<T>) -> StateSequence<T> {
    let n = y0.len();
    let mut data = Vec::with_capacity((rest.len() + 1) * n);
    data.extend_from_slice(y0);
    data.extend_from_slice(rest.as_slice());
    StateSequence::from_flat_unchecked(rest.len() + 1, n, data)
}

fn lerp_input<T: Real>(a: &[T], b: &[T], theta: T, out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x + theta * (y - x);
    }
}

/// Classical RK4 with `substeps` equal sub-steps per grid interval, inputs
/// interpolated linearly. Returns the `L+1` grid samples.
pub fn reference_rk4<T: Real, D: Dynamics<T>>(problem: &OdeProblem<T, D>, substeps: usize) -> Result<StateSequence<T>> {
    if substeps == 0 {
        return Err(DeerError::Config("rk4 substeps must be at least 1".into()));
    }
    let n = problem.state_dim();
    let m = problem.inputs.dim();
    let steps = problem.steps();
    let mut out = Vec::with_capacity((steps + 1) * n);
    out.extend_from_slice(&problem.y0);
    let mut y = problem.y0.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let mut tmp = vec![T::zero(); n];
    let (mut xa, mut xm, mut xb) = (vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]);
    let sub = T::of(substeps as f64);
    let half = T::of(0.5);
    let sixth = T::of(1.0 / 6.0);
    let two = T::of(2.0);
    for i in 0..steps {
        let h = problem.grid.deltas()[i] / sub;
        let (x0, x1) = (problem.inputs.row(i), problem.inputs.row(i + 1));
        for s in 0..substeps {
            let t0 = T::of(s as f64) / sub;
            let t1 = T::of((s + 1) as f64) / sub;
            lerp_input(x0, x1, t0, &mut xa);
            lerp_input(x0, x1, half * (t0 + t1), &mut xm);
            lerp_input(x0, x1, t1, &mut xb);
            let f = &problem.dynamics;
            f.eval(&[&y], &xa, &mut k1);
            for j in 0..n {
                tmp[j] = y[j] + half * h * k1[j];
            }
            f.eval(&[&tmp], &xm, &mut k2);
            for j in 0..n {
                tmp[j] = y[j] + half * h * k2[j];
            }
            f.eval(&[&tmp], &xm, &mut k3);
            for j in 0..n {
                tmp[j] = y[j] + h * k3[j];
            }
            f.eval(&[&tmp], &xb, &mut k4);
            for j in 0..n {
                y[j] += sixth * h * (k1[j] + two * k2[j] + two * k3[j] + k4[j]);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite { context: "rk4 state", location: format!("grid step {}", i + 1) });
        }
        out.extend_from_slice(&y);
    }
    Ok(StateSequence::from_flat_unchecked(steps + 1, n, out))
}

/// Cap on inner iterations per step of the sequential fixed point.
const INNER_MAX_ITERS: usize = 500;

/// Marches the same discrete equations forward one step at a time. For the
/// midpoint mode each step is implicit and solved by an inner fixed-point
/// iteration to near machine precision; the left mode is explicit.
pub fn sequential_deer_fixed_point<T: Real, D: Dynamics<T>>(
    problem: &OdeProblem<T, D>,
    interpolation: Interpolation,
) -> Result<StateSequence<T>> {
    let n = problem.state_dim();
    let nn = n * n;
    let steps = problem.steps();
    let dynamics = &problem.dynamics;
    let eps = T::epsilon();
    let inner_tol = T::of(64.0) * eps;
    let (wl, wr) = interpolation.weights::<T>();

    let sample = |y: &[T], x: &[T], g: &mut [T], z: &mut [T], tmp: &mut [T]| -> Result<()> {
        dynamics.eval(&[y], x, z);
        dynamics.jacobian(&[y], x, 0, g);
        for v in g.iter_mut() {
            *v = -*v;
        }
        matvec_into(n, g, y, tmp);
        for (zj, &t) in z.iter_mut().zip(tmp.iter()) {
            *zj += t;
        }
        if z.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite { context: "dynamics sample", location: "sequential march".into() });
        }
        Ok(())
    };

    let mut out = Vec::with_capacity((steps + 1) * n);
    out.extend_from_slice(&problem.y0);
    let mut y = problem.y0.clone();
    let (mut gl, mut zl) = (vec![T::zero(); nn], vec![T::zero(); n]);
    let (mut gr, mut zr) = (vec![T::zero(); nn], vec![T::zero(); n]);
    let (mut arg, mut e, mut phi) = (vec![T::zero(); nn], vec![T::zero(); nn], vec![T::zero(); nn]);
    let (mut zt, mut tmp, mut next, mut ey) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);

    for i in 0..steps {
        let delta = problem.grid.deltas()[i];
        sample(&y, problem.inputs.row(i), &mut gl, &mut zl, &mut tmp)?;
        let mut guess = y.clone();
        let mut done = false;
        for _ in 0..INNER_MAX_ITERS {
            if wr != T::zero() {
                sample(&guess, problem.inputs.row(i + 1), &mut gr, &mut zr, &mut tmp)?;
            }
            for k in 0..nn {
                arg[k] = -(wl * gl[k] + wr * gr[k]) * delta;
            }
            for k in 0..n {
                zt[k] = wl * zl[k] + wr * zr[k];
            }
            expm_phi1_into(n, &arg, &mut e, &mut phi)?;
            matvec_into(n, &e, &y, &mut ey);
            matvec_into(n, &phi, &zt, &mut tmp);
            for k in 0..n {
                next[k] = ey[k] + delta * tmp[k];
            }
            let change = next.iter().zip(&guess).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            let scale = next.iter().fold(T::one(), |m, v| m.max(v.abs()));
            guess.copy_from_slice(&next);
            if wr == T::zero() || change <= inner_tol * scale {
                done = true;
                break;
            }
        }
        if !done {
            return Err(DeerError::Divergence {
                iteration: INNER_MAX_ITERS,
                reason: format!("inner fixed point did not settle at grid step {}", i + 1),
            });
        }
        y.copy_from_slice(&guess);
        out.extend_from_slice(&y);
    }
    Ok(StateSequence::from_flat_unchecked(steps + 1, n, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;

    fn scalar_grid(delta: f64) -> TimeGrid<f64> {
        TimeGrid::new(vec![0.0, delta]).unwrap()
    }

    #[test]
    fn zero_g_gives_quadrature() {
        let grid: TimeGrid<f64> = TimeGrid::new(vec![0.0, 0.1, 0.3]).unwrap();
        let g = vec![0.0; 3];
        let z = vec![1.0, 2.0, 4.0];
        let sys = discretize_linear(1, &g, &z, &grid, &[0.0], Interpolation::Midpoint).unwrap();
        assert_eq!(sys.transition(0), &[1.0]);
        assert!((sys.offset(0)[0] - 0.1 * 1.5).abs() < 1e-15);
        assert!((sys.offset(1)[0] - 0.2 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_decay_examples() {
        let grid = scalar_grid(0.1);
        let sys = discretize_linear(1, &[1.0, 1.0], &[0.0, 0.0], &grid, &[1.0], Interpolation::Midpoint).unwrap();
        assert!((sys.transition(0)[0] - 0.904_837_418_035_959_6).abs() < 1e-15);
        let sys = discretize_linear(1, &[1.0, 1.0], &[1.0, 1.0], &grid, &[1.0], Interpolation::Midpoint).unwrap();
        // G⁻¹(1 − e^{−GΔ})z by hand
        assert!((sys.offset(0)[0] - 0.095_162_581_964_040_43).abs() < 1e-15);
    }

    #[test]
    fn scalar_offset_matches_closed_form() {
        for &(gv, zv, d) in &[(0.7, -1.3, 0.05), (3.0, 0.4, 0.2), (-0.5, 2.0, 0.3), (12.0, 1.0, 0.01)] {
            let grid = scalar_grid(d);
            let sys = discretize_linear(1, &[gv, gv], &[zv, zv], &grid, &[0.0], Interpolation::Midpoint).unwrap();
            let direct = (1.0 - f64::exp(-gv * d)) * zv / gv;
            assert!((sys.offset(0)[0] - direct).abs() <= 1e-12 * direct.abs().max(1.0), "g={gv}");
        }
    }

    #[test]
    fn left_mode_ignores_right_samples() {
        let grid = scalar_grid(0.1);
        let a = discretize_linear(1, &[1.0, 5.0], &[1.0, 9.0], &grid, &[0.0], Interpolation::Left).unwrap();
        let b = discretize_linear(1, &[1.0, 1.0], &[1.0, 1.0], &grid, &[0.0], Interpolation::Midpoint).unwrap();
        assert_eq!(a, b);
    }

    fn decay() -> FnDynamics<f64> {
        FnDynamics::new(1, 0, |y: &[f64], _x, out: &mut [f64]| out[0] = -y[0])
    }

    fn logistic() -> FnDynamics<f64> {
        FnDynamics::new(1, 0, |y: &[f64], _x, out: &mut [f64]| out[0] = y[0] * (1.0 - y[0]))
            .with_jacobian(|y: &[f64], _x, out: &mut [f64]| out[0] = 1.0 - 2.0 * y[0])
    }

    #[test]
    fn linear_decay_is_exact_newton() {
        let grid = TimeGrid::uniform(0.0, 1.0, 1000).unwrap();
        let p = OdeProblem::autonomous(decay(), vec![1.0], grid).unwrap();
        let (y, report) = deer_solve_ode(&p, &DeerConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 2);
        assert_eq!(y.len(), 1001);
        assert!((y.row(1000)[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn logistic_matches_closed_form() {
        let grid = TimeGrid::uniform(0.0, 5.0, 2000).unwrap();
        let p = OdeProblem::autonomous(logistic(), vec![0.1], grid.clone()).unwrap();
        let (y, report) = deer_solve_ode(&p, &DeerConfig::default()).unwrap();
        assert!(report.converged);
        let err = grid
            .times()
            .iter()
            .enumerate()
            .map(|(i, &t)| (y.row(i)[0] - 1.0 / (1.0 + 9.0 * (-t).exp())).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "err {err}");
    }

    #[test]
    fn rk4_examples() {
        let still = FnDynamics::new(2, 0, |_y: &[f64], _x, out: &mut [f64]| out.fill(0.0));
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let p = OdeProblem::autonomous(still, vec![1.5, -2.0], grid).unwrap();
        let y = reference_rk4(&p, 3).unwrap();
        assert!(y.rows().all(|r| r == [1.5, -2.0]));

        let grid = TimeGrid::uniform(0.0, 1.0, 1000).unwrap();
        let p = OdeProblem::autonomous(decay(), vec![1.0], grid.clone()).unwrap();
        let y = reference_rk4(&p, 1).unwrap();
        for (i, &t) in grid.times().iter().enumerate() {
            assert!((y.row(i)[0] - (-t).exp()).abs() < 1e-10);
        }

        let grid = TimeGrid::uniform(0.0, 5.0, 2000).unwrap();
        let p = OdeProblem::autonomous(logistic(), vec![0.1], grid.clone()).unwrap();
        let y = reference_rk4(&p, 4).unwrap();
        for (i, &t) in grid.times().iter().enumerate() {
            assert!((y.row(i)[0] - 1.0 / (1.0 + 9.0 * (-t).exp())).abs() < 1e-9);
        }
        assert!(reference_rk4(&p, 0).is_err());
    }

    #[test]
    fn rk4_interpolates_inputs_linearly() {
        // y' = x(t) with x linear in t is integrated exactly
        let f = FnDynamics::new(1, 1, |_y: &[f64], x: &[f64], out: &mut [f64]| out[0] = x[0]);
        let grid = TimeGrid::uniform(0.0, 2.0, 4).unwrap();
        let x = InputSequence::from_flat(5, 1, grid.times().iter().map(|t| 3.0 * t).collect()).unwrap();
        let p = OdeProblem::new(f, vec![0.0], grid, x).unwrap();
        let y = reference_rk4(&p, 2).unwrap();
        assert!((y.row(4)[0] - 6.0).abs() < 1e-13);
    }

    #[test]
    fn sequential_fixed_point_agrees_with_deer() {
        let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        let p = OdeProblem::autonomous(decay(), vec![1.0], grid.clone()).unwrap();
        let (y, _) = deer_solve_ode(&p, &DeerConfig::default()).unwrap();
        let s = sequential_deer_fixed_point(&p, Interpolation::Midpoint).unwrap();
        let d = y.as_slice().iter().zip(s.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-12);

        let cfg = DeerConfig::default();
        for mode in [Interpolation::Midpoint, Interpolation::Left] {
            let p = OdeProblem::autonomous(logistic(), vec![0.1], TimeGrid::uniform(0.0, 5.0, 500).unwrap()).unwrap();
            let (y, _, _) = deer_solve_ode_with(&p, mode, &cfg).unwrap();
            let s = sequential_deer_fixed_point(&p, mode).unwrap();
            let d = y.as_slice().iter().zip(s.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 10.0 * cfg.tolerance, "{mode:?}: {d}");
        }
    }

    #[test]
    fn quadrature_paths_coincide() {
        let f = FnDynamics::new(1, 1, |_y: &[f64], x: &[f64], out: &mut [f64]| out[0] = x[0]);
        let grid: TimeGrid<f64> = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let x = InputSequence::from_flat(65, 1, grid.times().iter().map(|t| (4.0 * t).cos()).collect()).unwrap();
        let p = OdeProblem::new(f, vec![0.25], grid, x).unwrap();
        let (y, _) = deer_solve_ode(&p, &DeerConfig::default()).unwrap();
        let s = sequential_deer_fixed_point(&p, Interpolation::Midpoint).unwrap();
        for (a, b) in y.as_slice().iter().zip(s.as_slice()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn problem_validation() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        assert!(OdeProblem::autonomous(decay(), vec![1.0, 2.0], grid.clone()).is_err());
        assert!(OdeProblem::autonomous(decay(), vec![f64::NAN], grid.clone()).is_err());
        let f = FnDynamics::new(1, 1, |_y: &[f64], x: &[f64], out: &mut [f64]| out[0] = x[0]);
        assert!(OdeProblem::new(f, vec![0.0], grid, InputSequence::zeros(4, 1)).is_err());
        assert_eq!("left".parse::<Interpolation>().unwrap(), Interpolation::Left);
        assert!("quadratic".parse::<Interpolation>().is_err());
    }
}
