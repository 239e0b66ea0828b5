//! The user-facing contract for the nonlinear map `f`.
//!
//! A [`Dynamics`] evaluates `f(y(r − s₁), …, y(r − s_P), x(r), θ)` at one
//! sample point. Parameters θ live inside the implementor. The state
//! Jacobians `∂ₚf` default to central differences; cells with a closed form
//! (see [`crate::rnn::GruCell`]) override [`Dynamics::jacobian`].

use smallvec::SmallVec;

use crate::error::{DeerError, Result};
use crate::scalar::Real;
use crate::smallmat::SmallMatrix;

pub trait Dynamics<T: Real>: Sync {
    /// Number of state channels `n`.
    fn state_dim(&self) -> usize;

    /// Number of input channels `m` (zero for autonomous systems).
    fn input_dim(&self) -> usize;

    /// Number of shifted state arguments `P`.
    fn num_shifts(&self) -> usize {
        1
    }

    /// Writes `f(shifted, input)` into `out` (length `n`).
    fn eval(&self, shifted: &[&[T]], input: &[T], out: &mut [T]);

    /// Writes the row-major Jacobian `∂f/∂shifted[shift]` into `out` (`n × n`).
    fn jacobian(&self, shifted: &[&[T]], input: &[T], shift: usize, out: &mut [T]) {
        fd_jacobian_into(self, shifted, input, shift, FdStep::Auto, out);
    }
}

impl<T: Real, D: Dynamics<T> + ?Sized> Dynamics<T> for &D {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_shifts(&self) -> usize {
        (**self).num_shifts()
    }
    fn eval(&self, shifted: &[&[T]], input: &[T], out: &mut [T]) {
        (**self).eval(shifted, input, out)
    }
    fn jacobian(&self, shifted: &[&[T]], input: &[T], shift: usize, out: &mut [T]) {
        (**self).jacobian(shifted, input, shift, out)
    }
}

/// Step size for central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep<T> {
    /// `cbrt(ε) · max(1, |y_l|)` per coordinate.
    Auto,
    Fixed(T),
}

impl<T: Real> FdStep<T> {
    fn at(self, y: T) -> T {
        match self {
            FdStep::Auto => T::epsilon().cbrt() * T::one().max(y.abs()),
            FdStep::Fixed(h) => h,
        }
    }
}

fn fd_jacobian_into<T: Real, D: Dynamics<T> + ?Sized>(
    dynamics: &D,
    shifted: &[&[T]],
    input: &[T],
    shift: usize,
    step: FdStep<T>,
    out: &mut [T],
) {
    let n = dynamics.state_dim();
    let mut perturbed: Vec<T> = shifted[shift].to_vec();
    let mut plus = vec![T::zero(); n];
    let mut minus = vec![T::zero(); n];
    for l in 0..n {
        let y = perturbed[l];
        let h = step.at(y);
        perturbed[l] = y + h;
        let hp = perturbed[l] - y;
        eval_with(dynamics, shifted, shift, &perturbed, input, &mut plus);
        perturbed[l] = y - h;
        let hm = y - perturbed[l];
        eval_with(dynamics, shifted, shift, &perturbed, input, &mut minus);
        perturbed[l] = y;
        // representable step sizes, so the quotient sees the actual spacing
        let inv = T::one() / (hp + hm);
        for k in 0..n {
            out[k * n + l] = (plus[k] - minus[k]) * inv;
        }
    }
}

fn eval_with<T: Real, D: Dynamics<T> + ?Sized>(
    dynamics: &D,
    shifted: &[&[T]],
    shift: usize,
    replacement: &[T],
    input: &[T],
    out: &mut [T],
) {
    let args: SmallVec<[&[T]; 4]> = shifted
        .iter()
        .enumerate()
        .map(|(p, s)| if p == shift { replacement } else { *s })
        .collect();
    dynamics.eval(&args, input, out);
}

/// Central-difference Jacobian `∂f/∂shifted[shift]`, accurate to `O(h²)`.
pub fn finite_difference_jacobian<T: Real, D: Dynamics<T> + ?Sized>(
    dynamics: &D,
    shifted: &[&[T]],
    input: &[T],
    shift: usize,
    step: FdStep<T>,
) -> Result<SmallMatrix<T>> {
    let n = dynamics.state_dim();
    if shifted.len() != dynamics.num_shifts() {
        return Err(DeerError::shape("shifted states", dynamics.num_shifts(), shifted.len()));
    }
    if shift >= shifted.len() {
        return Err(DeerError::shape("shift index", format!("< {}", shifted.len()), shift));
    }
    if let Some(s) = shifted.iter().find(|s| s.len() != n) {
        return Err(DeerError::shape("shifted state length", n, s.len()));
    }
    if input.len() != dynamics.input_dim() {
        return Err(DeerError::shape("input length", dynamics.input_dim(), input.len()));
    }
    if let FdStep::Fixed(h) = step {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(DeerError::Config(format!("finite-difference step must be positive, got {h}")));
        }
    }
    let mut base = vec![T::zero(); n];
    dynamics.eval(shifted, input, &mut base);
    if let Some(k) = base.iter().position(|v| !v.is_finite()) {
        return Err(DeerError::NonFinite {
            context: "dynamics output",
            location: format!("component {k} at the base point"),
        });
    }
    let mut out = vec![T::zero(); n * n];
    fd_jacobian_into(dynamics, shifted, input, shift, step, &mut out);
    if let Some(idx) = out.iter().position(|v| !v.is_finite()) {
        return Err(DeerError::NonFinite {
            context: "finite-difference jacobian",
            location: format!("entry ({}, {})", idx / n, idx % n),
        });
    }
    Ok(SmallMatrix::from_vec_unchecked(n, out))
}

type StepFn<T> = Box<dyn Fn(&[T], &[T], &mut [T]) + Send + Sync>;

/// Single-shift dynamics built from closures `(y, x, out)`.
pub struct FnDynamics<T> {
    n: usize,
    m: usize,
    eval: StepFn<T>,
    jacobian: Option<StepFn<T>>,
}

impl<T: Real> FnDynamics<T> {
    pub fn new<F>(state_dim: usize, input_dim: usize, eval: F) -> Self
    where
        F: Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
    {
        FnDynamics {
            n: state_dim,
            m: input_dim,
            eval: Box::new(eval),
            jacobian: None,
        }
    }

    /// Supplies an analytic `∂f/∂y` writing a row-major `n × n` matrix.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Box::new(jacobian));
        self
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }
}

impl<T: Real> Dynamics<T> for FnDynamics<T> {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn eval(&self, shifted: &[&[T]], input: &[T], out: &mut [T]) {
        (self.eval)(shifted[0], input, out)
    }

    fn jacobian(&self, shifted: &[&[T]], input: &[T], shift: usize, out: &mut [T]) {
        match &self.jacobian {
            Some(j) => j(shifted[0], input, out),
            None => fd_jacobian_into(self, shifted, input, shift, FdStep::Auto, out),
        }
    }
}
