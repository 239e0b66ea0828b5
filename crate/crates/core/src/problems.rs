//! Named built-in problems used by the CLI, the benches and the tests.
//!
//! Names are stable; a change to any problem's definition bumps
//! [`BUILTIN_VERSION`].

use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{DeerError, Result};
use crate::scalar::Real;

pub const BUILTIN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    Ode,
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// `y' = a·y(1 − y)`
    Logistic,
    /// `y₀' = y₁`, `y₁' = μ(1 − y₀²)y₁ − y₀`
    VanDerPol,
    /// ODE `y' = −a·y`
    Linear,
    /// Untrained GRU cell
    Gru,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [Builtin::Logistic, Builtin::VanDerPol, Builtin::Linear, Builtin::Gru];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Logistic => "logistic",
            Builtin::VanDerPol => "van-der-pol",
            Builtin::Linear => "linear",
            Builtin::Gru => "gru",
        }
    }

    pub fn kind(self) -> ProblemKind {
        match self {
            Builtin::Gru => ProblemKind::Rnn,
            _ => ProblemKind::Ode,
        }
    }
}

impl std::fmt::Display for Builtin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Builtin {
    type Err = DeerError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s || (s == "vdp" && *b == Builtin::VanDerPol))
            .ok_or_else(|| {
                let known: Vec<_> = Builtin::ALL.iter().map(|b| b.name()).collect();
                DeerError::Config(format!("unknown problem `{s}` (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic<T> {
    pub rate: T,
}

impl<T: Real> Logistic<T> {
    /// `y(t) = 1 / (1 + ((1 − y₀)/y₀) e^{−a t})`
    pub fn exact(&self, y0: T, t: T) -> T {
        T::one() / (T::one() + (T::one() - y0) / y0 * (-self.rate * t).exp())
    }
}

impl<T: Real> Dynamics<T> for Logistic<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn eval(&self, shifted: &[&[T]], _input: &[T], out: &mut [T]) {
        let y = shifted[0][0];
        out[0] = self.rate * y * (T::one() - y);
    }
    fn jacobian(&self, shifted: &[&[T]], _input: &[T], _shift: usize, out: &mut [T]) {
        out[0] = self.rate * (T::one() - T::of(2.0) * shifted[0][0]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanDerPol<T> {
    pub mu: T,
}

impl<T: Real> Dynamics<T> for VanDerPol<T> {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn eval(&self, shifted: &[&[T]], _input: &[T], out: &mut [T]) {
        let (a, b) = (shifted[0][0], shifted[0][1]);
        out[0] = b;
        out[1] = self.mu * (T::one() - a * a) * b - a;
    }
    fn jacobian(&self, shifted: &[&[T]], _input: &[T], _shift: usize, out: &mut [T]) {
        let (a, b) = (shifted[0][0], shifted[0][1]);
        out[0] = T::zero();
        out[1] = T::one();
        out[2] = -T::of(2.0) * self.mu * a * b - T::one();
        out[3] = self.mu * (T::one() - a * a);
    }
}

/// `y' = −a·y`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay<T> {
    pub rate: T,
}

impl<T: Real> Dynamics<T> for LinearDecay<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn eval(&self, shifted: &[&[T]], _input: &[T], out: &mut [T]) {
        out[0] = -self.rate * shifted[0][0];
    }
    fn jacobian(&self, _shifted: &[&[T]], _input: &[T], _shift: usize, out: &mut [T]) {
        out[0] = -self.rate;
    }
}

/// Recurrence `yᵢ = d·yᵢ₋₁ + xᵢ` with scalar state and input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCell<T> {
    pub decay: T,
}

impl<T: Real> Dynamics<T> for LinearCell<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, shifted: &[&[T]], input: &[T], out: &mut [T]) {
        out[0] = self.decay * shifted[0][0] + input[0];
    }
    fn jacobian(&self, _shifted: &[&[T]], _input: &[T], _shift: usize, out: &mut [T]) {
        out[0] = self.decay;
    }
}

/// Recurrence `yᵢ = r·yᵢ₋₁(1 − yᵢ₋₁)`; chaotic at `r = 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticMap<T> {
    pub r: T,
}

impl<T: Real> Dynamics<T> for LogisticMap<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn eval(&self, shifted: &[&[T]], _input: &[T], out: &mut [T]) {
        let y = shifted[0][0];
        out[0] = self.r * y * (T::one() - y);
    }
    fn jacobian(&self, shifted: &[&[T]], _input: &[T], _shift: usize, out: &mut [T]) {
        out[0] = self.r * (T::one() - T::of(2.0) * shifted[0][0]);
    }
}
