//! Sequence containers and the time grid.
//!
//! Sequences are stored step-major: row `i` holds the `dim` channels of step
//! `i` contiguously, so per-step kernels stream through memory.

use serde::{Deserialize, Serialize};

use crate::error::{DeerError, Result};
use crate::scalar::Real;

/// A `len × dim` array of samples, one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence<T> {
    len: usize,
    dim: usize,
    data: Vec<T>,
}

/// Discretized output signal the fixed-point iteration works on.
pub type StateSequence<T> = Sequence<T>;
/// External input signal sampled on the same steps as the states.
pub type InputSequence<T> = Sequence<T>;

impl<T: Real> Sequence<T> {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Sequence {
            len,
            dim,
            data: vec![T::zero(); len * dim],
        }
    }

    /// Input sequence with no channels, used by autonomous problems.
    pub fn empty(len: usize) -> Self {
        Self::zeros(len, 0)
    }

    /// Wraps step-major data, rejecting wrong lengths and non-finite entries.
    pub fn from_flat(len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != len * dim {
            return Err(DeerError::shape(
                "sequence data",
                format!("{len}x{dim} = {} entries", len * dim),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite {
                context: "sequence data",
                location: format!("step {}, channel {}", pos / dim.max(1), pos % dim.max(1)),
            });
        }
        Ok(Sequence { len, dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(DeerError::shape(
                "sequence rows",
                dim,
                format!("{} at row {i}", r.len()),
            ));
        }
        Self::from_flat(rows.len(), dim, rows.concat())
    }

    /// Skips the finiteness scan; the caller already validated the data.
    pub(crate) fn from_flat_unchecked(len: usize, dim: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), len * dim);
        Sequence { len, dim, data }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        (0..self.len).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of channels `range` for every step.
    pub fn channels(&self, range: std::ops::Range<usize>) -> Self {
        let width = range.len();
        let mut data = Vec::with_capacity(self.len * width);
        for r in self.rows() {
            data.extend_from_slice(&r[range.clone()]);
        }
        Sequence {
            len: self.len,
            dim: width,
            data,
        }
    }

    /// Rows `start, start + stride, ...`.
    pub fn strided_rows(&self, start: usize, stride: usize) -> Self {
        let mut data = Vec::new();
        let mut len = 0;
        for i in (start..self.len).step_by(stride.max(1)) {
            data.extend_from_slice(self.row(i));
            len += 1;
        }
        Sequence {
            len,
            dim: self.dim,
            data,
        }
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> Sequence<U> {
        Sequence {
            len: self.len,
            dim: self.dim,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Ordered sample times `t_0 < t_1 < ... < t_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    times: Vec<T>,
    deltas: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.len() < 2 {
            return Err(DeerError::Config(format!(
                "time grid needs at least two points, got {}",
                times.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(DeerError::NonFinite {
                context: "time grid",
                location: format!("index {i}"),
            });
        }
        let deltas: Vec<T> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(i) = deltas.iter().position(|d| *d <= T::zero()) {
            return Err(DeerError::Config(format!(
                "time grid must be strictly increasing (t[{}] = {} >= t[{}] = {})",
                i,
                times[i],
                i + 1,
                times[i + 1]
            )));
        }
        Ok(TimeGrid { times, deltas })
    }

    /// `steps + 1` equally spaced points from `start` to `end`.
    pub fn uniform(start: T, end: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(DeerError::Config("time grid needs at least one step".into()));
        }
        let h = (end - start) / T::of(steps as f64);
        let times = (0..=steps)
            .map(|i| {
                if i == steps {
                    end
                } else {
                    start + h * T::of(i as f64)
                }
            })
            .collect();
        Self::new(times)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn deltas(&self) -> &[T] {
        &self.deltas
    }

    /// Number of intervals `L`.
    pub fn steps(&self) -> usize {
        self.deltas.len()
    }
}
