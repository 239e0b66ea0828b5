//! Discrete recurrences `yᵢ = f(yᵢ₋₁, xᵢ)` and the GRU cell.
//!
//! The GRU uses the reset-before-candidate convention:
//!
//! ```text
//! z  = σ(W_z x + U_z y + b_z)
//! r  = σ(W_r x + U_r y + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ y) + b_h)
//! y' = (1 − z) ⊙ y + z ⊙ h̃
//! ```
//!
//! Input weights are `n × m`, recurrent weights `n × n`, all row-major. The
//! flat parameter order is `W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DeerConfig, DeerReport};
use crate::dynamics::Dynamics;
use crate::engine::{deer_solve_keep, linearize_at, Linearization, PreviousStepShifter, RecurrenceLinearizer};
use crate::error::{DeerError, Result};
use crate::scalar::Real;
use crate::sensitivity::ParamDerivatives;
use crate::smallmat::SmallMatrix;
use crate::types::{InputSequence, StateSequence};

const BLOB_MAGIC: &[u8; 4] = b"GRU1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams<T> {
    pub state_dim: usize,
    pub input_dim: usize,
    pub w_z: Vec<T>,
    pub w_r: Vec<T>,
    pub w_h: Vec<T>,
    pub u_z: Vec<T>,
    pub u_r: Vec<T>,
    pub u_h: Vec<T>,
    pub b_z: Vec<T>,
    pub b_r: Vec<T>,
    pub b_h: Vec<T>,
}

impl<T: Real> GruParams<T> {
    pub fn zeros(state_dim: usize, input_dim: usize) -> Self {
        let (n, m) = (state_dim, input_dim);
        GruParams {
            state_dim,
            input_dim,
            w_z: vec![T::zero(); n * m],
            w_r: vec![T::zero(); n * m],
            w_h: vec![T::zero(); n * m],
            u_z: vec![T::zero(); n * n],
            u_r: vec![T::zero(); n * n],
            u_h: vec![T::zero(); n * n],
            b_z: vec![T::zero(); n],
            b_r: vec![T::zero(); n],
            b_h: vec![T::zero(); n],
        }
    }

    /// Untrained cell: weights uniform in `±1/√n`, biases zero.
    pub fn random(state_dim: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (state_dim.max(1) as f64).sqrt();
        let mut p = Self::zeros(state_dim, input_dim);
        for w in [&mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.u_z, &mut p.u_r, &mut p.u_h] {
            for v in w.iter_mut() {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        }
        p
    }

    pub fn num_params(&self) -> usize {
        let (n, m) = (self.state_dim, self.input_dim);
        3 * n * m + 3 * n * n + 3 * n
    }

    fn fields(&self) -> [&Vec<T>; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    fn field_lens(n: usize, m: usize) -> [usize; 9] {
        [n * m, n * m, n * m, n * n, n * n, n * n, n, n, n]
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];
        let lens = Self::field_lens(self.state_dim, self.input_dim);
        for ((f, &len), name) in self.fields().iter().zip(&lens).zip(NAMES) {
            if f.len() != len {
                return Err(DeerError::Shape {
                    context: "gru parameters",
                    expected: format!("{name} of length {len}"),
                    found: f.len().to_string(),
                });
            }
            if let Some(i) = f.iter().position(|v| !v.is_finite()) {
                return Err(DeerError::NonFinite { context: "gru parameters", location: format!("{name}[{i}]") });
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.fields().iter().flat_map(|f| f.iter().copied()).collect()
    }

    pub fn from_flat(state_dim: usize, input_dim: usize, flat: &[T]) -> Result<Self> {
        let total: usize = Self::field_lens(state_dim, input_dim).iter().sum();
        if flat.len() != total {
            return Err(DeerError::shape("gru flat parameters", total, flat.len()));
        }
        let p = Self::from_flat_unchecked(state_dim, input_dim, flat);
        p.validate()?;
        Ok(p)
    }

    fn from_flat_unchecked(n: usize, m: usize, flat: &[T]) -> Self {
        let lens = Self::field_lens(n, m);
        let mut at = 0;
        let mut take = |len: usize| {
            let v = flat[at..at + len].to_vec();
            at += len;
            v
        };
        GruParams {
            state_dim: n,
            input_dim: m,
            w_z: take(lens[0]),
            w_r: take(lens[1]),
            w_h: take(lens[2]),
            u_z: take(lens[3]),
            u_r: take(lens[4]),
            u_h: take(lens[5]),
            b_z: take(lens[6]),
            b_r: take(lens[7]),
            b_h: take(lens[8]),
        }
    }

    /// Binary blob: `GRU1`, `n` and `m` as little-endian `u32`, then the flat
    /// parameters as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.num_params());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        for v in self.to_flat() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != BLOB_MAGIC {
            return Err(DeerError::Config("not a GRU parameter blob".into()));
        }
        let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
        let (n, m) = (word(4), word(8));
        let body = &bytes[12..];
        if !body.len().is_multiple_of(8) {
            return Err(DeerError::Config("truncated GRU parameter blob".into()));
        }
        let flat: Vec<T> = body
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        Self::from_flat(n, m, &flat)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| DeerError::Config(format!("gru parameters: {e}")))?;
        p.validate()?;
        Ok(p)
    }
}

fn sigmoid<T: Real>(a: T) -> T {
    T::one() / (T::one() + (-a).exp())
}

/// `out = W x + U y + b` for one gate.
#[allow(clippy::too_many_arguments)]
fn affine<T: Real>(n: usize, m: usize, w: &[T], x: &[T], u: &[T], y: &[T], b: &[T], out: &mut [T]) {
    for k in 0..n {
        let mut acc = b[k];
        for (a, &xv) in w[k * m..(k + 1) * m].iter().zip(x) {
            acc += *a * xv;
        }
        for (a, &yv) in u[k * n..(k + 1) * n].iter().zip(y) {
            acc += *a * yv;
        }
        out[k] = acc;
    }
}

struct Gates<T> {
    z: Vec<T>,
    r: Vec<T>,
    h: Vec<T>,
    /// `r ⊙ y`
    q: Vec<T>,
}

fn gates<T: Real>(p: &GruParams<T>, y: &[T], x: &[T]) -> Gates<T> {
    let (n, m) = (p.state_dim, p.input_dim);
    let mut z = vec![T::zero(); n];
    let mut r = vec![T::zero(); n];
    let mut h = vec![T::zero(); n];
    affine(n, m, &p.w_z, x, &p.u_z, y, &p.b_z, &mut z);
    affine(n, m, &p.w_r, x, &p.u_r, y, &p.b_r, &mut r);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let q: Vec<T> = r.iter().zip(y).map(|(&a, &b)| a * b).collect();
    affine(n, m, &p.w_h, x, &p.u_h, &q, &p.b_h, &mut h);
    h.iter_mut().for_each(|v| *v = v.tanh());
    Gates { z, r, h, q }
}

fn check_step_shapes<T: Real>(p: &GruParams<T>, y: &[T], x: &[T]) -> Result<()> {
    if y.len() != p.state_dim {
        return Err(DeerError::shape("gru state", p.state_dim, y.len()));
    }
    if x.len() != p.input_dim {
        return Err(DeerError::shape("gru input", p.input_dim, x.len()));
    }
    Ok(())
}

fn step_into<T: Real>(p: &GruParams<T>, y: &[T], x: &[T], out: &mut [T]) {
    let g = gates(p, y, x);
    for k in 0..p.state_dim {
        out[k] = (T::one() - g.z[k]) * y[k] + g.z[k] * g.h[k];
    }
}

fn jacobian_into<T: Real>(p: &GruParams<T>, y: &[T], x: &[T], out: &mut [T]) {
    let n = p.state_dim;
    let g = gates(p, y, x);
    // s_j = y_j r_j (1 − r_j)
    let s: Vec<T> = (0..n).map(|j| y[j] * g.r[j] * (T::one() - g.r[j])).collect();
    for k in 0..n {
        let (zk, hk) = (g.z[k], g.h[k]);
        let cz = (hk - y[k]) * zk * (T::one() - zk);
        let ch = zk * (T::one() - hk * hk);
        let uh = &p.u_h[k * n..(k + 1) * n];
        let row = &mut out[k * n..(k + 1) * n];
        for l in 0..n {
            row[l] = cz * p.u_z[k * n + l] + ch * uh[l] * g.r[l];
        }
        for j in 0..n {
            let c = ch * uh[j] * s[j];
            for (o, &u) in row.iter_mut().zip(&p.u_r[j * n..(j + 1) * n]) {
                *o += c * u;
            }
        }
        row[k] += T::one() - zk;
    }
}

/// One GRU step.
pub fn gru_step<T: Real>(params: &GruParams<T>, y_prev: &[T], x: &[T]) -> Result<Vec<T>> {
    check_step_shapes(params, y_prev, x)?;
    let mut out = vec![T::zero(); params.state_dim];
    step_into(params, y_prev, x, &mut out);
    Ok(out)
}

/// Analytic `∂y'/∂y_prev`.
pub fn gru_jacobian<T: Real>(params: &GruParams<T>, y_prev: &[T], x: &[T]) -> Result<SmallMatrix<T>> {
    check_step_shapes(params, y_prev, x)?;
    let n = params.state_dim;
    let mut out = vec![T::zero(); n * n];
    jacobian_into(params, y_prev, x, &mut out);
    SmallMatrix::new(n, out)
}

/// Cotangents of the three gate pre-activations, plus `r ⊙ y`.
struct GateCotangents<T> {
    z: Vec<T>,
    r: Vec<T>,
    h: Vec<T>,
    q: Vec<T>,
}

fn gate_cotangents<T: Real>(p: &GruParams<T>, y: &[T], x: &[T], w: &[T]) -> GateCotangents<T> {
    let n = p.state_dim;
    let g = gates(p, y, x);
    let one = T::one();
    let ga_z: Vec<T> = (0..n).map(|k| w[k] * (g.h[k] - y[k]) * g.z[k] * (one - g.z[k])).collect();
    let ga_h: Vec<T> = (0..n).map(|k| w[k] * g.z[k] * (one - g.h[k] * g.h[k])).collect();
    let mut ga_r = vec![T::zero(); n];
    for k in 0..n {
        for j in 0..n {
            ga_r[j] += p.u_h[k * n + j] * ga_h[k];
        }
    }
    for j in 0..n {
        ga_r[j] *= y[j] * g.r[j] * (one - g.r[j]);
    }
    GateCotangents { z: ga_z, r: ga_r, h: ga_h, q: g.q }
}

/// A GRU cell usable as [`Dynamics`].
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<T> {
    params: GruParams<T>,
}

impl<T: Real> GruCell<T> {
    pub fn new(params: GruParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(GruCell { params })
    }

    pub fn params(&self) -> &GruParams<T> {
        &self.params
    }
}

impl<T: Real> Dynamics<T> for GruCell<T> {
    fn state_dim(&self) -> usize {
        self.params.state_dim
    }

    fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    fn eval(&self, shifted: &[&[T]], input: &[T], out: &mut [T]) {
        step_into(&self.params, shifted[0], input, out)
    }

    fn jacobian(&self, shifted: &[&[T]], input: &[T], _shift: usize, out: &mut [T]) {
        jacobian_into(&self.params, shifted[0], input, out)
    }
}

impl<T: Real> ParamDerivatives<T> for GruCell<T> {
    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn param_jvp(&self, shifted: &[&[T]], input: &[T], tangent: &[T], out: &mut [T]) {
        let p = &self.params;
        let (n, m) = (p.state_dim, p.input_dim);
        let y = shifted[0];
        let d = GruParams::from_flat_unchecked(n, m, tangent);
        let g = gates(p, y, input);
        let one = T::one();
        let mut da_z = vec![T::zero(); n];
        let mut da_r = vec![T::zero(); n];
        affine(n, m, &d.w_z, input, &d.u_z, y, &d.b_z, &mut da_z);
        affine(n, m, &d.w_r, input, &d.u_r, y, &d.b_r, &mut da_r);
        // d(r ⊙ y) through the reset gate
        let dq: Vec<T> = (0..n).map(|j| g.r[j] * (one - g.r[j]) * da_r[j] * y[j]).collect();
        let mut da_h = vec![T::zero(); n];
        affine(n, m, &d.w_h, input, &d.u_h, &g.q, &d.b_h, &mut da_h);
        for k in 0..n {
            for j in 0..n {
                da_h[k] += p.u_h[k * n + j] * dq[j];
            }
        }
        for k in 0..n {
            let dz = g.z[k] * (one - g.z[k]) * da_z[k];
            let dh = (one - g.h[k] * g.h[k]) * da_h[k];
            out[k] = (g.h[k] - y[k]) * dz + g.z[k] * dh;
        }
    }

    fn param_vjp(&self, shifted: &[&[T]], input: &[T], cotangent: &[T], grad: &mut [T]) {
        let p = &self.params;
        let (n, m) = (p.state_dim, p.input_dim);
        let y = shifted[0];
        let ga = gate_cotangents(p, y, input, cotangent);
        let (nm, nn) = (n * m, n * n);
        let (w_part, rest) = grad.split_at_mut(3 * nm);
        let (u_part, b_part) = rest.split_at_mut(3 * nn);
        for (gi, (a, rhs)) in [(&ga.z, y), (&ga.r, y), (&ga.h, &ga.q[..])].into_iter().enumerate() {
            let w = &mut w_part[gi * nm..(gi + 1) * nm];
            let u = &mut u_part[gi * nn..(gi + 1) * nn];
            let b = &mut b_part[gi * n..(gi + 1) * n];
            for k in 0..n {
                for c in 0..m {
                    w[k * m + c] += a[k] * input[c];
                }
                for l in 0..n {
                    u[k * n + l] += a[k] * rhs[l];
                }
                b[k] += a[k];
            }
        }
    }
    fn input_vjp(&self, shifted: &[&[T]], input: &[T], cotangent: &[T], out: &mut [T]) {
        let p = &self.params;
        let (n, m) = (p.state_dim, p.input_dim);
        let ga = gate_cotangents(p, shifted[0], input, cotangent);
        out[..m].fill(T::zero());
        for k in 0..n {
            for c in 0..m {
                out[c] += p.w_z[k * m + c] * ga.z[k] + p.w_r[k * m + c] * ga.r[k] + p.w_h[k * m + c] * ga.h[k];
            }
        }
    }
}

fn check_rnn_inputs<T: Real, D: Dynamics<T> + ?Sized>(cell: &D, inputs: &InputSequence<T>, y0: &[T]) -> Result<()> {
    if y0.len() != cell.state_dim() {
        return Err(DeerError::shape("initial state", cell.state_dim(), y0.len()));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(DeerError::NonFinite { context: "initial state", location: "y0".into() });
    }
    if inputs.dim() != cell.input_dim() {
        return Err(DeerError::shape("input channels", cell.input_dim(), inputs.dim()));
    }
    if cell.num_shifts() != 1 {
        return Err(DeerError::Config("recurrent cells take a single previous state".into()));
    }
    Ok(())
}

/// DEER evaluation of `yᵢ = f(yᵢ₋₁, xᵢ)`, `i = 1..L`. Returns `y₁..y_L`.
pub fn deer_eval_rnn<T: Real, D: Dynamics<T> + ?Sized>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, DeerReport)> {
    deer_eval_rnn_keep(cell, inputs, y0, config).map(|(y, r, _)| (y, r))
}

/// [`deer_eval_rnn`] that also returns the final linearization.
pub fn deer_eval_rnn_keep<T: Real, D: Dynamics<T> + ?Sized>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, DeerReport, Linearization<T>)> {
    check_rnn_inputs(cell, inputs, y0)?;
    deer_solve_keep(cell, &PreviousStepShifter::new(y0.to_vec()), &RecurrenceLinearizer, inputs, config)
}

/// Linearization of the recurrence at the given states.
pub fn linearize_rnn_at<T: Real, D: Dynamics<T> + ?Sized>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
    states: &StateSequence<T>,
) -> Result<Linearization<T>> {
    check_rnn_inputs(cell, inputs, y0)?;
    linearize_at(cell, &PreviousStepShifter::new(y0.to_vec()), &RecurrenceLinearizer, inputs, states)
}

/// Left-to-right evaluation; the ground truth for [`deer_eval_rnn`].
pub fn sequential_eval_rnn<T: Real, D: Dynamics<T> + ?Sized>(
    cell: &D,
    inputs: &InputSequence<T>,
    y0: &[T],
) -> Result<StateSequence<T>> {
    check_rnn_inputs(cell, inputs, y0)?;
    let n = cell.state_dim();
    let mut out = vec![T::zero(); inputs.len() * n];
    let mut prev = y0.to_vec();
    if n > 0 {
        for (i, row) in out.chunks_exact_mut(n).enumerate() {
            cell.eval(&[&prev], inputs.row(i), row);
            prev.copy_from_slice(row);
        }
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite { context: "sequential evaluation", location: format!("step {}", p / n + 1) });
        }
    }
    Ok(StateSequence::from_flat_unchecked(inputs.len(), n, out))
}

/// Independent DEER solves over a batch, run concurrently.
pub fn deer_eval_rnn_batch<T: Real, D: Dynamics<T> + ?Sized>(
    cell: &D,
    inputs: &[InputSequence<T>],
    y0: &[Vec<T>],
    config: &DeerConfig<T>,
) -> Result<Vec<(StateSequence<T>, DeerReport)>> {
    if inputs.len() != y0.len() {
        return Err(DeerError::shape("batch size", inputs.len(), y0.len()));
    }
    inputs.par_iter().zip(y0.par_iter()).map(|(x, y)| deer_eval_rnn(cell, x, y, config)).collect()
}

/// Sequential evaluation over a batch; batch elements run concurrently.
pub fn sequential_eval_rnn_batch<T: Real, D: Dynamics<T> + ?Sized>(
    cell: &D,
    inputs: &[InputSequence<T>],
    y0: &[Vec<T>],
) -> Result<Vec<StateSequence<T>>> {
    if inputs.len() != y0.len() {
        return Err(DeerError::shape("batch size", inputs.len(), y0.len()));
    }
    inputs.par_iter().zip(y0.par_iter()).map(|(x, y)| sequential_eval_rnn(cell, x, y)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    pub channels: Range<usize>,
    pub stride: usize,
}

/// Channels split into heads, each evolving over lanes of stride `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadLayout {
    heads: Vec<Head>,
    state_dim: usize,
}

impl HeadLayout {
    /// Heads must cover `0..state_dim` contiguously in order, with strides ≥ 1.
    pub fn new(heads: Vec<Head>, state_dim: usize) -> Result<Self> {
        let mut next = 0;
        for (i, h) in heads.iter().enumerate() {
            if h.stride == 0 {
                return Err(DeerError::Config(format!("head {i} has stride 0")));
            }
            if h.channels.start != next || h.channels.end <= h.channels.start {
                return Err(DeerError::Config(format!(
                    "head {i} covers {:?}, expected a non-empty range starting at {next}",
                    h.channels
                )));
            }
            next = h.channels.end;
        }
        if next != state_dim {
            return Err(DeerError::Config(format!("heads cover 0..{next}, state has {state_dim} channels")));
        }
        Ok(HeadLayout { heads, state_dim })
    }

    /// `num_heads` equal-width heads with strides `2⁰, 2¹, …, 2^(levels−1)`
    /// assigned round-robin.
    pub fn exponential(state_dim: usize, num_heads: usize, levels: u32) -> Result<Self> {
        if num_heads == 0 || !state_dim.is_multiple_of(num_heads) || levels == 0 {
            return Err(DeerError::Config(format!("cannot split {state_dim} channels into {num_heads} equal heads")));
        }
        let w = state_dim / num_heads;
        let heads = (0..num_heads)
            .map(|h| Head { channels: h * w..(h + 1) * w, stride: 1usize << (h as u32 % levels) })
            .collect();
        Self::new(heads, state_dim)
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
}

/// Evaluates every (head, lane) recurrence with DEER and re-interleaves the
/// results. Lane `j` of a stride-`s` head sees inputs `j, j+s, j+2s, …` and
/// starts from that head's slice of `y0`. Reports are ordered by head, then
/// lane.
pub fn eval_strided<T: Real, D: Dynamics<T>>(
    cells: &[D],
    layout: &HeadLayout,
    inputs: &InputSequence<T>,
    y0: &[T],
    config: &DeerConfig<T>,
) -> Result<(StateSequence<T>, Vec<DeerReport>)> {
    if cells.len() != layout.heads.len() {
        return Err(DeerError::shape("cells per head", layout.heads.len(), cells.len()));
    }
    if y0.len() != layout.state_dim {
        return Err(DeerError::shape("initial state", layout.state_dim, y0.len()));
    }
    for (cell, head) in cells.iter().zip(&layout.heads) {
        if cell.state_dim() != head.channels.len() {
            return Err(DeerError::shape("head cell state", head.channels.len(), cell.state_dim()));
        }
    }
    let lanes: Vec<(usize, usize)> = layout
        .heads
        .iter()
        .enumerate()
        .flat_map(|(h, head)| (0..head.stride.min(inputs.len())).map(move |j| (h, j)))
        .collect();
    let results: Vec<(StateSequence<T>, DeerReport)> = lanes
        .par_iter()
        .map(|&(h, j)| {
            let head = &layout.heads[h];
            let x = inputs.strided_rows(j, head.stride);
            deer_eval_rnn(&cells[h], &x, &y0[head.channels.clone()], config)
        })
        .collect::<Result<_>>()?;

    let mut out = StateSequence::zeros(inputs.len(), layout.state_dim);
    let mut reports = Vec::with_capacity(results.len());
    for (&(h, j), (lane, report)) in lanes.iter().zip(results) {
        let head = &layout.heads[h];
        for (k, row) in lane.rows().enumerate() {
            out.row_mut(j + k * head.stride)[head.channels.clone()].copy_from_slice(row);
        }
        reports.push(report);
    }
    Ok((out, reports))
}
