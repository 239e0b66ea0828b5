//! Parallel inclusive scan for affine recurrences `yᵢ = Aᵢ yᵢ₋₁ + bᵢ`.
//!
//! Each step is a pair `(Aᵢ | bᵢ)` and pairs compose with
//!
//! ```text
//! (A | a) • (B | b) = (B·A | B·a + b)      // left operand is earlier in time
//! ```
//!
//! which is associative with identity `(I | 0)`. The parallel solver is a
//! two-pass reduce-then-scan over fixed-size chunks:
//!
//! 1. upsweep: every chunk but the last folds its elements into one pair;
//! 2. a serial spine pushes `y₀` through the chunk aggregates, giving the
//!    state entering each chunk;
//! 3. downsweep: every chunk replays its own steps from that entry state.
//!
//! The combination tree depends only on the chunk size, never on the number
//! of worker threads, so results are bitwise reproducible across pools.

use std::cell::Cell;

use rayon::prelude::*;

use crate::error::{DeerError, Result};
use crate::scalar::Real;
use crate::smallmat::{matmul_into, matvec_add_into, matvec_into, SmallMatrix};

pub const DEFAULT_CHUNK_SIZE: usize = 256;

/// Deliberate corruption of the scan, used to check that verification
/// suites notice a broken operator.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// Subtracts instead of adds the offset term in the operator.
    SignFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    /// Steps per chunk; fixes the combination tree.
    pub chunk_size: usize,
    #[doc(hidden)]
    pub fault: FaultInjection,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            fault: FaultInjection::None,
        }
    }
}

impl ScanConfig {
    pub fn with_chunk_size(chunk_size: usize) -> Self {
        ScanConfig {
            chunk_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(DeerError::Config("scan chunk size must be at least 1".into()));
        }
        Ok(())
    }

    fn offset_sign<T: Real>(&self) -> T {
        match self.fault {
            FaultInjection::None => T::one(),
            FaultInjection::SignFlip => -T::one(),
        }
    }
}

/// One `(M | v)` pair of the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanElement<T> {
    pub matrix: SmallMatrix<T>,
    pub vector: Vec<T>,
}

impl<T: Real> ScanElement<T> {
    pub fn new(matrix: SmallMatrix<T>, vector: Vec<T>) -> Result<Self> {
        if vector.len() != matrix.n() {
            return Err(DeerError::shape("scan element vector", matrix.n(), vector.len()));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite {
                context: "scan element vector",
                location: format!("index {i}"),
            });
        }
        Ok(ScanElement { matrix, vector })
    }

    /// `(I | 0)`
    pub fn identity(n: usize) -> Self {
        ScanElement {
            matrix: SmallMatrix::identity(n),
            vector: vec![T::zero(); n],
        }
    }

    /// `(I | y₀)`, the element that seeds a recurrence.
    pub fn initial(y0: Vec<T>) -> Self {
        ScanElement {
            matrix: SmallMatrix::identity(y0.len()),
            vector: y0,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }
}

/// `earlier • later = (later.M · earlier.M | later.M · earlier.v + later.v)`.
pub fn combine<T: Real>(earlier: &ScanElement<T>, later: &ScanElement<T>) -> Result<ScanElement<T>> {
    let n = earlier.n();
    if later.n() != n {
        return Err(DeerError::shape("combine", n, later.n()));
    }
    let mut m = vec![T::zero(); n * n];
    matmul_into(n, later.matrix.as_slice(), earlier.matrix.as_slice(), &mut m);
    let mut v = vec![T::zero(); n];
    matvec_add_into(n, later.matrix.as_slice(), &earlier.vector, &later.vector, &mut v);
    Ok(ScanElement {
        matrix: SmallMatrix::from_vec_unchecked(n, m),
        vector: v,
    })
}

/// Per-step affine maps `yᵢ = Aᵢ yᵢ₋₁ + bᵢ` plus `y₀`, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRecurrenceSystem<T> {
    n: usize,
    len: usize,
    transitions: Vec<T>,
    offsets: Vec<T>,
    initial: Vec<T>,
}

impl<T: Real> LinearRecurrenceSystem<T> {
    pub fn new(n: usize, transitions: Vec<T>, offsets: Vec<T>, initial: Vec<T>) -> Result<Self> {
        let len = if n == 0 { 0 } else { offsets.len() / n };
        if initial.len() != n {
            return Err(DeerError::shape("initial state", n, initial.len()));
        }
        if n > 0 && !offsets.len().is_multiple_of(n) {
            return Err(DeerError::shape("offsets", format!("multiple of {n}"), offsets.len()));
        }
        if transitions.len() != len * n * n {
            return Err(DeerError::shape("transitions", len * n * n, transitions.len()));
        }
        for (context, data) in [("transitions", &transitions), ("offsets", &offsets), ("initial state", &initial)] {
            if let Some(p) = data.iter().position(|v| !v.is_finite()) {
                return Err(DeerError::NonFinite {
                    context,
                    location: format!("flat index {p}"),
                });
            }
        }
        Ok(LinearRecurrenceSystem {
            n,
            len,
            transitions,
            offsets,
            initial,
        })
    }

    pub(crate) fn from_parts_unchecked(n: usize, transitions: Vec<T>, offsets: Vec<T>, initial: Vec<T>) -> Self {
        let len = if n == 0 { 0 } else { offsets.len() / n };
        debug_assert_eq!(transitions.len(), len * n * n);
        LinearRecurrenceSystem {
            n,
            len,
            transitions,
            offsets,
            initial,
        }
    }

    /// Builds the system a scan over `init, elems` evaluates. Only the vector
    /// part of `init` reaches the outputs.
    pub fn from_elements(init: &ScanElement<T>, elems: &[ScanElement<T>]) -> Result<Self> {
        let n = init.n();
        let mut transitions = Vec::with_capacity(elems.len() * n * n);
        let mut offsets = Vec::with_capacity(elems.len() * n);
        for (i, e) in elems.iter().enumerate() {
            if e.n() != n {
                return Err(DeerError::shape("scan element", n, format!("{} at position {i}", e.n())));
            }
            transitions.extend_from_slice(e.matrix.as_slice());
            offsets.extend_from_slice(&e.vector);
        }
        Self::new(n, transitions, offsets, init.vector.clone())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn transition(&self, i: usize) -> &[T] {
        let nn = self.n * self.n;
        &self.transitions[i * nn..(i + 1) * nn]
    }

    #[inline]
    pub fn offset(&self, i: usize) -> &[T] {
        &self.offsets[i * self.n..(i + 1) * self.n]
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    pub fn transitions(&self) -> &[T] {
        &self.transitions
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    /// Same transitions and initial state with different offsets.
    pub fn with_offsets(&self, offsets: Vec<T>, initial: Vec<T>) -> Result<Self> {
        if offsets.len() != self.offsets.len() {
            return Err(DeerError::shape("offsets", self.offsets.len(), offsets.len()));
        }
        if initial.len() != self.n {
            return Err(DeerError::shape("initial state", self.n, initial.len()));
        }
        Ok(LinearRecurrenceSystem {
            n: self.n,
            len: self.len,
            transitions: self.transitions.clone(),
            offsets,
            initial,
        })
    }
}

thread_local! {
    static SCAN_PASSES: Cell<usize> = const { Cell::new(0) };
}

/// Number of parallel scan passes started from the calling thread.
pub fn scan_pass_count() -> usize {
    SCAN_PASSES.with(Cell::get)
}

/// Solves the recurrence with the chunked parallel scan; returns `L × n`
/// states `y₁..y_L`, step-major.
pub fn solve_recurrence<T: Real>(system: &LinearRecurrenceSystem<T>, config: &ScanConfig) -> Vec<T> {
    SCAN_PASSES.with(|c| c.set(c.get() + 1));
    let n = system.n;
    let len = system.len;
    let mut out = vec![T::zero(); len * n];
    if len == 0 || n == 0 {
        return out;
    }
    let chunk = config.chunk_size.max(1);
    let sign: T = config.offset_sign();
    let num_chunks = len.div_ceil(chunk);
    let nn = n * n;

    // upsweep
    let aggregates: Vec<(Vec<T>, Vec<T>)> = (0..num_chunks - 1)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            let end = start + chunk;
            let mut m = system.transition(start).to_vec();
            let mut v: Vec<T> = system.offset(start).iter().map(|&b| sign * b).collect();
            let mut m_next = vec![T::zero(); nn];
            let mut v_next = vec![T::zero(); n];
            for i in start + 1..end {
                let a = system.transition(i);
                matmul_into(n, a, &m, &mut m_next);
                matvec_into(n, a, &v, &mut v_next);
                for (vn, &b) in v_next.iter_mut().zip(system.offset(i)) {
                    *vn += sign * b;
                }
                std::mem::swap(&mut m, &mut m_next);
                std::mem::swap(&mut v, &mut v_next);
            }
            (m, v)
        })
        .collect();

    // spine
    let mut entry = Vec::with_capacity(num_chunks);
    entry.push(system.initial.clone());
    for (m, v) in &aggregates {
        let prev = entry.last().unwrap();
        let mut next = vec![T::zero(); n];
        matvec_add_into(n, m, prev, v, &mut next);
        entry.push(next);
    }

    // downsweep
    out.par_chunks_mut(chunk * n).enumerate().for_each(|(c, block)| {
        let start = c * chunk;
        let mut prev = entry[c].clone();
        for (k, y) in block.chunks_exact_mut(n).enumerate() {
            let i = start + k;
            matvec_into(n, system.transition(i), &prev, y);
            for (yj, &b) in y.iter_mut().zip(system.offset(i)) {
                *yj += sign * b;
            }
            prev.copy_from_slice(y);
        }
    });
    out
}

/// Strictly serial evaluation, one step at a time.
pub fn solve_recurrence_sequential<T: Real>(system: &LinearRecurrenceSystem<T>) -> Vec<T> {
    let n = system.n;
    let mut out = vec![T::zero(); system.len * n];
    let mut prev = system.initial.clone();
    for (i, y) in out.chunks_exact_mut(n.max(1)).enumerate().take(system.len) {
        matvec_add_into(n, system.transition(i), &prev, system.offset(i), y);
        prev.copy_from_slice(y);
    }
    out
}

/// Vector parts of `init • e₁`, `init • e₁ • e₂`, … computed in parallel.
pub fn scan_inclusive<T: Real>(
    init: &ScanElement<T>,
    elems: &[ScanElement<T>],
    config: &ScanConfig,
) -> Result<Vec<Vec<T>>> {
    config.validate()?;
    let system = LinearRecurrenceSystem::from_elements(init, elems)?;
    let flat = solve_recurrence(&system, config);
    Ok(split_rows(&flat, init.n(), elems.len()))
}

/// Serial oracle for [`scan_inclusive`].
pub fn sequential_scan<T: Real>(init: &ScanElement<T>, elems: &[ScanElement<T>]) -> Result<Vec<Vec<T>>> {
    let system = LinearRecurrenceSystem::from_elements(init, elems)?;
    let flat = solve_recurrence_sequential(&system);
    Ok(split_rows(&flat, init.n(), elems.len()))
}

fn split_rows<T: Real>(flat: &[T], n: usize, len: usize) -> Vec<Vec<T>> {
    if n == 0 {
        return vec![Vec::new(); len];
    }
    flat.chunks_exact(n).map(<[T]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, b: f64) -> ScanElement<f64> {
        ScanElement::new(SmallMatrix::diag(&[a]), vec![b]).unwrap()
    }

    fn random_element(n: usize, rng: &mut ChaCha8Rng) -> ScanElement<f64> {
        // spectral radius kept near one so long products neither vanish nor explode
        let scale = 1.0 / (n as f64).sqrt();
        let m = (0..n * n).map(|_| rng.gen_range(-scale..scale)).collect();
        let v = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScanElement::new(SmallMatrix::new(n, m).unwrap(), v).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_element(3, &mut rng);
        let id = ScanElement::identity(3);
        assert_eq!(combine(&id, &e).unwrap(), e);
        assert_eq!(combine(&e, &id).unwrap(), e);
    }

    #[test]
    fn scalar_combine_by_hand() {
        let c = combine(&scalar(2.0, 1.0), &scalar(3.0, 5.0)).unwrap();
        assert_eq!(c.matrix.get(0, 0), 6.0);
        assert_eq!(c.vector, vec![8.0]);
    }

    #[test]
    fn combine_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_element(3, &mut rng);
            let b = random_element(3, &mut rng);
            let c = random_element(3, &mut rng);
            let left = combine(&combine(&a, &b).unwrap(), &c).unwrap();
            let right = combine(&a, &combine(&b, &c).unwrap()).unwrap();
            assert!(left.matrix.max_abs_diff(&right.matrix) < 1e-12);
            for (x, y) in left.vector.iter().zip(&right.vector) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combine_rejects_mismatched_n() {
        let r = combine(&ScanElement::<f64>::identity(2), &ScanElement::identity(3));
        assert!(matches!(r, Err(DeerError::Shape { .. })));
    }

    #[test]
    fn identity_elements_propagate_initial_state() {
        let y0 = vec![1.5, -2.0];
        let elems = vec![ScanElement::identity(2); 700];
        let out = scan_inclusive(&ScanElement::initial(y0.clone()), &elems, &ScanConfig::default()).unwrap();
        assert!(out.iter().all(|y| *y == y0));
    }

    #[test]
    fn scalar_recurrence_by_hand() {
        let elems = vec![scalar(0.5, 1.0); 3];
        let init = ScanElement::initial(vec![1.0]);
        let expect = [1.5, 1.75, 1.875];
        for cfg in [ScanConfig::with_chunk_size(1), ScanConfig::with_chunk_size(2), ScanConfig::default()] {
            let out = scan_inclusive(&init, &elems, &cfg).unwrap();
            assert_eq!(out.iter().map(|v| v[0]).collect::<Vec<_>>(), expect);
        }
        let seq = sequential_scan(&init, &elems).unwrap();
        assert_eq!(seq.iter().map(|v| v[0]).collect::<Vec<_>>(), expect);
    }

    #[test]
    fn empty_scan_is_empty() {
        let out = scan_inclusive(&ScanElement::<f64>::initial(vec![1.0]), &[], &ScanConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn parallel_matches_sequential_long() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let elems: Vec<_> = (0..1000).map(|_| random_element(2, &mut rng)).collect();
        let init = ScanElement::initial(vec![0.3, -0.7]);
        let par = scan_inclusive(&init, &elems, &ScanConfig::with_chunk_size(37)).unwrap();
        let seq = sequential_scan(&init, &elems).unwrap();
        for (p, s) in par.iter().zip(&seq) {
            for (x, y) in p.iter().zip(s) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sign_flip_changes_the_answer() {
        let elems = vec![scalar(0.5, 1.0); 600];
        let init = ScanElement::initial(vec![1.0]);
        let good = scan_inclusive(&init, &elems, &ScanConfig::default()).unwrap();
        let cfg = ScanConfig {
            fault: FaultInjection::SignFlip,
            ..ScanConfig::default()
        };
        let bad = scan_inclusive(&init, &elems, &cfg).unwrap();
        assert!((good[599][0] - bad[599][0]).abs() > 1.0);
    }

    #[test]
    fn pass_counter_counts_parallel_solves() {
        let init = ScanElement::initial(vec![1.0]);
        let before = scan_pass_count();
        scan_inclusive(&init, &[scalar(1.0, 1.0)], &ScanConfig::default()).unwrap();
        sequential_scan(&init, &[scalar(1.0, 1.0)]).unwrap();
        assert_eq!(scan_pass_count() - before, 1);
    }

    #[test]
    fn system_constructor_checks_shapes() {
        assert!(LinearRecurrenceSystem::<f64>::new(2, vec![0.0; 8], vec![0.0; 4], vec![0.0; 2]).is_ok());
        assert!(LinearRecurrenceSystem::<f64>::new(2, vec![0.0; 7], vec![0.0; 4], vec![0.0; 2]).is_err());
        assert!(LinearRecurrenceSystem::<f64>::new(2, vec![0.0; 8], vec![0.0; 4], vec![0.0; 3]).is_err());
        assert!(LinearRecurrenceSystem::new(1, vec![f64::NAN], vec![0.0], vec![0.0]).is_err());
    }
}
