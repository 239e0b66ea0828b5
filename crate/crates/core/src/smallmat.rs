//! Dense kernels for the small `n × n` matrices that appear at every step.
//!
//! Matrices are row-major. The slice kernels (`matmul_into`, `matvec_into`,
//! ...) are the hot path used by the scan and the linearizers; [`SmallMatrix`]
//! wraps them with shape checks for callers outside the inner loops.

use serde::{Deserialize, Serialize};

use crate::error::{DeerError, Result};
use crate::scalar::Real;

/// Norm bound after scaling in [`expm`].
const EXPM_SCALED_NORM: f64 = 0.5;
/// Padé degree used by [`expm`].
const PADE_DEGREE: usize = 6;
/// Below this 1-norm `phi1` switches to its Taylor series.
const PHI1_TAYLOR_NORM: f64 = 1e-2;
const PHI1_TAYLOR_TERMS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SmallMatrix<T> {
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(DeerError::shape("matrix data", n * n, data.len()));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(DeerError::NonFinite {
                context: "matrix",
                location: format!("({}, {})", p / n, p % n),
            });
        }
        Ok(SmallMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(DeerError::shape("matrix rows", n, r.len()));
        }
        Self::new(n, rows.concat())
    }

    pub(crate) fn from_vec_unchecked(n: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        SmallMatrix { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        SmallMatrix {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> T {
        norm1(self.n, &self.data)
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        transpose_into(self.n, &self.data, &mut out);
        SmallMatrix { n: self.n, data: out }
    }

    pub fn scale(&self, s: T) -> Self {
        SmallMatrix {
            n: self.n,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "matrix add")?;
        Ok(SmallMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "matrix sub")?;
        Ok(SmallMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n {
            return Err(DeerError::shape("matrix-vector product", self.n, x.len()));
        }
        let mut out = vec![T::zero(); self.n];
        matvec_into(self.n, &self.data, x, &mut out);
        Ok(out)
    }

    fn check_same(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.n != other.n {
            return Err(DeerError::shape(
                context,
                format!("{0}x{0}", self.n),
                format!("{0}x{0}", other.n),
            ));
        }
        Ok(())
    }
}

/// `A · B`, exact in working precision.
pub fn matmul<T: Real>(a: &SmallMatrix<T>, b: &SmallMatrix<T>) -> Result<SmallMatrix<T>> {
    a.check_same(b, "matmul")?;
    let mut out = vec![T::zero(); a.n * a.n];
    matmul_into(a.n, &a.data, &b.data, &mut out);
    Ok(SmallMatrix { n: a.n, data: out })
}

/// `out = a · b` for row-major `n × n` slices.
#[inline]
pub fn matmul_into<T: Real>(n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..n {
        let row = &mut out[i * n..(i + 1) * n];
        row.fill(T::zero());
        for k in 0..n {
            let aik = a[i * n + k];
            for (o, &bkj) in row.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out = a · x`.
#[inline]
pub fn matvec_into<T: Real>(n: usize, a: &[T], x: &[T], out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut acc = T::zero();
        for (&aij, &xj) in a[i * n..(i + 1) * n].iter().zip(x) {
            acc += aij * xj;
        }
        *o = acc;
    }
}

/// `out = a · x + c`.
#[inline]
pub fn matvec_add_into<T: Real>(n: usize, a: &[T], x: &[T], c: &[T], out: &mut [T]) {
    for i in 0..n {
        let mut acc = T::zero();
        for (&aij, &xj) in a[i * n..(i + 1) * n].iter().zip(x) {
            acc += aij * xj;
        }
        out[i] = acc + c[i];
    }
}

/// `out = aᵀ · x`.
#[inline]
pub fn matvec_t_into<T: Real>(n: usize, a: &[T], x: &[T], out: &mut [T]) {
    out[..n].fill(T::zero());
    for (k, &xk) in x.iter().enumerate().take(n) {
        for (o, &akj) in out.iter_mut().zip(&a[k * n..(k + 1) * n]) {
            *o += akj * xk;
        }
    }
}

pub fn transpose_into<T: Real>(n: usize, a: &[T], out: &mut [T]) {
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
}

pub fn norm1<T: Real>(n: usize, a: &[T]) -> T {
    (0..n)
        .map(|j| (0..n).fold(T::zero(), |s, i| s + a[i * n + j].abs()))
        .fold(T::zero(), T::max)
}

/// LU factorization with row pivoting.
struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    fn factor(n: usize, a: &[T]) -> Result<Self> {
        let threshold = T::of(1e3) * T::epsilon() * norm1(n, a);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, T::zero()), |best, c| if c.1 > best.1 { c } else { best });
            if !(pivot > threshold) {
                return Err(DeerError::Singular {
                    pivot: pivot.as_f64(),
                    threshold: threshold.as_f64(),
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let inv = T::one() / lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] * inv;
                lu[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let u = lu[k * n + j];
                        lu[i * n + j] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    fn solve_in_place(&self, b: &[T], x: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
    }

    /// Solves `A X = B` column by column for row-major `B`.
    fn solve_matrix(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n * n];
        let mut col = vec![T::zero(); n];
        let mut sol = vec![T::zero(); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = b[i * n + j];
            }
            self.solve_in_place(&col, &mut sol);
            for i in 0..n {
                out[i * n + j] = sol[i];
            }
        }
        out
    }
}

/// Solves `A x = b` by row-pivoted elimination.
pub fn solve<T: Real>(a: &SmallMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    if b.len() != a.n {
        return Err(DeerError::shape("solve right-hand side", a.n, b.len()));
    }
    let lu = Lu::factor(a.n, &a.data)?;
    let mut x = vec![T::zero(); a.n];
    lu.solve_in_place(b, &mut x);
    Ok(x)
}

fn check_finite<T: Real>(a: &SmallMatrix<T>, context: &'static str) -> Result<()> {
    match a.data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(p) => Err(DeerError::NonFinite {
            context,
            location: format!("({}, {})", p / a.n.max(1), p % a.n.max(1)),
        }),
    }
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm<T: Real>(a: &SmallMatrix<T>) -> Result<SmallMatrix<T>> {
    check_finite(a, "expm input")?;
    Ok(SmallMatrix::from_vec_unchecked(a.n, expm_slice(a.n, &a.data)?))
}

fn expm_slice<T: Real>(n: usize, a: &[T]) -> Result<Vec<T>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![a[0].exp()]);
    }
    let norm = norm1(n, a).as_f64();
    let squarings = if norm > EXPM_SCALED_NORM {
        (norm / EXPM_SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scale = T::of(0.5f64.powi(squarings));
    let x: Vec<T> = a.iter().map(|&v| v * scale).collect();

    let mut c = [1.0f64; PADE_DEGREE + 1];
    for k in 1..=PADE_DEGREE {
        let p = PADE_DEGREE as f64;
        let kf = k as f64;
        c[k] = c[k - 1] * (p - kf + 1.0) / (kf * (2.0 * p - kf + 1.0));
    }

    let mut x2 = vec![T::zero(); n * n];
    let mut x4 = vec![T::zero(); n * n];
    let mut x6 = vec![T::zero(); n * n];
    matmul_into(n, &x, &x, &mut x2);
    matmul_into(n, &x2, &x2, &mut x4);
    matmul_into(n, &x4, &x2, &mut x6);

    // even part V and odd part U = X · (c1 I + c3 X² + c5 X⁴)
    let mut v = vec![T::zero(); n * n];
    let mut odd = vec![T::zero(); n * n];
    for idx in 0..n * n {
        v[idx] = T::of(c[2]) * x2[idx] + T::of(c[4]) * x4[idx] + T::of(c[6]) * x6[idx];
        odd[idx] = T::of(c[3]) * x2[idx] + T::of(c[5]) * x4[idx];
    }
    for i in 0..n {
        v[i * n + i] += T::of(c[0]);
        odd[i * n + i] += T::of(c[1]);
    }
    let mut u = vec![T::zero(); n * n];
    matmul_into(n, &x, &odd, &mut u);

    let num: Vec<T> = v.iter().zip(&u).map(|(&a, &b)| a + b).collect();
    let den: Vec<T> = v.iter().zip(&u).map(|(&a, &b)| a - b).collect();
    let mut r = Lu::factor(n, &den)?.solve_matrix(&num);

    let mut tmp = vec![T::zero(); n * n];
    for _ in 0..squarings {
        matmul_into(n, &r, &r, &mut tmp);
        std::mem::swap(&mut r, &mut tmp);
    }
    Ok(r)
}

/// `φ₁(A) = A⁻¹(eᴬ − I)`, finite for singular `A`.
pub fn phi1<T: Real>(a: &SmallMatrix<T>) -> Result<SmallMatrix<T>> {
    Ok(expm_phi1(a)?.1)
}

/// `(eᴬ, φ₁(A))` from a single exponential evaluation.
pub fn expm_phi1<T: Real>(a: &SmallMatrix<T>) -> Result<(SmallMatrix<T>, SmallMatrix<T>)> {
    check_finite(a, "phi1 input")?;
    let n = a.n;
    let mut e = vec![T::zero(); n * n];
    let mut p = vec![T::zero(); n * n];
    expm_phi1_into(n, &a.data, &mut e, &mut p)?;
    Ok((
        SmallMatrix::from_vec_unchecked(n, e),
        SmallMatrix::from_vec_unchecked(n, p),
    ))
}

/// Slice form of [`expm_phi1`] for the per-step discretization loop.
pub fn expm_phi1_into<T: Real>(n: usize, a: &[T], exp_out: &mut [T], phi_out: &mut [T]) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    if n == 1 {
        let x = a[0];
        exp_out[0] = x.exp();
        phi_out[0] = if x.abs().as_f64() < PHI1_TAYLOR_NORM {
            phi1_taylor_scalar(x)
        } else {
            x.exp_m1() / x
        };
        return Ok(());
    }
    if norm1(n, a).as_f64() < PHI1_TAYLOR_NORM {
        exp_out.copy_from_slice(&expm_slice(n, a)?);
        phi1_taylor_into(n, a, phi_out);
        return Ok(());
    }
    // exp([[A, I], [0, 0]]) = [[eᴬ, φ₁(A)], [0, I]]
    let m = 2 * n;
    let mut aug = vec![T::zero(); m * m];
    for i in 0..n {
        aug[i * m..i * m + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        aug[i * m + n + i] = T::one();
    }
    let big = expm_slice(m, &aug)?;
    for i in 0..n {
        exp_out[i * n..(i + 1) * n].copy_from_slice(&big[i * m..i * m + n]);
        phi_out[i * n..(i + 1) * n].copy_from_slice(&big[i * m + n..i * m + m]);
    }
    Ok(())
}

fn phi1_taylor_scalar<T: Real>(x: T) -> T {
    let mut s = T::one();
    for k in (2..=PHI1_TAYLOR_TERMS).rev() {
        s = T::one() + x * s / T::of(k as f64);
    }
    s
}

// φ₁(A) = I + A/2 (I + A/3 (I + ... (I + A/12)))
fn phi1_taylor_into<T: Real>(n: usize, a: &[T], out: &mut [T]) {
    let mut s = SmallMatrix::<T>::identity(n).data;
    let mut tmp = vec![T::zero(); n * n];
    for k in (2..=PHI1_TAYLOR_TERMS).rev() {
        matmul_into(n, a, &s, &mut tmp);
        let inv = T::one() / T::of(k as f64);
        for (idx, v) in tmp.iter().enumerate() {
            s[idx] = *v * inv;
        }
        for i in 0..n {
            s[i * n + i] += T::one();
        }
    }
    out.copy_from_slice(&s);
}
