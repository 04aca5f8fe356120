//! Numeric substrate: dense complex matrices, seeded random streams and the
//! Gram-matrix solve behind zero-forcing.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest 1-norm condition number of `H^H H` accepted by [`solve_gram`].
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat { rows, cols, data }
    }

    /// Column vector (n x 1).
    pub fn column(values: &[C64]) -> Self {
        CMat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Builds a matrix from column vectors of equal length.
    pub fn from_columns(columns: &[Vec<C64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::ShapeMismatch("columns of unequal length".into()));
        }
        Ok(CMat::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[C64]) {
        assert_eq!(values.len(), self.rows, "column length mismatch");
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(
            self.cols,
            rhs.rows,
            "matmul shape mismatch: {:?} * {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in lhs_row.iter().enumerate() {
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^H * rhs` without materializing the adjoint.
    pub fn adjoint_mul(&self, rhs: &CMat) -> CMat {
        assert_eq!(
            self.rows,
            rhs.rows,
            "adjoint_mul shape mismatch: {:?}^H * {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = CMat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = rhs.row(k);
            for (i, a) in lhs_row.iter().enumerate() {
                let a = a.conj();
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, c: C64) -> CMat {
        self.map(|v| v * c)
    }

    pub fn scale_real(&self, c: f64) -> CMat {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sub(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        fro_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for v in self.row(i) {
                write!(f, "{:+.4}{:+.4}j ", v.re, v.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// `sqrt(sum |m_ij|^2)`.
pub fn fro_norm(m: &CMat) -> f64 {
    m.fro_norm_sq().sqrt()
}

/// Purpose-specific random streams. Each purpose gets its own ChaCha stream
/// under a shared seed, so consumers never perturb each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Channel,
    Weights,
    Data,
    Noise,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Channel => 0,
            Stream::Weights => 1,
            Stream::Data => 2,
            Stream::Noise => 3,
        }
    }
}

/// Deterministic random source identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        SeededRng {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        SeededRng::new(seed, stream.id())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = rand::Rng::random(&mut self.inner);
        lo + (hi - lo) * u
    }

    pub fn bit(&mut self) -> bool {
        rand::Rng::random(&mut self.inner)
    }

    /// One draw from `CN(0, variance)`: real and imaginary parts each
    /// `N(0, variance / 2)`.
    pub fn complex_normal(&mut self, variance: f64) -> C64 {
        let s = (variance / 2.0).sqrt();
        let re = self.standard_normal() * s;
        let im = self.standard_normal() * s;
        C64::new(re, im)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Mixes a top-level seed with a label into an independent 64-bit seed.
/// Stable across platforms and releases (FNV-1a followed by SplitMix64).
pub fn derive_seed(top: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = top ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n x m` matrix of i.i.d. `CN(0, 1)` entries.
pub fn sample_cn(rng: &mut SeededRng, n: usize, m: usize) -> CMat {
    assert!(n >= 1 && m >= 1, "sample_cn needs a non-empty shape");
    CMat::from_fn(n, m, |_, _| rng.complex_normal(1.0))
}

fn one_norm(m: &CMat) -> f64 {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting. Returns `None` on an exactly zero pivot.
fn invert(m: &CMat) -> Option<CMat> {
    let n = m.rows();
    debug_assert_eq!(n, m.cols());
    let mut a = m.clone();
    let mut inv = CMat::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[(p, col)].norm().total_cmp(&a[(q, col)].norm()))
            .expect("non-empty pivot range");
        if a[(pivot, col)].norm() == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.data.swap(pivot * n + j, col * n + j);
                inv.data.swap(pivot * n + j, col * n + j);
            }
        }
        let p = a[(col, col)].inv();
        for j in 0..n {
            a[(col, j)] *= p;
            inv[(col, j)] *= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = a[(i, col)];
            if factor == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                let (aj, ij) = (a[(col, j)], inv[(col, j)]);
                a[(i, j)] -= factor * aj;
                inv[(i, j)] -= factor * ij;
            }
        }
    }
    Some(inv)
}

/// Returns `H (H^H H)^{-1}` for a tall full-column-rank `H`.
///
/// The `K x K` Gram matrix is inverted with partial pivoting and rejected
/// when its 1-norm condition number exceeds [`GRAM_CONDITION_LIMIT`].
pub fn solve_gram(h: &CMat) -> Result<CMat> {
    let (n, k) = h.shape();
    if k == 0 || n < k {
        return Err(Error::ShapeMismatch(format!(
            "solve_gram needs a tall matrix with at least one column, got {n}x{k}"
        )));
    }
    if !h.is_finite() {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let gram = h.adjoint_mul(h);
    let inv = invert(&gram).ok_or(Error::SingularGram {
        condition: f64::INFINITY,
    })?;
    let condition = one_norm(&gram) * one_norm(&inv);
    if !condition.is_finite() || condition > GRAM_CONDITION_LIMIT {
        return Err(Error::SingularGram { condition });
    }
    Ok(h.matmul(&inv))
}
