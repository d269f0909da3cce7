//! Dense row-major matrices, activations and a reproducible random stream.
//!
//! Everything is `f64`. The slice kernels at the bottom of the module are the
//! hot path of the recurrent cells and avoid allocation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

pub fn sigmoid_matrix(m: &Matrix) -> Matrix {
    m.map(sigmoid)
}

pub fn tanh_matrix(m: &Matrix) -> Matrix {
    m.map(tanh_act)
}

/// SplitMix64: a counter-based generator. The state advances by a fixed odd
/// increment and each output is a bijective mix of the counter, so a seed
/// fully determines the stream on every platform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.counter;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform on [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw (Box–Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Derives an independent stream, e.g. one per battery or per grid cell.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// Matrix with entries i.i.d. uniform on `[-scale, scale]`.
pub fn init_uniform(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!(
            "init scale must be positive, got {scale}"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-scale, scale))
        .collect();
    Ok(Matrix { rows, cols, data })
}

// Slice kernels. `w` is a row-major `out.len() x x.len()` block.

/// `out += w · x`
#[inline]
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(w.len(), out.len() * n);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// `out += wᵀ · d`
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(w.len(), d.len() * n);
    for (dv, row) in d.iter().zip(w.chunks_exact(n)) {
        if *dv == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += dv * a;
        }
    }
}

/// `g += d · xᵀ`
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let n = x.len();
    debug_assert_eq!(g.len(), d.len() * n);
    for (dv, row) in d.iter().zip(g.chunks_exact_mut(n)) {
        if *dv == 0.0 {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += dv * a;
        }
    }
}

#[inline]
pub(crate) fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        assert_eq!(
            matmul(&Matrix::zeros(2, 2), &a).unwrap(),
            Matrix::zeros(2, 2)
        );
    }

    #[test]
    fn matmul_hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            m(&[&[19.0, 22.0], &[43.0, 50.0]])
        );
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3 by 2x3"), "{msg}");
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_act(0.0), 0.0);
    }

    #[test]
    fn init_uniform_is_deterministic_and_bounded() {
        let a = init_uniform(&mut Rng::new(13), 2, 2, 0.5).unwrap();
        let b = init_uniform(&mut Rng::new(13), 2, 2, 0.5).unwrap();
        let c = init_uniform(&mut Rng::new(14), 2, 2, 0.5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let big = init_uniform(&mut Rng::new(1), 50, 50, 0.5).unwrap();
        assert!(big.as_slice().iter().all(|v| (-0.5..=0.5).contains(v)));
        assert!(init_uniform(&mut Rng::new(1), 1, 1, 0.0).is_err());
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(5).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn slice_kernels_agree_with_matmul() {
        let mut rng = Rng::new(3);
        let w = init_uniform(&mut rng, 3, 4, 1.0).unwrap();
        let x = init_uniform(&mut rng, 4, 1, 1.0).unwrap();
        let d = init_uniform(&mut rng, 3, 1, 1.0).unwrap();
        let mut out = vec![0.0; 3];
        matvec_acc(w.as_slice(), x.as_slice(), &mut out);
        let expect = matmul(&w, &x).unwrap();
        for (a, b) in out.iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut back = vec![0.0; 4];
        matvec_t_acc(w.as_slice(), d.as_slice(), &mut back);
        let expect = matmul(&w.transpose(), &d).unwrap();
        for (a, b) in back.iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut g = vec![0.0; 12];
        outer_acc(&mut g, d.as_slice(), x.as_slice());
        let expect = matmul(&d, &x.transpose()).unwrap();
        for (a, b) in g.iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, p in 1usize..6, q in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = init_uniform(&mut rng, n, k, 1.0).unwrap();
            let b = init_uniform(&mut rng, k, p, 1.0).unwrap();
            let c = init_uniform(&mut rng, p, q, 1.0).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(left.max_abs_diff(&right) <= 1e-10 * scale);
        }

        #[test]
        fn activation_ranges(x in -50.0f64..50.0) {
            let s = sigmoid(x);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
            let t = tanh_act(x);
            prop_assert!((-1.0..=1.0).contains(&t));
        }
    }
}
