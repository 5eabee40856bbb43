//! Dense vectors and matrices, stable reductions, seeded randomness and the
//! central-difference gradient oracle.
//!
//! Everything is `f64`. Binary operations check dimensions and return
//! [`Error::DimensionMismatch`] instead of panicking.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};

/// Default perturbation for central differences.
pub const FD_EPSILON: f64 = 1e-5;

/// A fixed-dimension real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(elements: Vec<f64>) -> Result<Self> {
        if elements.iter().all(|x| x.is_finite()) {
            Ok(Vector(elements))
        } else {
            Err(Error::NonFinite("vector"))
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        dot(&self.0, &other.0)
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        ensure_dim(self.dim(), other.dim())?;
        Vector::new(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        ensure_dim(self.dim(), other.dim())?;
        Vector::new(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, factor: f64) -> Result<Vector> {
        Vector::new(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn squared_euclidean(&self, other: &Vector) -> Result<f64> {
        squared_euclidean(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim(rows * cols, data.len())?;
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            ensure_dim(cols, row.len())?;
            data.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `M · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        ensure_dim(self.cols, v.len())?;
        let out = (0..self.rows)
            .map(|r| dot_unchecked(self.row(r), v))
            .collect();
        Vector::new(out)
    }

    /// `Mᵀ · v`
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vector> {
        ensure_dim(self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        self.tr_matvec_acc(v, &mut out);
        Vector::new(out)
    }

    /// `out += Mᵀ · v`, dimensions assumed checked.
    pub(crate) fn tr_matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy(vr, self.row(r), out);
            }
        }
    }

    /// `out += M · v`, dimensions assumed checked.
    pub(crate) fn matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot_unchecked(self.row(r), v);
        }
    }

    /// `M += scale · u vᵀ`, dimensions assumed checked.
    pub(crate) fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        for (r, &ur) in u.iter().enumerate() {
            let s = scale * ur;
            if s != 0.0 {
                let cols = self.cols;
                axpy(s, v, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure_dim(u.len(), v.len())?;
    Ok(dot_unchecked(u, v))
}

pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `y += a · x`
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `‖u − v‖²`
pub fn squared_euclidean(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure_dim(u.len(), v.len())?;
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum())
}

/// `log Σ exp(xᵢ)` with the usual max shift.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("log_sum_exp input"));
    }
    if !xs.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("log_sum_exp input"));
    }
    Ok(log_sum_exp_unchecked(xs))
}

pub(crate) fn log_sum_exp_unchecked(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Turns scores into log-probabilities in place.
pub(crate) fn log_softmax_in_place(xs: &mut [f64]) {
    let lse = log_sum_exp_unchecked(xs);
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be > 0, got {eps}"
        )));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference probe"));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `|a − b| / max(1, |a|, |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest [`relative_error`] over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_error(*x, *y))
        .fold(0.0, f64::max)
}

/// Deterministic generator: ChaCha with 8 rounds, seeded from a `u64`.
///
/// Sub-streams for independent consumers (initialization, noise sampling,
/// splitting) are selected with [`Rng::stream`]; the same `(seed, stream)`
/// always yields the same draws on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::stream(seed, 0)
    }

    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`; `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), 13.0);
        assert_eq!(dot(&[7.5, -2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matvec_examples() {
        let v = [3.0, 4.0];
        assert_eq!(
            Matrix::identity(2).matvec(&v).unwrap().as_slice(),
            &[3.0, 4.0]
        );
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
        assert_eq!(m.tr_matvec(&[1.0, 1.0]).unwrap().as_slice(), &[4.0, 6.0]);
        assert_eq!(
            Matrix::zeros(2, 2).matvec(&v).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        assert!(m.matvec(&[1.0]).is_err());
    }

    #[test]
    fn squared_euclidean_examples() {
        assert_eq!(squared_euclidean(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(squared_euclidean(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(squared_euclidean(&[3.0], &[1.0]).unwrap(), 4.0);
        assert!(squared_euclidean(&[3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        assert!(matches!(log_sum_exp(&[]), Err(Error::Empty(_))));
        assert!(log_sum_exp(&[f64::NAN]).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], FD_EPSILON).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], FD_EPSILON).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(finite_diff_grad(|x| x[0].ln(), &[0.0], FD_EPSILON).is_err());
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::INFINITY]).is_err());
        let big = Vector::new(vec![f64::MAX]).unwrap();
        assert!(big.add(&big).is_err());
    }

    #[test]
    fn rng_streams_differ_and_repeat() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = Rng::stream(7, 1);
                move |_| r.next_u64()
            })
            .collect();
        let b: Vec<u64> = (0..8)
            .map({
                let mut r = Rng::stream(7, 1);
                move |_| r.next_u64()
            })
            .collect();
        let c: Vec<u64> = (0..8)
            .map({
                let mut r = Rng::stream(7, 2);
                move |_| r.next_u64()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut r = Rng::new(3);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..12).prop_flat_map(|d| {
                (
                    prop::collection::vec(-1e3f64..1e3, d),
                    prop::collection::vec(-1e3f64..1e3, d),
                )
            })
        }

        proptest! {
            #[test]
            fn squared_euclidean_is_self_dot_of_difference((u, v) in vec_pair()) {
                let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
                let lhs = squared_euclidean(&u, &v).unwrap();
                let rhs = dot(&diff, &diff).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
            }

            #[test]
            fn log_sum_exp_shift(xs in prop::collection::vec(-50f64..50.0, 1..20), c in -1e3f64..1e3) {
                let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                let lhs = log_sum_exp(&shifted).unwrap();
                let rhs = log_sum_exp(&xs).unwrap() + c;
                prop_assert!((lhs - rhs).abs() <= 1e-9);
            }

            #[test]
            fn equal_seeds_equal_draws(seed in any::<u64>()) {
                let mut a = super::Rng::new(seed);
                let mut b = super::Rng::new(seed);
                for _ in 0..16 {
                    prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
                    prop_assert_eq!(a.below(17), b.below(17));
                }
            }
        }
    }
}
