//! Dense row-major matrices and stable probability transforms.

use crate::error::{ensure, Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data length {} != {rows}x{cols}",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            ensure!(
                r.as_ref().len() == cols,
                "row {i} has length {}, expected {cols}",
                r.as_ref().len()
            );
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics; a zero-column matrix has no row data.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            data.extend(self.data[c..].iter().step_by(self.cols.max(1)));
        }
        Self { rows: self.cols, cols: self.rows, data }
    }

    /// Matrix product.
    ///
    /// Each output entry is accumulated from zero over the inner index in
    /// ascending order, so the result equals the textbook triple loop bit
    /// for bit.
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(
            self.cols == other.rows,
            "matmul inner dimensions differ: {}x{} * {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_acc(self, other, &mut out, false);
        Ok(out)
    }

    /// Copies the listed rows into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(self.shape() == other.shape(), "shape mismatch in add");
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// `out += a * b` using the ikj ordering (inner index ascending per entry).
///
/// With `skip_zero`, rows of `b` whose coefficient in `a` is exactly zero
/// are skipped; the result then differs from the plain product only in the
/// sign of exact zeros and in NaN propagation from `b`.
pub(crate) fn matmul_acc<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>, skip_zero: bool) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.shape(), (a.rows, b.cols));
    let n = b.cols;
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        let orow = &mut out.data[i * n..(i + 1) * n];
        T::row_times_matrix(arow, &b.data, n, orow, skip_zero);
    }
}

/// A probability vector on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector<T> {
    values: Vec<T>,
}

/// Sum-to-one tolerance for a scalar type: 1e-9, or a few ulps for `f32`.
pub fn simplex_tolerance<T: Scalar>() -> T {
    T::of(1e-9).max(T::epsilon() * T::of(64.0))
}

impl<T: Scalar> ProbVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        ensure!(!values.is_empty(), "probability vector is empty");
        let mut sum = T::zero();
        for (i, &v) in values.iter().enumerate() {
            ensure!(v.is_finite() && v >= T::zero(), "entry {i} = {v} is not a probability");
            sum = sum + v;
        }
        ensure!(
            (sum - T::one()).abs() <= simplex_tolerance::<T>(),
            "entries sum to {sum}, not 1"
        );
        Ok(Self { values })
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Result<Self> {
        ensure!(class < num_classes, "class {class} out of range for {num_classes} classes");
        let mut values = vec![T::zero(); num_classes];
        values[class] = T::one();
        Ok(Self { values })
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        ensure!(num_classes > 0, "zero classes");
        Ok(Self {
            values: vec![T::one() / T::of(num_classes as f64); num_classes],
        })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

impl<T> AsRef<[T]> for ProbVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// Index of the largest entry, lowest index on ties. `0` for empty input.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `max(v) + ln Σ exp(v_i - max(v))`.
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> Result<T> {
    ensure!(!v.is_empty(), "log_sum_exp of empty input");
    Ok(lse_unchecked(v))
}

pub(crate) fn lse_unchecked<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for &x in v {
        s = s + (x - m).exp();
    }
    m + s.ln()
}

/// Stable softmax of a logit vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbVector<T>> {
    ensure!(!logits.is_empty(), "softmax of empty input");
    let mut values = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut values);
    Ok(ProbVector { values })
}

/// Writes `exp(l_i - lse(l))` into `out`. `out.len()` must equal `logits.len()`.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let lse = lse_unchecked(logits);
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - lse).exp();
    }
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), out.row_mut(r));
    }
    out
}

/// Matrix of i.i.d. `N(mean, std²)` entries drawn row by row.
pub fn gaussian_matrix<T: Scalar>(
    rng: &mut RngState,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix<T>> {
    if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!("gaussian_matrix needs finite mean and std > 0, got mean={mean} std={std}")));
    }
    let data = (0..rows * cols)
        .map(|_| T::of(mean + std * rng.normal()))
        .collect();
    Ok(Matrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_times_matrix() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(Matrix::<f64>::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn projector_times_matrix() {
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let m = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let expect = Matrix::from_rows(&[[5.0, 6.0], [0.0, 0.0]]).unwrap();
        assert_eq!(p.matmul(&m).unwrap(), expect);
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = RngState::new(3);
        let a: Matrix<f64> = gaussian_matrix(&mut rng, 3, 4, 0.0, 1.0).unwrap();
        let b: Matrix<f64> = gaussian_matrix(&mut rng, 4, 2, 0.0, 1.0).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matrix_new_rejects_bad_length() {
        assert!(Matrix::new(2, 2, vec![1.0f64; 3]).is_err());
    }

    #[test]
    fn lse_examples() {
        assert!((log_sum_exp(&[0.0, 0.0, 0.0]).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[1000.0, 1000.0]).unwrap(), 1000.0 + 2f64.ln());
        // ln(e + e^2 + e^3), evaluated with mpmath at 30 digits.
        assert!((log_sum_exp(&[1.0f64, 2.0, 3.0]).unwrap() - 3.407_605_964_444_380).abs() < 1e-14);
        assert!(log_sum_exp::<f64>(&[]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        for &p in u.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[7.5f64, 7.5, 7.5]).unwrap();
        for &p in s.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        // e^k / (e + e^2 + e^3), mpmath at 30 digits.
        let expect = [0.090_030_573_170_380_46, 0.244_728_471_054_797_64, 0.665_240_955_774_821_9];
        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        for (a, b) in p.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_on_simplex() {
        let p = softmax(&[1e4f64, -1e4, 0.0]).unwrap();
        assert!(ProbVector::new(p.into_inner()).is_ok());
    }

    #[test]
    fn softmax_works_in_f32() {
        let p = softmax(&[1.0f32, 2.0, 3.0]).unwrap();
        assert!((p.as_slice()[2] - 0.665_240_96).abs() < 1e-6);
    }

    #[test]
    fn gaussian_degenerate_width() {
        let mut rng = RngState::new(9);
        let m: Matrix<f64> = gaussian_matrix(&mut rng, 10, 10, 5.0, 1e-12).unwrap();
        assert!(m.data().iter().all(|v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn gaussian_rejects_nonpositive_std() {
        let mut rng = RngState::new(9);
        assert!(gaussian_matrix::<f64>(&mut rng, 2, 2, 0.0, 0.0).is_err());
        assert!(gaussian_matrix::<f64>(&mut rng, 2, 2, 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_same_seed_bitwise() {
        let a: Matrix<f64> = gaussian_matrix(&mut RngState::new(4), 5, 6, 0.0, 2.0).unwrap();
        let b: Matrix<f64> = gaussian_matrix(&mut RngState::new(4), 5, 6, 0.0, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments_large_sample() {
        let m: Matrix<f64> = gaussian_matrix(&mut RngState::new(2024), 1000, 1000, 0.0, 1.0).unwrap();
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5f64, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.6f64, 0.5]).is_err());
        assert!(ProbVector::new(vec![-0.1f64, 1.1]).is_err());
        assert!(ProbVector::<f64>::new(vec![]).is_err());
    }
}
