//! Training losses on logits and distances between probability vectors.
//!
//! Both training losses act on `softmax(logits)`:
//!
//! * CE: `(1/B) Σ_n H(t_n, p_n)`, gradient `(p_n − t_n)/B`.
//! * MSE (Brier): `(1/B) Σ_n ‖t_n − p_n‖²`, gradient `Jₙᵀ · 2(p_n − t_n)/B`
//!   with the softmax Jacobian `Jₙ = diag(p_n) − p_n p_nᵀ`.
//!
//! Distances use natural logs and the squared Euclidean norm (no division
//! by the class count).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{lse_unchecked, simplex_tolerance, softmax_into, Matrix};

/// Floor applied to the second argument of [`ce_distance`] before the log.
pub const CE_DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Mse,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Ce, LossKind::Mse];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Mse => "mse",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::invalid(format!("unknown loss kind {other:?} (expected ce or mse)"))),
        }
    }
}

/// Supervision for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    OneHot(usize),
    Soft(Vec<T>),
}

/// Per-sample supervision rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution<T> {
    num_classes: usize,
    rows: Vec<Target<T>>,
}

impl<T: Scalar> TargetDistribution<T> {
    pub fn new(num_classes: usize, rows: Vec<Target<T>>) -> Result<Self> {
        ensure!(num_classes >= 1, "num_classes must be >= 1");
        for (i, r) in rows.iter().enumerate() {
            match r {
                Target::OneHot(k) => ensure!(*k < num_classes, "row {i}: class {k} >= {num_classes}"),
                Target::Soft(p) => check_soft(i, p, num_classes)?,
            }
        }
        Ok(Self { num_classes, rows })
    }

    pub fn from_labels(num_classes: usize, labels: &[usize]) -> Result<Self> {
        Self::new(num_classes, labels.iter().map(|&k| Target::OneHot(k)).collect())
    }

    /// One soft row per matrix row; each row must lie on the simplex.
    pub fn from_prob_rows(probs: &Matrix<T>) -> Result<Self> {
        Self::new(probs.cols(), probs.iter_rows().map(|r| Target::Soft(r.to_vec())).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Target<T>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Target<T> {
        &self.rows[i]
    }

    /// Replaces row `i`, validating it.
    pub fn set(&mut self, i: usize, row: Target<T>) -> Result<()> {
        match &row {
            Target::OneHot(k) => ensure!(*k < self.num_classes, "class {k} >= {}", self.num_classes),
            Target::Soft(p) => check_soft(i, p, self.num_classes)?,
        }
        self.rows[i] = row;
        Ok(())
    }

    pub fn gather(&self, idx: &[usize]) -> Self {
        Self {
            num_classes: self.num_classes,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Row `i` as a dense probability vector.
    pub fn dense_row(&self, i: usize) -> Vec<T> {
        match &self.rows[i] {
            Target::OneHot(k) => {
                let mut v = vec![T::zero(); self.num_classes];
                v[*k] = T::one();
                v
            }
            Target::Soft(p) => p.clone(),
        }
    }
}

fn check_soft<T: Scalar>(i: usize, p: &[T], c: usize) -> Result<()> {
    ensure!(p.len() == c, "row {i}: soft target has {} entries, expected {c}", p.len());
    let mut sum = T::zero();
    for &v in p {
        ensure!(v.is_finite() && v >= T::zero(), "row {i}: invalid probability {v}");
        sum = sum + v;
    }
    ensure!(
        (sum - T::one()).abs() <= simplex_tolerance::<T>(),
        "row {i}: soft target sums to {sum}"
    );
    Ok(())
}

/// Cross-entropy on softmax(logits), temperature 1.
pub fn ce_loss_and_grad<T: Scalar>(logits: &Matrix<T>, targets: &TargetDistribution<T>) -> Result<(T, Matrix<T>)> {
    loss_and_grad(LossKind::Ce, logits, targets, T::one())
}

/// Squared error between softmax(logits) and the targets, temperature 1.
pub fn mse_loss_and_grad<T: Scalar>(logits: &Matrix<T>, targets: &TargetDistribution<T>) -> Result<(T, Matrix<T>)> {
    loss_and_grad(LossKind::Mse, logits, targets, T::one())
}

/// Batch-mean loss and its gradient with respect to the logits.
///
/// With `temperature = τ ≠ 1`, soft rows are compared as
/// `softmax(z/τ)` against `softmax(ln t / τ)` (targets floored at 1e-12
/// before the log), and the gradient carries the extra `1/τ` factor.
/// One-hot rows ignore the temperature.
pub fn loss_and_grad<T: Scalar>(
    kind: LossKind,
    logits: &Matrix<T>,
    targets: &TargetDistribution<T>,
    temperature: T,
) -> Result<(T, Matrix<T>)> {
    let (b, c) = logits.shape();
    ensure!(b == targets.len(), "{b} logit rows but {} targets", targets.len());
    ensure!(c == targets.num_classes(), "{c} logit columns but {} classes", targets.num_classes());
    ensure!(temperature > T::zero() && temperature.is_finite(), "temperature must be > 0");
    ensure!(b > 0, "empty batch");

    let inv_b = T::one() / T::of(b as f64);
    let tempered = temperature != T::one();
    let floor = T::of(CE_DISTANCE_FLOOR);

    let mut grad = Matrix::zeros(b, c);
    let mut total = T::zero();
    let mut z = vec![T::zero(); c];
    let mut p = vec![T::zero(); c];
    let mut t = vec![T::zero(); c];

    for n in 0..b {
        let row = logits.row(n);
        // s = 1/τ for tempered soft rows, 1 otherwise.
        let s = match targets.row(n) {
            Target::OneHot(k) => {
                t.iter_mut().for_each(|v| *v = T::zero());
                t[*k] = T::one();
                T::one()
            }
            Target::Soft(soft) if tempered => {
                let logs: Vec<T> = soft.iter().map(|&v| v.max(floor).ln() / temperature).collect();
                softmax_into(&logs, &mut t);
                T::one() / temperature
            }
            Target::Soft(soft) => {
                t.copy_from_slice(soft);
                T::one()
            }
        };
        for (zi, &li) in z.iter_mut().zip(row) {
            *zi = li * s;
        }
        let lse = lse_unchecked(&z);
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = (zi - lse).exp();
        }
        let g = grad.row_mut(n);
        match kind {
            LossKind::Ce => {
                // H(t, p) = Σ t_c (lse − z_c), exact in log space.
                let mut h = T::zero();
                for (&tc, &zc) in t.iter().zip(&z) {
                    if tc != T::zero() {
                        h = h + tc * (lse - zc);
                    }
                }
                total = total + h;
                for ((gi, &pi), &ti) in g.iter_mut().zip(&p).zip(&t) {
                    *gi = (pi - ti) * inv_b * s;
                }
            }
            LossKind::Mse => {
                let mut sq = T::zero();
                let mut dot = T::zero();
                for ((gi, &pi), &ti) in g.iter_mut().zip(&p).zip(&t) {
                    let d = pi - ti;
                    sq = sq + d * d;
                    *gi = T::of(2.0) * d * inv_b;
                    dot = dot + pi * *gi;
                }
                total = total + sq;
                for (gi, &pi) in g.iter_mut().zip(&p) {
                    *gi = (pi * *gi - dot * pi) * s;
                }
            }
        }
    }
    Ok((total * inv_b, grad))
}

/// `Σ_c (p[c] − q[c])²`.
pub fn mse_distance<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    ensure!(p.len() == q.len(), "length mismatch: {} vs {}", p.len(), q.len());
    Ok(p.iter().zip(q).fold(T::zero(), |s, (&a, &b)| s + (a - b) * (a - b)))
}

/// `Σ_c −p[c] · ln(max(q[c], 1e-12))`.
pub fn ce_distance<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    ensure!(p.len() == q.len(), "length mismatch: {} vs {}", p.len(), q.len());
    let floor = T::of(CE_DISTANCE_FLOOR);
    Ok(p.iter().zip(q).fold(T::zero(), |s, (&a, &b)| {
        if a == T::zero() {
            s
        } else {
            s - a * b.max(floor).ln()
        }
    }))
}

/// `Σ_y p_star[y] · ℓ(e_y, p)`, by enumerating every label `y`.
pub fn expected_loss_over_labels<T: Scalar>(p_star: &[T], p: &[T], kind: LossKind) -> Result<T> {
    ensure!(p_star.len() == p.len(), "length mismatch: {} vs {}", p_star.len(), p.len());
    let c = p.len();
    let mut total = T::zero();
    let mut e = vec![T::zero(); c];
    for (y, &w) in p_star.iter().enumerate() {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[y] = T::one();
        let l = match kind {
            LossKind::Ce => ce_distance(&e, p)?,
            LossKind::Mse => mse_distance(&e, p)?,
        };
        total = total + w * l;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax;

    fn row(v: &[f64]) -> Matrix<f64> {
        Matrix::from_rows(&[v]).unwrap()
    }

    #[test]
    fn ce_uniform_prediction() {
        let t = TargetDistribution::from_labels(3, &[0]).unwrap();
        let (l, _) = ce_loss_and_grad(&row(&[0.0, 0.0, 0.0]), &t).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ce_soft_stationary_point() {
        let z = [0.3, -1.2, 2.0];
        let p = softmax(&z).unwrap().into_inner();
        let t = TargetDistribution::new(3, vec![Target::Soft(p.clone())]).unwrap();
        let (l, g) = ce_loss_and_grad(&row(&z), &t).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-16));
        let entropy: f64 = p.iter().map(|v| -v * v.ln()).sum();
        assert!((l - entropy).abs() < 1e-14);
    }

    #[test]
    fn ce_worked_example() {
        // Prediction [0.29, 0.71] via logits ln p.
        let z = [0.29f64.ln(), 0.71f64.ln()];
        let t = TargetDistribution::new(2, vec![Target::Soft(vec![0.3, 0.7])]).unwrap();
        let (l, _) = ce_loss_and_grad(&row(&z), &t).unwrap();
        assert!((l - 0.611_105_523_063_228_4).abs() < 1e-12, "{l}");
    }

    #[test]
    fn mse_examples() {
        let z = [0.3, -1.2, 2.0];
        let p = softmax(&z).unwrap().into_inner();
        let t = TargetDistribution::new(3, vec![Target::Soft(p)]).unwrap();
        let (l, g) = mse_loss_and_grad(&row(&z), &t).unwrap();
        assert!(l.abs() < 1e-30);
        assert!(g.data().iter().all(|v| v.abs() < 1e-16));

        let t = TargetDistribution::from_labels(2, &[0]).unwrap();
        let (l, _) = mse_loss_and_grad(&row(&[0.0, 0.0]), &t).unwrap();
        assert_eq!(l, 0.5);
    }

    fn fd_check(kind: LossKind, temperature: f64) {
        let logits = Matrix::from_rows(&[[0.2, -0.7, 1.1], [1.5, 0.1, -0.3], [-0.4, 0.0, 0.9]]).unwrap();
        let t = TargetDistribution::new(
            3,
            vec![
                Target::OneHot(2),
                Target::Soft(vec![0.2, 0.5, 0.3]),
                Target::Soft(vec![0.0, 0.1, 0.9]),
            ],
        )
        .unwrap();
        let (_, g) = loss_and_grad(kind, &logits, &t, temperature).unwrap();
        let eps = 1e-6;
        for i in 0..logits.data().len() {
            let mut up = logits.clone();
            up.data_mut()[i] += eps;
            let mut dn = logits.clone();
            dn.data_mut()[i] -= eps;
            let fd = (loss_and_grad(kind, &up, &t, temperature).unwrap().0
                - loss_and_grad(kind, &dn, &t, temperature).unwrap().0)
                / (2.0 * eps);
            let ga = g.data()[i];
            let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
            assert!(rel < 1e-5, "{kind} T={temperature} coord {i}: {ga} vs {fd}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in LossKind::ALL {
            fd_check(kind, 1.0);
            fd_check(kind, 2.5);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let t = TargetDistribution::from_labels(3, &[0, 1]).unwrap();
        assert!(ce_loss_and_grad(&row(&[0.0, 0.0, 0.0]), &t).is_err());
        let t = TargetDistribution::from_labels(2, &[0]).unwrap();
        assert!(mse_loss_and_grad(&row(&[0.0, 0.0, 0.0]), &t).is_err());
    }

    #[test]
    fn target_validation() {
        assert!(TargetDistribution::<f64>::from_labels(3, &[3]).is_err());
        assert!(TargetDistribution::new(2, vec![Target::Soft(vec![0.5f64, 0.6])]).is_err());
        assert!(TargetDistribution::new(2, vec![Target::Soft(vec![1.0f64])]).is_err());
    }

    #[test]
    fn distance_examples() {
        let p = [0.3f64, 0.7];
        assert_eq!(mse_distance(&p, &p).unwrap(), 0.0);
        assert!((mse_distance(&p, &[0.29, 0.71]).unwrap() - 2e-4).abs() < 1e-15);
        assert!((mse_distance(&p, &[0.2, 0.8]).unwrap() - 0.02).abs() < 1e-15);
        assert!((ce_distance(&[0.5f64, 0.5], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((ce_distance(&p, &[0.29, 0.71]).unwrap() - 0.611_105_523_063_228_4).abs() < 1e-15);
        assert!((ce_distance(&p, &[0.2, 0.8]).unwrap() - 0.639_031_859_650_176_9).abs() < 1e-15);
        assert!(mse_distance(&[1.0], &[0.5, 0.5]).is_err());
        assert!(ce_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn ce_distance_clamps_zeros() {
        let d = ce_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((d - 0.5 * -(1e-12f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn expected_loss_examples() {
        let ps = [0.2f64, 0.5, 0.3];
        let p = [0.1f64, 0.6, 0.3];
        let ce = expected_loss_over_labels(&ps, &p, LossKind::Ce).unwrap();
        assert!((ce - ce_distance(&ps, &p).unwrap()).abs() < 1e-12);
        let mse = expected_loss_over_labels(&ps, &p, LossKind::Mse).unwrap();
        let norm2: f64 = ps.iter().map(|v| v * v).sum();
        assert!((mse - (mse_distance(&ps, &p).unwrap() + 1.0 - norm2)).abs() < 1e-12);
        let onehot = [0.0, 1.0, 0.0];
        assert_eq!(
            expected_loss_over_labels(&onehot, &p, LossKind::Mse).unwrap(),
            mse_distance(&onehot, &p).unwrap()
        );
        assert_eq!(
            expected_loss_over_labels(&onehot, &p, LossKind::Ce).unwrap(),
            -(0.6f64.ln())
        );
        assert!(expected_loss_over_labels(&[1.0], &p, LossKind::Ce).is_err());
    }

    #[test]
    fn loss_kind_parse() {
        assert_eq!("MSE".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert_eq!(LossKind::Ce.to_string(), "ce");
        assert!("l1".parse::<LossKind>().is_err());
    }
}
