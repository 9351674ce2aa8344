//! Summary statistics over experiment records.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ensure, Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; NaN for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    ensure!(x.len() == y.len(), "length mismatch: {} vs {}", x.len(), y.len());
    ensure!(x.len() >= 3, "need at least 3 points, got {}", x.len());
    ensure!(
        x.iter().chain(y).all(|v| v.is_finite()),
        "correlation input contains non-finite values"
    );
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(Error::ZeroVariance("x"));
    }
    if !(syy > 0.0) {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_greater: f64,
}

/// Welch's unequal-variance t-test of `mean(a) > mean(b)`.
pub fn welch_greater(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    ensure!(a.len() >= 2 && b.len() >= 2, "each sample needs at least 2 values");
    let (va, vb) = (sample_variance(a) / a.len() as f64, sample_variance(b) / b.len() as f64);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return Err(Error::ZeroVariance("both samples"));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(WelchTest {
        t,
        df,
        p_greater: 1.0 - dist.cdf(t),
    })
}
