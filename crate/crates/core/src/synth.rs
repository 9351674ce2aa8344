//! Synthetic Gaussian classification data with an exact Bayes posterior.
//!
//! Labels are uniform over `C` classes and `x | y=k ~ N(μ_k, σ² I)`, so the
//! posterior is `softmax(s)` with `s_k = −‖x − μ_k‖² / (2σ²)`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::losses::{mse_distance, CE_DISTANCE_FLOOR};
use crate::rng::RngState;
use crate::tensor::{argmax, softmax_into};
use crate::{Matrix, ProbVector};

/// Generative model of the synthetic task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub delta_mu: f64,
    pub sigma: f64,
    /// One mean per class, each of length `dim`.
    pub means: Vec<Vec<f64>>,
}

impl GaussianSpec {
    pub const DEFAULT_CLASSES: usize = 3;
    pub const DEFAULT_DIM: usize = 30;
    pub const DEFAULT_DELTA_MU: f64 = 1.0;
    pub const DEFAULT_SIGMA: f64 = 4.0;

    /// Draws every mean entry uniformly from `{−δ, 0, δ}`, class by class.
    pub fn sample(rng: &mut RngState, num_classes: usize, dim: usize, delta_mu: f64, sigma: f64) -> Result<Self> {
        ensure!(num_classes >= 2, "need at least 2 classes, got {num_classes}");
        ensure!(dim >= 1, "dim must be >= 1");
        ensure!(delta_mu >= 0.0 && delta_mu.is_finite(), "delta_mu must be finite and >= 0");
        ensure!(sigma > 0.0 && sigma.is_finite(), "sigma must be finite and > 0");
        let symbols = [-delta_mu, 0.0, delta_mu];
        let means = (0..num_classes)
            .map(|_| (0..dim).map(|_| symbols[rng.index(3)]).collect())
            .collect();
        Ok(Self {
            num_classes,
            dim,
            delta_mu,
            sigma,
            means,
        })
    }

    /// Spec with explicit means; every mean must have length `dim`.
    pub fn with_means(means: Vec<Vec<f64>>, delta_mu: f64, sigma: f64) -> Result<Self> {
        ensure!(means.len() >= 2, "need at least 2 classes");
        let dim = means[0].len();
        ensure!(dim >= 1, "dim must be >= 1");
        ensure!(means.iter().all(|m| m.len() == dim), "means differ in length");
        ensure!(sigma > 0.0 && sigma.is_finite(), "sigma must be finite and > 0");
        Ok(Self {
            num_classes: means.len(),
            dim,
            delta_mu,
            sigma,
            means,
        })
    }

    /// Class scores `s_k = −‖x − μ_k‖² / (2σ²)`.
    pub fn scores(&self, x: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        for (s, mu) in out.iter_mut().zip(&self.means) {
            let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            *s = -d2 * inv;
        }
    }

    /// Exact posterior `p*(y | x)`.
    pub fn bcpd(&self, x: &[f64]) -> Result<ProbVector> {
        ensure!(x.len() == self.dim, "x has length {}, expected {}", x.len(), self.dim);
        ensure!(x.iter().all(|v| v.is_finite()), "x must be finite");
        let mut p = vec![0.0; self.num_classes];
        self.bcpd_into(x, &mut p);
        ProbVector::new(p)
    }

    fn bcpd_into(&self, x: &[f64], out: &mut [f64]) {
        let mut s = vec![0.0; self.num_classes];
        self.scores(x, &mut s);
        softmax_into(&s, out);
    }

    /// Index of the closest class mean (lowest index on ties).
    pub fn nearest_mean(&self, x: &[f64]) -> usize {
        let mut s = vec![0.0; self.num_classes];
        self.scores(x, &mut s);
        argmax(&s)
    }
}

/// Free-function form of [`GaussianSpec::bcpd`].
pub fn analytic_bcpd(spec: &GaussianSpec, x: &[f64]) -> Result<ProbVector> {
    spec.bcpd(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default split ratios (train, val, test).
pub const DEFAULT_SPLIT: [f64; 3] = [0.9, 0.05, 0.05];

/// Samples with labels, exact posteriors and split tags.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub bcpd: Matrix,
    pub split: Vec<Split>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.bcpd.cols()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Sample indices tagged `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for s in &self.split {
            n[*s as usize] += 1;
        }
        n
    }

    /// Accuracy of `argmax p*` against the true labels on a split.
    pub fn bayes_accuracy(&self, split: Split) -> Result<f64> {
        let idx = self.indices(split);
        ensure!(!idx.is_empty(), "split {split} is empty");
        let hits = idx
            .iter()
            .filter(|&&i| argmax(self.bcpd.row(i)) == self.y[i])
            .count();
        Ok(hits as f64 / idx.len() as f64)
    }

    /// Copy with the given samples relabelled as `split`.
    pub fn with_split(&self, split: Vec<Split>) -> Result<Self> {
        ensure!(split.len() == self.len(), "split tags length mismatch");
        Ok(Self {
            split,
            ..self.clone()
        })
    }

    pub fn metadata(&self, spec: &GaussianSpec, seed: u64) -> Result<DatasetMetadata> {
        let [train, val, test] = self.split_sizes();
        Ok(DatasetMetadata {
            num_samples: self.len(),
            num_classes: spec.num_classes,
            dim: spec.dim,
            delta_mu: spec.delta_mu,
            sigma: spec.sigma,
            means: spec.means.clone(),
            seed,
            split_sizes: SplitSizes { train, val, test },
            bayes_accuracy_test: self.bayes_accuracy(Split::Test)?,
            bayes_accuracy_all: {
                let hits = (0..self.len())
                    .filter(|&i| argmax(self.bcpd.row(i)) == self.y[i])
                    .count();
                hits as f64 / self.len() as f64
            },
        })
    }
}

/// Draws `n` samples: label uniform over classes, then `x ~ N(μ_y, σ² I)`.
/// All samples start tagged `Train`; see [`split`].
pub fn sample_dataset(rng: &mut RngState, spec: &GaussianSpec, n: usize) -> Result<LabeledDataset> {
    ensure!(n >= 1, "dataset needs at least one sample");
    let (c, d) = (spec.num_classes, spec.dim);
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut bcpd = Matrix::zeros(n, c);
    for i in 0..n {
        let k = rng.index(c);
        y.push(k);
        let row = x.row_mut(i);
        for (v, &m) in row.iter_mut().zip(&spec.means[k]) {
            *v = m + spec.sigma * rng.normal();
        }
        let xr = x.row(i).to_vec();
        spec.bcpd_into(&xr, bcpd.row_mut(i));
    }
    Ok(LabeledDataset {
        x,
        y,
        bcpd,
        split: vec![Split::Train; n],
    })
}

/// Random permutation cut at the cumulative ratio boundaries
/// `round(N · Σ ratios[..k])`.
pub fn split(rng: &mut RngState, data: &LabeledDataset, ratios: [f64; 3]) -> Result<LabeledDataset> {
    ensure!(
        ratios.iter().all(|r| *r > 0.0 && r.is_finite()),
        "split ratios must be positive, got {ratios:?}"
    );
    ensure!(
        (ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
        "split ratios must sum to 1, got {ratios:?}"
    );
    let n = data.len();
    let perm = rng.permutation(n);
    let b1 = (n as f64 * ratios[0]).round() as usize;
    let b2 = ((n as f64 * (ratios[0] + ratios[1])).round() as usize).max(b1).min(n);
    let mut tags = vec![Split::Train; n];
    for (pos, &i) in perm.iter().enumerate() {
        tags[i] = if pos < b1 {
            Split::Train
        } else if pos < b2 {
            Split::Val
        } else {
            Split::Test
        };
    }
    data.with_split(tags)
}

/// Generates a spec, samples `n` points and splits them, all from one seed.
///
/// Streams: 0 → means, 1 → samples, 2 → split permutation.
pub fn generate(seed: u64, num_classes: usize, dim: usize, delta_mu: f64, sigma: f64, n: usize, ratios: [f64; 3]) -> Result<(GaussianSpec, LabeledDataset)> {
    let root = RngState::new(seed);
    let spec = GaussianSpec::sample(&mut root.derive(0), num_classes, dim, delta_mu, sigma)?;
    let data = sample_dataset(&mut root.derive(1), &spec, n)?;
    let data = split(&mut root.derive(2), &data, ratios)?;
    Ok((spec, data))
}

/// Log-space Gaussian perturbation of probability rows.
///
/// Each row is floored at 1e-12, logged, shifted by i.i.d. `N(0, scale²)`
/// noise per entry and mapped back with softmax. `scale = 0` returns the
/// input (up to the floor and rounding).
pub fn perturb_bcpd(rng: &mut RngState, bcpd: &Matrix, noise_scale: f64) -> Result<Matrix> {
    ensure!(noise_scale >= 0.0 && noise_scale.is_finite(), "noise_scale must be finite and >= 0");
    let c = bcpd.cols();
    let mut out = Matrix::zeros(bcpd.rows(), c);
    let mut logits = vec![0.0; c];
    for r in 0..bcpd.rows() {
        for (l, &p) in logits.iter_mut().zip(bcpd.row(r)) {
            *l = p.max(CE_DISTANCE_FLOOR).ln() + noise_scale * rng.normal();
        }
        softmax_into(&logits, out.row_mut(r));
    }
    Ok(out)
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Mean squared distance between matching rows of two probability matrices.
pub fn mean_row_mse(a: &Matrix, b: &Matrix) -> Result<f64> {
    ensure!(a.shape() == b.shape() && a.rows() > 0, "shape mismatch");
    let mut s = 0.0;
    for r in 0..a.rows() {
        s += mse_distance(a.row(r), b.row(r))?;
    }
    Ok(s / a.rows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Sidecar written next to a dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub num_samples: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub delta_mu: f64,
    pub sigma: f64,
    pub means: Vec<Vec<f64>>,
    pub seed: u64,
    pub split_sizes: SplitSizes,
    pub bayes_accuracy_test: f64,
    pub bayes_accuracy_all: f64,
}

impl DatasetMetadata {
    pub fn spec(&self) -> Result<GaussianSpec> {
        GaussianSpec::with_means(self.means.clone(), self.delta_mu, self.sigma)
    }
}

/// Writes `x_0..x_{d-1},y,p_0..p_{C-1},split` with 17 significant digits.
pub fn write_dataset_csv<W: Write>(data: &LabeledDataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let (d, c) = (data.dim(), data.num_classes());
    let mut header: Vec<String> = (0..d).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    header.extend((0..c).map(|i| format!("p_{i}")));
    header.push("split".into());
    wtr.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(d + c + 2);
    for i in 0..data.len() {
        rec.clear();
        rec.extend(data.x.row(i).iter().map(|v| format!("{v:.16e}")));
        rec.push(data.y[i].to_string());
        rec.extend(data.bcpd.row(i).iter().map(|v| format!("{v:.16e}")));
        rec.push(data.split[i].as_str().into());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset csv>", e))?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<LabeledDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let d = headers.iter().take_while(|h| h.starts_with("x_")).count();
    let c = headers.iter().filter(|h| h.starts_with("p_")).count();
    if d == 0 || c < 2 || headers.len() != d + c + 2 || &headers[d] != "y" || &headers[d + c + 1] != "split" {
        return Err(parse_err(1, "header must be x_0..x_{d-1},y,p_0..p_{C-1},split".into()));
    }
    let (mut xs, mut ys, mut ps, mut splits) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| !v.is_infinite())
                .ok_or_else(|| parse_err(line, format!("bad number {s:?}")))
        };
        for f in rec.iter().take(d) {
            xs.push(num(f)?);
        }
        let y: usize = rec[d]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label {:?}", &rec[d])))?;
        if y >= c {
            return Err(parse_err(line, format!("label {y} >= {c}")));
        }
        ys.push(y);
        for f in rec.iter().skip(d + 1).take(c) {
            ps.push(num(f)?);
        }
        splits.push(
            Split::parse(rec[d + c + 1].trim())
                .ok_or_else(|| parse_err(line, format!("bad split {:?}", &rec[d + c + 1])))?,
        );
    }
    let n = ys.len();
    if n == 0 {
        return Err(parse_err(1, "dataset has no rows".into()));
    }
    Ok(LabeledDataset {
        x: Matrix::new(n, d, xs)?,
        y: ys,
        bcpd: Matrix::new(n, c, ps)?,
        split: splits,
    })
}
