#![allow(dead_code)]

use kdlab::nn::Dense;
use kdlab::synth::{generate, GaussianSpec, LabeledDataset, DEFAULT_SPLIT};
use kdlab::{Matrix, MlpModel};

pub fn small_dataset(seed: u64, n: usize) -> (GaussianSpec, LabeledDataset) {
    generate(seed, 3, 30, 1.0, 4.0, n, DEFAULT_SPLIT).unwrap()
}

/// A two-hidden-layer ReLU network whose logits equal the exact posterior
/// scores up to a per-sample constant.
///
/// `−‖x−μ_k‖²/(2σ²)` differs from `μ_k·x/σ² − ‖μ_k‖²/(2σ²)` only by a term
/// shared by all classes. The hidden layers carry `x` through as
/// `[relu(x), relu(−x)]`.
pub fn oracle_model(spec: &GaussianSpec) -> MlpModel {
    let (d, c) = (spec.dim, spec.num_classes);
    let s2 = spec.sigma * spec.sigma;
    let mut w1 = Matrix::zeros(2 * d, d);
    for i in 0..d {
        w1.set(i, i, 1.0);
        w1.set(d + i, i, -1.0);
    }
    let w2 = Matrix::identity(2 * d);
    let mut w3 = Matrix::zeros(c, 2 * d);
    let mut b3 = vec![0.0; c];
    for k in 0..c {
        for i in 0..d {
            let m = spec.means[k][i] / s2;
            w3.set(k, i, m);
            w3.set(k, d + i, -m);
        }
        b3[k] = -spec.means[k].iter().map(|m| m * m).sum::<f64>() / (2.0 * s2);
    }
    MlpModel::from_layers(vec![
        Dense { weight: w1, bias: vec![0.0; 2 * d] },
        Dense { weight: w2, bias: vec![0.0; 2 * d] },
        Dense { weight: w3, bias: b3 },
    ])
    .unwrap()
}

/// A model with all-zero parameters, which predicts the uniform distribution.
pub fn uniform_model(d: usize, c: usize) -> MlpModel {
    MlpModel::from_layers(vec![
        Dense { weight: Matrix::zeros(4, d), bias: vec![0.0; 4] },
        Dense { weight: Matrix::zeros(c, 4), bias: vec![0.0; c] },
    ])
    .unwrap()
}
