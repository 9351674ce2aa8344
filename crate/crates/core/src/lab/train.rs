//! Mini-batch SGD training and evaluation against the exact posterior.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::losses::{ce_distance, loss_and_grad, mse_distance, LossKind};
use crate::nn::DEFAULT_HIDDEN;
use crate::rng::RngState;
use crate::synth::{LabeledDataset, Split};
use crate::tensor::argmax;
use crate::{MlpModel, TargetDistribution};

/// Rows per forward pass when evaluating a whole split.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub temperature: f64,
    pub hidden_dim: usize,
    /// Number of hidden layers; the output layer comes on top.
    pub hidden_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            learning_rate: 5e-4,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            temperature: 1.0,
            hidden_dim: DEFAULT_HIDDEN,
            hidden_layers: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be finite and >= 0, got {}",
            self.learning_rate
        );
        ensure!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure!(self.epochs >= 1, "epochs must be >= 1");
        ensure!(
            self.temperature > 0.0 && self.temperature.is_finite(),
            "temperature must be > 0"
        );
        ensure!(self.hidden_dim >= 1, "hidden_dim must be >= 1");
        Ok(())
    }

    pub fn with_loss(&self, loss: LossKind) -> Self {
        Self { loss, ..self.clone() }
    }

    fn init_model(&self, rng: &mut RngState, input_dim: usize, num_classes: usize) -> Result<MlpModel> {
        let hidden = vec![self.hidden_dim; self.hidden_layers];
        MlpModel::init_with_hidden(rng, input_dim, &hidden, num_classes)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// NaN when the validation split is empty.
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }
}

/// Trains a fresh model on the `Train` split.
///
/// `targets` has one row per sample of `data`; only train rows are read.
/// `rng` draws the initial parameters, then the per-epoch batch orders.
pub fn train_model(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    targets: &TargetDistribution,
    rng: &mut RngState,
) -> Result<(MlpModel, TrainHistory)> {
    let idx = data.indices(Split::Train);
    train_on(cfg, data, targets, &idx, rng)
}

/// Like [`train_model`] but on an explicit set of sample indices.
pub fn train_on(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    targets: &TargetDistribution,
    train_idx: &[usize],
    rng: &mut RngState,
) -> Result<(MlpModel, TrainHistory)> {
    train_on_with(cfg, data, targets, train_idx, rng, |_, _| {})
}

/// [`train_on`] with a hook called after every epoch (0-based) with the
/// current model.
pub fn train_on_with(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    targets: &TargetDistribution,
    train_idx: &[usize],
    rng: &mut RngState,
    mut on_epoch: impl FnMut(usize, &MlpModel),
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    ensure!(
        targets.len() == data.len(),
        "targets have {} rows, dataset has {}",
        targets.len(),
        data.len()
    );
    ensure!(
        targets.num_classes() == data.num_classes(),
        "targets have {} classes, dataset has {}",
        targets.num_classes(),
        data.num_classes()
    );
    ensure!(!train_idx.is_empty(), "no training samples");
    ensure!(train_idx.iter().all(|&i| i < data.len()), "training index out of range");

    let mut model = cfg.init_model(rng, data.dim(), data.num_classes())?;
    let mut order = train_idx.to_vec();
    let val_idx = data.indices(Split::Val);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.x.gather_rows(batch);
            let t = targets.gather(batch);
            let (logits, cache) = model.forward(&x)?;
            let (loss, dlogits) = loss_and_grad(cfg.loss, &logits, &t, cfg.temperature)?;
            let grads = model.backward(&cache, &dlogits)?;
            model.sgd_step(&grads, cfg.learning_rate);
            loss_sum += loss * batch.len() as f64;
        }
        history.train_loss.push(loss_sum / order.len() as f64);
        if val_idx.is_empty() {
            history.val_loss.push(f64::NAN);
            history.val_accuracy.push(f64::NAN);
        } else {
            let (loss, acc) = hard_label_metrics(&model, data, &val_idx, cfg.loss)?;
            history.val_loss.push(loss);
            history.val_accuracy.push(acc);
        }
        on_epoch(epoch, &model);
    }
    Ok((model, history))
}

/// Mean loss against one-hot labels and accuracy over `idx`.
fn hard_label_metrics(model: &MlpModel, data: &LabeledDataset, idx: &[usize], kind: LossKind) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = model.logits(&data.x.gather_rows(chunk))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.y[i]).collect();
        let t = TargetDistribution::from_labels(data.num_classes(), &labels)?;
        let (l, _) = loss_and_grad(kind, &logits, &t, 1.0)?;
        loss += l * chunk.len() as f64;
        hits += logits
            .iter_rows()
            .zip(&labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok((loss / idx.len() as f64, hits as f64 / idx.len() as f64))
}

/// Fraction of `split` samples whose predicted label equals the true label.
pub fn evaluate_accuracy(model: &MlpModel, data: &LabeledDataset, split: Split) -> Result<f64> {
    let idx = data.indices(split);
    ensure!(!idx.is_empty(), "split {split} is empty");
    let mut hits = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let pred = model.predict_label(&data.x.gather_rows(chunk))?;
        hits += chunk.iter().zip(pred).filter(|(&i, p)| data.y[i] == *p).count();
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Model probabilities for the listed samples, as an `[idx.len() × C]` matrix.
pub fn predict_rows(model: &MlpModel, data: &LabeledDataset, idx: &[usize]) -> Result<crate::Matrix> {
    let mut out = Vec::with_capacity(idx.len() * data.num_classes());
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend_from_slice(model.predict_proba(&data.x.gather_rows(chunk))?.data());
    }
    crate::Matrix::new(idx.len(), model.num_classes(), out)
}

/// Mean `(mse_distance, ce_distance)` between the model's probabilities and
/// the exact posterior over `split`; CE is `H(p*, p_model)`.
pub fn evaluate_distance_to_bcpd(model: &MlpModel, data: &LabeledDataset, split: Split) -> Result<(f64, f64)> {
    let idx = data.indices(split);
    ensure!(!idx.is_empty(), "split {split} is empty");
    let probs = predict_rows(model, data, &idx)?;
    mean_distances(data, &idx, &probs)
}

/// Mean distances between `rows[k]` and the exact posterior of sample `idx[k]`.
pub fn mean_distances(data: &LabeledDataset, idx: &[usize], rows: &crate::Matrix) -> Result<(f64, f64)> {
    ensure!(rows.rows() == idx.len(), "row count mismatch");
    ensure!(!idx.is_empty(), "no rows");
    let (mut mse, mut ce) = (0.0, 0.0);
    for (k, &i) in idx.iter().enumerate() {
        mse += mse_distance(rows.row(k), data.bcpd.row(i))?;
        ce += ce_distance(data.bcpd.row(i), rows.row(k))?;
    }
    let n = idx.len() as f64;
    Ok((mse / n, ce / n))
}
