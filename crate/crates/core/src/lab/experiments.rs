//! The distillation experiment protocols.
//!
//! Every run derives its random streams from the caller's [`RngState`] by
//! fixed labels, so a record depends only on the base seed and its position
//! in the sweep, never on execution order or on `jobs`.

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::lab::records::{ExperimentRecord, Provenance};
use crate::lab::stats::mean;
use crate::lab::train::{
    evaluate_accuracy, evaluate_distance_to_bcpd, mean_distances, predict_rows, train_model, train_on, TrainConfig,
};
use crate::losses::{LossKind, Target};
use crate::rng::RngState;
use crate::synth::{generate, perturb_bcpd, GaussianSpec, LabeledDataset, Split, DEFAULT_SPLIT};
use crate::{MlpModel, TargetDistribution};

pub const SET1_NOISE_MIN: f64 = 0.02;
pub const SET1_NOISE_MAX: f64 = 3.0;
pub const SET1_GRID_LEN: usize = 100;
pub const SET2_REPEATS: usize = 10;
pub const SEMI_FRACTIONS: [f64; 4] = [0.01, 0.02, 0.04, 0.08];
pub const SEMI_SEEDS: usize = 3;
pub const BINARY_REPEATS: usize = 5;

// Stream labels under the sweep seed.
const SET1_STREAM: u64 = 1;
const SET2_STREAM: u64 = 2;
const SEMI_STREAM: u64 = 3;
const BINARY_STREAM: u64 = 4;
const REFERENCE_STREAM: u64 = 5;

/// 100 log-spaced noise scales in `[0.02, 3.0]`.
pub fn default_noise_grid() -> Vec<f64> {
    crate::synth::log_grid(SET1_NOISE_MIN, SET1_NOISE_MAX, SET1_GRID_LEN)
}

/// Runs `f(0..n)`, on a private pool of `jobs` threads when `jobs > 1`.
/// Output order is by index either way.
pub fn run_indexed<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

fn split_indices(data: &LabeledDataset, split: Split) -> Result<Vec<usize>> {
    let idx = data.indices(split);
    ensure!(!idx.is_empty(), "split {split} is empty");
    Ok(idx)
}

/// Students always learn with cross-entropy against their targets.
fn student_config(cfg: &TrainConfig) -> TrainConfig {
    cfg.with_loss(LossKind::Ce)
}

/// Hard labels everywhere, with the listed rows replaced by `probs` rows.
/// Rows outside the training indices are never read by the trainer.
fn soft_rows(data: &LabeledDataset, idx: &[usize], probs: &crate::Matrix) -> Result<TargetDistribution> {
    let mut t = TargetDistribution::from_labels(data.num_classes(), &data.y)?;
    for (k, &i) in idx.iter().enumerate() {
        t.set(i, Target::Soft(probs.row(k).to_vec()))?;
    }
    Ok(t)
}

/// What a single student is distilled from.
#[derive(Clone, Copy, Debug)]
pub enum TargetSource<'a> {
    /// A trained teacher's softmax outputs on the train split.
    Teacher {
        model: &'a MlpModel,
        loss: Option<LossKind>,
    },
    ExactBcpd,
    OneHot,
}

/// Trains one student on the train split from `source` and evaluates it.
///
/// For a teacher the record's distances and accuracy describe the teacher
/// on the test split; for exact or one-hot targets they describe the
/// supervision rows on the train split.
pub fn distill(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    source: TargetSource<'_>,
    rng: &mut RngState,
) -> Result<(MlpModel, ExperimentRecord)> {
    let train = split_indices(data, Split::Train)?;
    let seed = rng.seed();
    let (targets, provenance, teacher_loss, dist, teacher_acc) = match source {
        TargetSource::Teacher { model, loss } => {
            ensure!(
                model.input_dim() == data.dim() && model.num_classes() == data.num_classes(),
                "teacher shape does not match the dataset"
            );
            let probs = predict_rows(model, data, &train)?;
            let acc = evaluate_accuracy(model, data, Split::Test)?;
            let dist = evaluate_distance_to_bcpd(model, data, Split::Test)?;
            (soft_rows(data, &train, &probs)?, Provenance::Teacher, loss, dist, Some(acc))
        }
        TargetSource::ExactBcpd => {
            let rows = data.bcpd.gather_rows(&train);
            let dist = mean_distances(data, &train, &rows)?;
            (TargetDistribution::from_prob_rows(&data.bcpd)?, Provenance::ExactBcpd, None, dist, None)
        }
        TargetSource::OneHot => {
            let mut rows = crate::Matrix::zeros(train.len(), data.num_classes());
            for (k, &i) in train.iter().enumerate() {
                rows.set(k, data.y[i], 1.0);
            }
            let dist = mean_distances(data, &train, &rows)?;
            let t = TargetDistribution::from_labels(data.num_classes(), &data.y)?;
            (t, Provenance::OneHot, None, dist, None)
        }
    };
    let (student, _) = train_model(&student_config(cfg), data, &targets, rng)?;
    let record = ExperimentRecord {
        run_id: format!("distill-{provenance}"),
        provenance,
        noise_scale: None,
        teacher_loss,
        replicate: None,
        mse_to_bcpd: dist.0,
        ce_to_bcpd: dist.1,
        teacher_test_acc: teacher_acc,
        student_test_acc: evaluate_accuracy(&student, data, Split::Test)?,
        seed,
    };
    Ok((student, record))
}

/// Students distilled from log-space perturbations of the exact posterior,
/// one per noise scale.
///
/// Distances compare the perturbed train-split targets with the exact
/// posterior. Each scale gets its own noise and student streams.
pub fn run_set1(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    noise_grid: &[f64],
    rng: &RngState,
    jobs: usize,
) -> Result<Vec<ExperimentRecord>> {
    ensure!(!noise_grid.is_empty(), "noise grid is empty");
    ensure!(
        noise_grid.iter().all(|s| s.is_finite() && *s >= 0.0),
        "noise scales must be finite and >= 0"
    );
    cfg.validate()?;
    let train = split_indices(data, Split::Train)?;
    let clean = data.bcpd.gather_rows(&train);
    let base = rng.derive(SET1_STREAM);
    let student_cfg = student_config(cfg);
    run_indexed(noise_grid.len(), jobs, |i| {
        let scale = noise_grid[i];
        let run = base.derive(i as u64);
        let noisy = perturb_bcpd(&mut run.derive(0), &clean, scale)?;
        let (mse, ce) = mean_distances(data, &train, &noisy)?;
        let targets = soft_rows(data, &train, &noisy)?;
        let (student, _) = train_model(&student_cfg, data, &targets, &mut run.derive(1))?;
        Ok(ExperimentRecord {
            run_id: format!("set1-{i:03}"),
            provenance: Provenance::NoisyBcpd,
            noise_scale: Some(scale),
            teacher_loss: None,
            replicate: None,
            mse_to_bcpd: mse,
            ce_to_bcpd: ce,
            teacher_test_acc: None,
            student_test_acc: evaluate_accuracy(&student, data, Split::Test)?,
            seed: run.seed(),
        })
    })
}

/// Teacher on one-hot labels with `loss`, then a student on its outputs.
fn teacher_then_student(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    hard: &TargetDistribution,
    loss: LossKind,
    run: &RngState,
) -> Result<ExperimentRecord> {
    let (teacher, _) = train_model(&cfg.with_loss(loss), data, hard, &mut run.derive(0))?;
    let source = TargetSource::Teacher {
        model: &teacher,
        loss: Some(loss),
    };
    let (_, mut record) = distill(cfg, data, source, &mut run.derive(1))?;
    record.seed = run.seed();
    Ok(record)
}

/// `repeats` CE teachers and `repeats` MSE teachers, each distilled into a
/// fresh student. Replicate `r` shares its seeds across the two losses, so
/// paired runs differ only through the teacher's loss.
///
/// Records are ordered CE replicates first, then MSE.
pub fn run_set2(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    repeats: usize,
    rng: &RngState,
    jobs: usize,
) -> Result<Vec<ExperimentRecord>> {
    set2_protocol(cfg, data, repeats, &rng.derive(SET2_STREAM), "set2", jobs)
}

fn set2_protocol(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    repeats: usize,
    base: &RngState,
    tag: &str,
    jobs: usize,
) -> Result<Vec<ExperimentRecord>> {
    ensure!(repeats >= 1, "repeats must be >= 1");
    cfg.validate()?;
    split_indices(data, Split::Train)?;
    split_indices(data, Split::Test)?;
    let hard = TargetDistribution::from_labels(data.num_classes(), &data.y)?;
    run_indexed(2 * repeats, jobs, |i| {
        let (loss, r) = (LossKind::ALL[i / repeats], i % repeats);
        let mut rec = teacher_then_student(cfg, data, &hard, loss, &base.derive(r as u64))?;
        rec.run_id = format!("{tag}-{loss}-{r:02}");
        rec.replicate = Some(r);
        Ok(rec)
    })
}

/// One semi-supervised run.
///
/// A random `labeled_fraction` of the train split keeps its labels; the
/// teacher learns from those alone and labels the rest with its softmax
/// outputs. The student then trains on the whole train split: one-hot rows
/// on the labeled part (teacher outputs too when `all_soft`) and teacher
/// outputs elsewhere. Distances describe the teacher on the test split.
pub fn run_semi_supervised(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    labeled_fraction: f64,
    teacher_loss: LossKind,
    rng: &RngState,
    all_soft: bool,
) -> Result<ExperimentRecord> {
    ensure!(
        labeled_fraction > 0.0 && labeled_fraction <= 1.0,
        "labeled_fraction must be in (0, 1], got {labeled_fraction}"
    );
    cfg.validate()?;
    let train = split_indices(data, Split::Train)?;
    let mut order = train.clone();
    rng.derive(0).shuffle(&mut order);
    let n_labeled = ((labeled_fraction * order.len() as f64).round() as usize).min(order.len());
    ensure!(
        n_labeled >= cfg.batch_size,
        "labeled subset has {n_labeled} samples, fewer than one batch of {}",
        cfg.batch_size
    );
    let (labeled, unlabeled) = order.split_at(n_labeled);
    let hard = TargetDistribution::from_labels(data.num_classes(), &data.y)?;
    let (teacher, _) = train_on(&cfg.with_loss(teacher_loss), data, &hard, labeled, &mut rng.derive(1))?;

    let relabel = if all_soft { &order[..] } else { unlabeled };
    let targets = if relabel.is_empty() {
        hard
    } else {
        soft_rows(data, relabel, &predict_rows(&teacher, data, relabel)?)?
    };
    let (student, _) = train_on(&student_config(cfg), data, &targets, &train, &mut rng.derive(2))?;
    let (mse, ce) = evaluate_distance_to_bcpd(&teacher, data, Split::Test)?;
    Ok(ExperimentRecord {
        run_id: format!("semi-{labeled_fraction}-{teacher_loss}"),
        provenance: Provenance::PseudoLabel,
        noise_scale: None,
        teacher_loss: Some(teacher_loss),
        replicate: None,
        mse_to_bcpd: mse,
        ce_to_bcpd: ce,
        teacher_test_acc: Some(evaluate_accuracy(&teacher, data, Split::Test)?),
        student_test_acc: evaluate_accuracy(&student, data, Split::Test)?,
        seed: rng.seed(),
    })
}

/// Semi-supervised runs over `fractions × {CE, MSE} × seeds`, in that
/// nesting order. Seed `s` fixes the labeled subset and the initial
/// parameters for both teacher losses; subsets at larger fractions contain
/// the smaller ones.
pub fn run_semi_sweep(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    fractions: &[f64],
    seeds: usize,
    rng: &RngState,
    all_soft: bool,
    jobs: usize,
) -> Result<Vec<ExperimentRecord>> {
    ensure!(!fractions.is_empty() && seeds >= 1, "need at least one fraction and one seed");
    let base = rng.derive(SEMI_STREAM);
    let per_fraction = 2 * seeds;
    run_indexed(fractions.len() * per_fraction, jobs, |i| {
        let f = fractions[i / per_fraction];
        let loss = LossKind::ALL[(i % per_fraction) / seeds];
        let s = i % seeds;
        let mut rec = run_semi_supervised(cfg, data, f, loss, &base.derive(s as u64), all_soft)?;
        rec.run_id = format!("semi-f{f}-{loss}-s{s}");
        rec.replicate = Some(s);
        Ok(rec)
    })
}

/// Mean student accuracy per `(fraction, loss)` from [`run_semi_sweep`]
/// output with the same `fractions` and `seeds`.
pub fn semi_means(fractions: &[f64], seeds: usize, records: &[ExperimentRecord]) -> Result<Vec<(f64, LossKind, f64)>> {
    ensure!(
        records.len() == fractions.len() * 2 * seeds,
        "expected {} records, got {}",
        fractions.len() * 2 * seeds,
        records.len()
    );
    let mut out = Vec::new();
    for (chunk, &f) in records.chunks(seeds).zip(fractions.iter().flat_map(|f| [f, f])) {
        let loss = chunk[0].teacher_loss.ok_or_else(|| Error::invalid("record without teacher loss"))?;
        ensure!(chunk.iter().all(|r| r.teacher_loss == Some(loss)), "records out of sweep order");
        let acc: Vec<f64> = chunk.iter().map(|r| r.student_test_acc).collect();
        out.push((f, loss, mean(&acc)));
    }
    Ok(out)
}

/// Result of the two-class variant.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryRun {
    pub data_seed: u64,
    pub bayes_accuracy: f64,
    pub records: Vec<ExperimentRecord>,
}

/// The teacher comparison on a freshly generated two-class dataset with
/// the default dimension, separation and spread.
pub fn run_binary(cfg: &TrainConfig, samples: usize, repeats: usize, rng: &RngState, jobs: usize) -> Result<BinaryRun> {
    let base = rng.derive(BINARY_STREAM);
    let data_seed = base.derive(0).seed();
    let (_, data) = generate(
        data_seed,
        2,
        GaussianSpec::DEFAULT_DIM,
        GaussianSpec::DEFAULT_DELTA_MU,
        GaussianSpec::DEFAULT_SIGMA,
        samples,
        DEFAULT_SPLIT,
    )?;
    let records = set2_protocol(cfg, &data, repeats, &base.derive(1), "binary", jobs)?;
    Ok(BinaryRun {
        data_seed,
        bayes_accuracy: data.bayes_accuracy(Split::Test)?,
        records,
    })
}

/// Students from the exact posterior and from one-hot labels, `seeds` of
/// each; seed `s` shares its initial parameters and batch order across the
/// two. Records are ordered exact first, then one-hot.
pub fn run_reference_students(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    seeds: usize,
    rng: &RngState,
    jobs: usize,
) -> Result<Vec<ExperimentRecord>> {
    ensure!(seeds >= 1, "seeds must be >= 1");
    let base = rng.derive(REFERENCE_STREAM);
    run_indexed(2 * seeds, jobs, |i| {
        let s = i % seeds;
        let source = if i < seeds {
            TargetSource::ExactBcpd
        } else {
            TargetSource::OneHot
        };
        let (_, mut rec) = distill(cfg, data, source, &mut base.derive(s as u64))?;
        rec.run_id = format!("reference-{}-{s}", rec.provenance);
        rec.replicate = Some(s);
        Ok(rec)
    })
}

/// Mean student accuracy of the records whose teacher used `loss`.
pub fn mean_student_accuracy(records: &[ExperimentRecord], loss: LossKind) -> Option<f64> {
    let acc: Vec<f64> = records
        .iter()
        .filter(|r| r.teacher_loss == Some(loss))
        .map(|r| r.student_test_acc)
        .collect();
    (!acc.is_empty()).then(|| mean(&acc))
}
