//! Command-line front end.
//!
//! Configuration precedence: built-in defaults, then an optional TOML file
//! (`--config`), then command-line flags. The resolved values go into a
//! manifest written next to the primary output before any training starts.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::lab::{
    self, distill, evaluate_accuracy, evaluate_distance_to_bcpd, mean, paired_values, read_results_csv, spearman,
    train_model, welch_greater, write_results_csv, ExperimentRecord, Field, TargetSource, TrainConfig, TrainHistory,
};
use crate::losses::LossKind;
use crate::rng::RngState;
use crate::synth::{self, DatasetMetadata, GaussianSpec, LabeledDataset, Split};
use crate::{MlpModel, TargetDistribution};

/// Samples in the `--fast` profile.
pub const FAST_SAMPLES: usize = 20_000;
pub const DEFAULT_SAMPLES: usize = 100_000;
/// Slack above the Bayes accuracy tolerated on a finite test split.
pub const BAYES_SLACK: f64 = 0.02;

#[derive(Parser, Debug)]
#[command(
    name = "kdlab",
    version,
    about = "Distillation experiments on a synthetic Gaussian task with a known posterior"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset CSV with exact posteriors and a metadata sidecar.
    GenData(GenDataArgs),
    /// Train a teacher on one-hot labels and save its checkpoint.
    TrainTeacher(TrainTeacherArgs),
    /// Train one student and append its record to a results CSV.
    Distill(DistillArgs),
    /// Run one of the experiment sweeps.
    Sweep(SweepArgs),
    /// Correlations and plot data from a results CSV.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Root seed for every random stream [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with [data], [train] and [sweep] tables
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataFlags {
    /// Number of samples [default: 100000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Use 20000 samples unless --samples is given
    #[arg(long)]
    pub fast: bool,
    /// Number of classes [default: 3]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Input dimension [default: 30]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Scale of the class means [default: 1]
    #[arg(long)]
    pub delta_mu: Option<f64>,
    /// Within-class standard deviation [default: 4]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Train,val,test fractions [default: 0.9,0.05,0.05]
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// SGD learning rate [default: 0.0005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Temperature applied to soft targets and student logits [default: 1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Width of each hidden layer [default: 128]
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Number of hidden layers [default: 2]
    #[arg(long)]
    pub hidden_layers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output dataset CSV; the sidecar goes to <out>.meta.json
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct TrainTeacherArgs {
    /// Dataset CSV written by gen-data
    #[arg(long)]
    pub data: PathBuf,
    /// Teacher loss on one-hot labels
    #[arg(long, value_enum, default_value_t = LossArg::Ce)]
    pub loss: LossArg,
    /// Output checkpoint; history goes to <out>.history.csv
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Dataset CSV written by gen-data
    #[arg(long)]
    pub data: PathBuf,
    /// Where the student's targets come from
    #[arg(long, value_enum, default_value_t = TargetsArg::Teacher)]
    pub targets: TargetsArg,
    /// Teacher checkpoint (required with --targets teacher)
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Loss the teacher was trained with, recorded in the results row
    #[arg(long, value_enum)]
    pub teacher_loss: Option<LossArg>,
    /// Results CSV to append to (created with a header if missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the student checkpoint here
    #[arg(long)]
    pub save_student: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Which experiment to run
    #[arg(value_enum)]
    pub kind: SweepKind,
    /// Dataset CSV (not used by the binary sweep, which generates its own)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Results CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Replicates per teacher loss for set2 [default: 10] and binary [default: 5]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Number of noise scales for set1 [default: 100]
    #[arg(long)]
    pub grid_len: Option<usize>,
    /// Smallest noise scale for set1 [default: 0.02]
    #[arg(long)]
    pub noise_min: Option<f64>,
    /// Largest noise scale for set1 [default: 3]
    #[arg(long)]
    pub noise_max: Option<f64>,
    /// Labeled fractions for semi [default: 0.01,0.02,0.04,0.08]
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Seeds per fraction and teacher loss for semi [default: 3]
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Semi: the student also gets teacher outputs on the labeled part
    #[arg(long)]
    pub all_soft: bool,
    /// Samples of the generated binary dataset [default: 100000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Binary dataset with 20000 samples unless --samples is given
    #[arg(long)]
    pub fast: bool,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Results CSV
    #[arg(long)]
    pub results: PathBuf,
    /// Directory for acc_vs_mse.dat and acc_vs_ce.dat
    #[arg(long)]
    pub plot_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ce,
    Mse,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => LossKind::Ce,
            LossArg::Mse => LossKind::Mse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetsArg {
    Teacher,
    ExactBcpd,
    OneHot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Set1,
    Set2,
    Semi,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub delta_mu: f64,
    pub sigma: f64,
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            classes: GaussianSpec::DEFAULT_CLASSES,
            dim: GaussianSpec::DEFAULT_DIM,
            delta_mu: GaussianSpec::DEFAULT_DELTA_MU,
            sigma: GaussianSpec::DEFAULT_SIGMA,
            split: synth::DEFAULT_SPLIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub jobs: usize,
    pub repeats: usize,
    pub binary_repeats: usize,
    pub binary_samples: usize,
    pub grid_len: usize,
    pub noise_min: f64,
    pub noise_max: f64,
    pub fractions: Vec<f64>,
    pub seeds: usize,
    pub all_soft: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            jobs: 1,
            repeats: lab::SET2_REPEATS,
            binary_repeats: lab::BINARY_REPEATS,
            binary_samples: DEFAULT_SAMPLES,
            grid_len: lab::SET1_GRID_LEN,
            noise_min: lab::SET1_NOISE_MIN,
            noise_max: lab::SET1_NOISE_MAX,
            fractions: lab::SEMI_FRACTIONS.to_vec(),
            seeds: lab::SEMI_SEEDS,
            all_soft: false,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn resolve_seed(common: &CommonArgs, file: &FileConfig) -> u64 {
    common.seed.or(file.seed).unwrap_or(0)
}

fn resolve_data(flags: &DataFlags, file: &FileConfig) -> Result<DataConfig> {
    let mut d = file.data.clone();
    if flags.fast {
        d.samples = FAST_SAMPLES;
    }
    if let Some(v) = flags.samples {
        d.samples = v;
    }
    if let Some(v) = flags.classes {
        d.classes = v;
    }
    if let Some(v) = flags.dim {
        d.dim = v;
    }
    if let Some(v) = flags.delta_mu {
        d.delta_mu = v;
    }
    if let Some(v) = flags.sigma {
        d.sigma = v;
    }
    if let Some(v) = &flags.split {
        d.split = [v[0], v[1], v[2]];
    }
    Ok(d)
}

fn resolve_train(flags: &TrainFlags, file: &FileConfig, seed: u64) -> Result<TrainConfig> {
    let mut t = file.train.clone();
    t.seed = seed;
    if let Some(v) = flags.lr {
        t.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = flags.epochs {
        t.epochs = v;
    }
    if let Some(v) = flags.temperature {
        t.temperature = v;
    }
    if let Some(v) = flags.hidden_dim {
        t.hidden_dim = v;
    }
    if let Some(v) = flags.hidden_layers {
        t.hidden_layers = v;
    }
    t.validate()?;
    ensure!(t.learning_rate > 0.0, "learning rate must be > 0");
    Ok(t)
}

fn resolve_sweep(args: &SweepArgs, file: &FileConfig) -> SweepConfig {
    let mut s = file.sweep.clone();
    if args.fast {
        s.binary_samples = FAST_SAMPLES;
    }
    if let Some(v) = args.samples {
        s.binary_samples = v;
    }
    if let Some(v) = args.jobs {
        s.jobs = v;
    }
    if let Some(v) = args.repeats {
        s.repeats = v;
        s.binary_repeats = v;
    }
    if let Some(v) = args.grid_len {
        s.grid_len = v;
    }
    if let Some(v) = args.noise_min {
        s.noise_min = v;
    }
    if let Some(v) = args.noise_max {
        s.noise_max = v;
    }
    if let Some(v) = &args.fractions {
        s.fractions = v.clone();
    }
    if let Some(v) = args.seeds {
        s.seeds = v;
    }
    s.all_soft |= args.all_soft;
    s
}

/// Written next to each primary output before heavy work begins.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    /// SHA-256 of the dataset metadata sidecar, when one was read.
    pub dataset_digest: Option<String>,
    pub created_unix_secs: u64,
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            dataset_digest: None,
            created_unix_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    fn write_next_to(&self, primary: &Path) -> Result<()> {
        let path = sibling(primary, "manifest.json");
        write_json(&path, self)
    }
}

/// `<path>.<suffix>`, keeping the original file name intact.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct LoadedData {
    data: LabeledDataset,
    metadata: Option<DatasetMetadata>,
    digest: Option<String>,
}

impl LoadedData {
    fn bayes_test(&self) -> Result<f64> {
        self.data.bayes_accuracy(Split::Test)
    }

    fn describe(&self, path: &Path) -> String {
        match &self.metadata {
            Some(m) => format!(
                "{} (seed {}, {} samples, {} classes, dim {})",
                path.display(),
                m.seed,
                m.num_samples,
                m.num_classes,
                m.dim
            ),
            None => format!("{} ({} samples)", path.display(), self.data.len()),
        }
    }
}

fn load_data(path: &Path) -> Result<LoadedData> {
    ensure!(path.exists(), "dataset {} does not exist", path.display());
    let data = synth::read_dataset_csv(path)?;
    let meta_path = sibling(path, "meta.json");
    let (metadata, digest) = match fs::read(&meta_path) {
        Ok(bytes) => (Some(serde_json::from_slice(&bytes)?), Some(sha256_hex(&bytes))),
        Err(_) => (None, None),
    };
    Ok(LoadedData { data, metadata, digest })
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    dispatch(cli, out)
}

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a, out),
        Command::TrainTeacher(a) => cmd_train_teacher(&a, out),
        Command::Distill(a) => cmd_distill(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Error::io("<stdout>", e))?
    };
}

pub fn cmd_gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_seed(&args.common, &file);
    let d = resolve_data(&args.data, &file)?;
    let meta_path = sibling(&args.out, "meta.json");
    let mut manifest = RunManifest::new("gen-data", serde_json::to_value(&d)?, seed);
    manifest.outputs = vec![args.out.clone(), meta_path.clone()];
    manifest.write_next_to(&args.out)?;

    let (spec, data) = synth::generate(seed, d.classes, d.dim, d.delta_mu, d.sigma, d.samples, d.split)?;
    let mut w = create(&args.out)?;
    synth::write_dataset_csv(&data, &mut w)?;
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    let meta = data.metadata(&spec, seed)?;
    write_json(&meta_path, &meta)?;
    say!(out, "wrote {} ({} samples, {} classes, dim {})", args.out.display(), d.samples, d.classes, d.dim);
    say!(out, "bayes accuracy: test {:.4}, all {:.4}", meta.bayes_accuracy_test, meta.bayes_accuracy_all);
    Ok(())
}

fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["epoch", "train_loss", "val_loss", "val_accuracy"])?;
    for e in 0..h.len() {
        w.write_record([
            (e + 1).to_string(),
            h.train_loss[e].to_string(),
            h.val_loss[e].to_string(),
            h.val_accuracy[e].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_train_teacher(args: &TrainTeacherArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_seed(&args.common, &file);
    let cfg = resolve_train(&args.train, &file, seed)?.with_loss(args.loss.into());
    let loaded = load_data(&args.data)?;
    let history_path = sibling(&args.out, "history.csv");
    let mut manifest = RunManifest::new("train-teacher", serde_json::to_value(&cfg)?, seed);
    manifest.inputs = vec![args.data.clone()];
    manifest.outputs = vec![args.out.clone(), history_path.clone()];
    manifest.dataset_digest = loaded.digest.clone();
    manifest.write_next_to(&args.out)?;

    let data = &loaded.data;
    let hard = TargetDistribution::from_labels(data.num_classes(), &data.y)?;
    let (model, history) = train_model(&cfg, data, &hard, &mut RngState::new(seed))?;
    ensure_parent(&args.out)?;
    model.save(&args.out)?;
    write_history(&history_path, &history)?;
    let acc = evaluate_accuracy(&model, data, Split::Test)?;
    let (mse, ce) = evaluate_distance_to_bcpd(&model, data, Split::Test)?;
    say!(out, "{} teacher saved to {}", cfg.loss, args.out.display());
    say!(out, "test accuracy {acc:.4} (bayes {:.4})", loaded.bayes_test()?);
    say!(out, "distance to exact posterior on test: mse {mse:.6}, ce {ce:.6}");
    Ok(())
}

pub fn cmd_distill(args: &DistillArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_seed(&args.common, &file);
    let cfg = resolve_train(&args.train, &file, seed)?;
    let loaded = load_data(&args.data)?;
    let teacher = match (args.targets, &args.teacher) {
        (TargetsArg::Teacher, Some(p)) => {
            ensure!(p.exists(), "teacher checkpoint {} does not exist", p.display());
            Some(MlpModel::load(p)?)
        }
        (TargetsArg::Teacher, None) => return Err(Error::invalid("--targets teacher needs --teacher <checkpoint>")),
        (_, Some(_)) => return Err(Error::invalid("--teacher is only used with --targets teacher")),
        _ => None,
    };
    let mut manifest = RunManifest::new("distill", serde_json::to_value(&cfg)?, seed);
    manifest.inputs = std::iter::once(args.data.clone()).chain(args.teacher.clone()).collect();
    manifest.outputs = std::iter::once(args.out.clone()).chain(args.save_student.clone()).collect();
    manifest.dataset_digest = loaded.digest.clone();
    manifest.write_next_to(&args.out)?;

    let source = match &teacher {
        Some(model) => TargetSource::Teacher {
            model,
            loss: args.teacher_loss.map(Into::into),
        },
        None if args.targets == TargetsArg::ExactBcpd => TargetSource::ExactBcpd,
        None => TargetSource::OneHot,
    };
    let (student, record) = distill(&cfg, &loaded.data, source, &mut RngState::new(seed))?;
    check_bayes(std::slice::from_ref(&record), loaded.bayes_test()?)?;
    if let Some(p) = &args.save_student {
        ensure_parent(p)?;
        student.save(p)?;
    }
    append_record(&args.out, &record, &distill_comments(&cfg, &args.data, &loaded))?;
    say!(
        out,
        "{}: student test accuracy {:.4}; targets mse {:.6}, ce {:.6}",
        record.provenance,
        record.student_test_acc,
        record.mse_to_bcpd,
        record.ce_to_bcpd
    );
    Ok(())
}

fn append_record(path: &Path, record: &ExperimentRecord, comments: &[String]) -> Result<()> {
    let exists = fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    if !exists {
        return write_results_csv(std::slice::from_ref(record), comments, create(path)?);
    }
    // Append a data row only; the header is already there.
    let mut buf = Vec::new();
    write_results_csv(std::slice::from_ref(record), &[], &mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))?;
    let row = text.lines().nth(1).unwrap_or_default();
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{row}").map_err(|e| Error::io(path, e))
}

fn convention_comments(distances_over: &str, cfg: &TrainConfig) -> Vec<String> {
    vec![
        format!("kdlab {} results", env!("CARGO_PKG_VERSION")),
        "mse_to_bcpd: mean over samples of sum_k (p_k - p*_k)^2".into(),
        "ce_to_bcpd: mean over samples of -sum_k p*_k ln max(p_k, 1e-12)".into(),
        format!("distances over: {distances_over}"),
        format!(
            "student: cross-entropy on soft targets, temperature {}, lr {}, batch {}, epochs {}",
            cfg.temperature, cfg.learning_rate, cfg.batch_size, cfg.epochs
        ),
    ]
}

fn distill_comments(cfg: &TrainConfig, path: &Path, loaded: &LoadedData) -> Vec<String> {
    let mut c = convention_comments(
        "test split for teacher targets; train split for exact or one-hot targets",
        cfg,
    );
    c.push(format!("dataset: {}", loaded.describe(path)));
    c
}

fn check_bayes(records: &[ExperimentRecord], bayes: f64) -> Result<()> {
    for r in records {
        if r.student_test_acc > bayes + BAYES_SLACK {
            return Err(Error::Invariant(format!(
                "{}: student accuracy {:.4} exceeds bayes accuracy {:.4} by more than {BAYES_SLACK}",
                r.run_id, r.student_test_acc, bayes
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepManifestConfig<'a> {
    kind: SweepKind,
    train: &'a TrainConfig,
    sweep: &'a SweepConfig,
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_seed(&args.common, &file);
    let cfg = resolve_train(&args.train, &file, seed)?;
    let s = resolve_sweep(args, &file);
    ensure!(s.jobs >= 1, "--jobs must be >= 1");
    let loaded = match (args.kind, &args.data) {
        (SweepKind::Binary, _) => None,
        (_, Some(p)) => Some(load_data(p)?),
        (_, None) => return Err(Error::invalid("this sweep needs --data <dataset.csv>")),
    };
    let mut manifest = RunManifest::new(
        "sweep",
        serde_json::to_value(SweepManifestConfig {
            kind: args.kind,
            train: &cfg,
            sweep: &s,
        })?,
        seed,
    );
    manifest.inputs = args.data.iter().cloned().collect();
    manifest.outputs = vec![args.out.clone()];
    manifest.dataset_digest = loaded.as_ref().and_then(|l| l.digest.clone());
    manifest.write_next_to(&args.out)?;

    let rng = RngState::new(seed);
    let (records, comments, bayes) = match (args.kind, &loaded) {
        (SweepKind::Binary, _) => {
            let run = lab::run_binary(&cfg, s.binary_samples, s.binary_repeats, &rng, s.jobs)?;
            let mut c = convention_comments("test split (teacher outputs)", &cfg);
            c.push(format!(
                "experiment: binary, generated dataset seed {} with {} samples, bayes test accuracy {:.4}",
                run.data_seed, s.binary_samples, run.bayes_accuracy
            ));
            (run.records, c, run.bayes_accuracy)
        }
        (kind, Some(l)) => {
            let path = args.data.as_deref().unwrap_or(Path::new(""));
            let (records, over) = match kind {
                SweepKind::Set1 => {
                    ensure!(s.noise_min > 0.0 && s.noise_max >= s.noise_min, "need 0 < noise_min <= noise_max");
                    let grid = synth::log_grid(s.noise_min, s.noise_max, s.grid_len);
                    (
                        lab::run_set1(&cfg, &l.data, &grid, &rng, s.jobs)?,
                        "train split (perturbed supervision targets)",
                    )
                }
                SweepKind::Set2 => (
                    lab::run_set2(&cfg, &l.data, s.repeats, &rng, s.jobs)?,
                    "test split (teacher outputs)",
                ),
                _ => (
                    lab::run_semi_sweep(&cfg, &l.data, &s.fractions, s.seeds, &rng, s.all_soft, s.jobs)?,
                    "test split (teacher outputs)",
                ),
            };
            let mut c = convention_comments(over, &cfg);
            c.push(format!("experiment: {kind:?}").to_lowercase());
            c.push(format!("dataset: {}", l.describe(path)));
            (records, c, l.bayes_test()?)
        }
        (_, None) => unreachable!("checked above"),
    };
    write_results_csv(&records, &comments, create(&args.out)?)?;
    say!(out, "wrote {} records to {}", records.len(), args.out.display());
    say!(out, "bayes test accuracy {bayes:.4}");
    match args.kind {
        SweepKind::Set1 => summarize_correlations(&records, out)?,
        SweepKind::Set2 | SweepKind::Binary => summarize_teachers(&records, out)?,
        SweepKind::Semi => {
            for (f, loss, acc) in lab::semi_means(&s.fractions, s.seeds, &records)? {
                say!(out, "labeled {:>6.2}%  {loss} teacher  mean student accuracy {acc:.4}", f * 100.0);
            }
        }
    }
    check_bayes(&records, bayes)
}

fn summarize_teachers(records: &[ExperimentRecord], out: &mut dyn Write) -> Result<()> {
    for loss in LossKind::ALL {
        let sel: Vec<&ExperimentRecord> = records.iter().filter(|r| r.teacher_loss == Some(loss)).collect();
        if sel.is_empty() {
            continue;
        }
        let m = |f: &dyn Fn(&ExperimentRecord) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        say!(
            out,
            "{loss} teachers (n={}): teacher acc {:.4}, mse_to_bcpd {:.6}, ce_to_bcpd {:.6}, student acc {:.4}",
            sel.len(),
            m(&|r| r.teacher_test_acc.unwrap_or(f64::NAN)),
            m(&|r| r.mse_to_bcpd),
            m(&|r| r.ce_to_bcpd),
            m(&|r| r.student_test_acc)
        );
    }
    let acc = |loss| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.teacher_loss == Some(loss))
            .map(|r| r.student_test_acc)
            .collect()
    };
    match welch_greater(&acc(LossKind::Mse), &acc(LossKind::Ce)) {
        Ok(w) => say!(
            out,
            "welch one-sided (student acc, mse > ce): t {:.3}, df {:.1}, p {:.4}",
            w.t,
            w.df,
            w.p_greater
        ),
        Err(e) => say!(out, "welch test unavailable: {e}"),
    }
    Ok(())
}

/// Pearson and Spearman of student accuracy against both distances.
pub fn accuracy_correlations(records: &[ExperimentRecord]) -> Result<[(f64, f64); 2]> {
    let mut res = [(0.0, 0.0); 2];
    for (slot, field) in res.iter_mut().zip([Field::MseToBcpd, Field::CeToBcpd]) {
        let (d, acc) = paired_values(records, field, Field::StudentTestAcc);
        *slot = (lab::pearson(&acc, &d)?, spearman(&acc, &d)?);
    }
    Ok(res)
}

fn summarize_correlations(records: &[ExperimentRecord], out: &mut dyn Write) -> Result<()> {
    let [(pm, sm), (pc, sc)] = accuracy_correlations(records)?;
    say!(out, "accuracy vs mse_to_bcpd: pearson {pm:.4}, spearman {sm:.4}");
    say!(out, "accuracy vs ce_to_bcpd:  pearson {pc:.4}, spearman {sc:.4}");
    let verdict = if sc.abs() < sm.abs() {
        "MSE distance is the stronger predictor of student accuracy"
    } else if sc.abs() > sm.abs() {
        "CE distance is the stronger predictor of student accuracy"
    } else {
        "both distances rank the runs identically"
    };
    say!(
        out,
        "verdict: |spearman ce| {:.4} vs |spearman mse| {:.4}: {verdict}",
        sc.abs(),
        sm.abs()
    );
    Ok(())
}

fn write_columns(path: &Path, header: &str, x: &[f64], y: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = format!("# {header}\n");
    for (a, b) in x.iter().zip(y) {
        body.push_str(&format!("{a:.17e} {b:.17e}\n"));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let records = read_results_csv(&args.results)?;
    ensure!(records.len() >= 3, "need at least 3 records, found {}", records.len());
    say!(out, "{} records from {}", records.len(), args.results.display());
    summarize_correlations(&records, out)?;
    if records.iter().any(|r| r.teacher_loss.is_some()) {
        summarize_teachers(&records, out)?;
    }
    if let Some(dir) = &args.plot_dir {
        for (field, name) in [(Field::MseToBcpd, "acc_vs_mse.dat"), (Field::CeToBcpd, "acc_vs_ce.dat")] {
            let (d, acc) = paired_values(&records, field, Field::StudentTestAcc);
            let path = dir.join(name);
            write_columns(&path, &format!("{} student_test_acc", field.as_str()), &d, &acc)?;
            say!(out, "wrote {}", path.display());
        }
    }
    Ok(())
}

/// Entry point for the binary: runs the command and maps errors to a
/// nonzero exit code.
pub fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(cli, &mut lock) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_defaults() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("train-teacher")
            .unwrap()
            .render_long_help()
            .to_string();
        for needle in ["[default: 0.0005]", "[default: 32]", "[default: 100]"] {
            assert!(help.contains(needle), "missing {needle} in\n{help}");
        }
        let help = cmd.find_subcommand_mut("gen-data").unwrap().render_long_help().to_string();
        for needle in ["[default: 100000]", "[default: 4]", "[default: 0.9,0.05,0.05]"] {
            assert!(help.contains(needle), "missing {needle} in\n{help}");
        }
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let file: FileConfig = toml::from_str("seed = 9\n[train]\nepochs = 7\nbatch_size = 16\n").unwrap();
        let flags = TrainFlags {
            epochs: Some(3),
            ..Default::default()
        };
        let common = CommonArgs::default();
        let seed = resolve_seed(&common, &file);
        let t = resolve_train(&flags, &file, seed).unwrap();
        assert_eq!((seed, t.epochs, t.batch_size, t.learning_rate), (9, 3, 16, 5e-4));
        let common = CommonArgs {
            seed: Some(4),
            config: None,
        };
        assert_eq!(resolve_seed(&common, &file), 4);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nlearnin_rate = 1.0\n").is_err());
    }

    #[test]
    fn fast_profile_sample_count() {
        let flags = DataFlags {
            fast: true,
            ..Default::default()
        };
        assert_eq!(resolve_data(&flags, &FileConfig::default()).unwrap().samples, FAST_SAMPLES);
    }

    #[test]
    fn sibling_keeps_extension() {
        assert_eq!(sibling(Path::new("a/b.csv"), "meta.json"), PathBuf::from("a/b.csv.meta.json"));
    }
}
