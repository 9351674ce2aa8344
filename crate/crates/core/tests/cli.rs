use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use kdlab::cli;
use kdlab::lab::{read_results_csv, Provenance};
use kdlab::Error;

fn run(args: &[&str]) -> kdlab::Result<String> {
    let mut out = Vec::new();
    cli::run(std::iter::once("kdlab").chain(args.iter().copied()), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 4] = ["--epochs", "2", "--hidden-dim", "8"];

fn dataset(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let path = dir.join(name);
    run(&["gen-data", "--samples", "600", "--seed", seed, "--out", p(&path)]).unwrap();
    path
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dataset(dir.path(), "a.csv", "5");
    let b = dataset(dir.path(), "b.csv", "5");
    let c = dataset(dir.path(), "c.csv", "6");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert!(dir.path().join("a.csv.meta.json").exists());
    assert!(dir.path().join("a.csv.manifest.json").exists());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["num_samples"], 600);
    assert_eq!(meta["num_classes"], 3);
}

#[test]
fn gen_data_binary_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bin.csv");
    run(&["gen-data", "--samples", "200", "--classes", "2", "--out", p(&path)]).unwrap();
    let header = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert!(header.ends_with(",y,p_0,p_1,split"), "{header}");
}

#[test]
fn teacher_then_student_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d.csv", "1");
    let ce = dir.path().join("ce.ckpt");
    let mse = dir.path().join("mse.ckpt");
    let text = run(&[&["train-teacher", "--data", p(&data), "--out", p(&ce)][..], &TINY].concat()).unwrap();
    assert!(text.contains("test accuracy"));
    run(&[&["train-teacher", "--data", p(&data), "--loss", "mse", "--out", p(&mse)][..], &TINY].concat()).unwrap();
    assert_ne!(fs::read(&ce).unwrap(), fs::read(&mse).unwrap());
    let history = fs::read_to_string(dir.path().join("ce.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let results = dir.path().join("r.csv");
    let base = ["distill", "--data", p(&data), "--out", p(&results)];
    run(&[&base[..], &["--teacher", p(&mse), "--teacher-loss", "mse"], &TINY].concat()).unwrap();
    run(&[&base[..], &["--targets", "exact-bcpd"], &TINY].concat()).unwrap();
    run(&[&base[..], &["--targets", "one-hot"], &TINY].concat()).unwrap();
    let records = read_results_csv(&results).unwrap();
    let prov: Vec<Provenance> = records.iter().map(|r| r.provenance).collect();
    assert_eq!(prov, [Provenance::Teacher, Provenance::ExactBcpd, Provenance::OneHot]);
    assert_eq!(records[0].teacher_loss, Some(kdlab::LossKind::Mse));
    assert!(records[0].teacher_test_acc.is_some());
    assert_eq!(records[1].mse_to_bcpd, 0.0);
}

#[test]
fn distill_needs_a_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d.csv", "1");
    let out = dir.path().join("r.csv");
    assert!(run(&["distill", "--data", p(&data), "--out", p(&out)]).is_err());
    let missing = dir.path().join("nope.ckpt");
    assert!(run(&["distill", "--data", p(&data), "--out", p(&out), "--teacher", p(&missing)]).is_err());
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&["train-teacher", "--data", p(&dir.path().join("x.csv")), "--out", p(&dir.path().join("t"))]);
    assert!(err.is_err());
}

fn sweep(dir: &Path, data: &Path, kind: &str, out: &str, extra: &[&str]) -> (Vec<u8>, String) {
    let path = dir.join(out);
    let text = run(&[&["sweep", kind, "--data", p(data), "--out", p(&path), "--seed", "3"][..], &TINY, extra].concat())
        .unwrap();
    (fs::read(&path).unwrap(), text)
}

#[test]
fn sweeps_are_deterministic_and_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d.csv", "2");
    for (kind, extra) in [
        ("set1", vec!["--grid-len", "3"]),
        ("set2", vec!["--repeats", "2"]),
        ("semi", vec!["--fractions", "0.1,0.2", "--seeds", "2"]),
    ] {
        let (a, text) = sweep(dir.path(), &data, kind, "a.csv", &extra);
        let (b, _) = sweep(dir.path(), &data, kind, "b.csv", &extra);
        let (c, _) = sweep(dir.path(), &data, kind, "c.csv", &[&extra[..], &["--jobs", "3"]].concat());
        assert_eq!(a, b, "{kind}");
        assert_eq!(a, c, "{kind} with --jobs 3");
        assert!(text.contains("bayes test accuracy"), "{text}");
        let body = String::from_utf8(a).unwrap();
        assert!(body.starts_with("# kdlab"), "{body}");
        assert!(body.contains("# distances over:"));
    }
}

#[test]
fn binary_sweep_generates_its_own_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bin.csv");
    let text = run(&[&["sweep", "binary", "--samples", "600", "--repeats", "2", "--out", p(&out)][..], &TINY].concat())
        .unwrap();
    assert!(text.contains("welch"));
    let records = read_results_csv(&out).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.run_id.starts_with("binary-")));
}

#[test]
fn analyze_writes_plot_data_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d.csv", "4");
    sweep(dir.path(), &data, "set1", "s1.csv", &["--grid-len", "4"]);
    let plots = dir.path().join("plots");
    let text = run(&["analyze", "--results", p(&dir.path().join("s1.csv")), "--plot-dir", p(&plots)]).unwrap();
    assert!(text.contains("verdict:"), "{text}");
    assert!(text.contains("spearman"));
    let dat = fs::read_to_string(plots.join("acc_vs_mse.dat")).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(plots.join("acc_vs_ce.dat").exists());
}

#[test]
fn analyze_reports_line_of_malformed_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d.csv", "4");
    let (bytes, _) = sweep(dir.path(), &data, "set1", "s1.csv", &["--grid-len", "3"]);
    let text = String::from_utf8(bytes).unwrap();
    let bad_line = text.lines().count();
    let mut lines: Vec<&str> = text.lines().collect();
    let last = lines.pop().unwrap().replace("noisy_bcpd", "mystery");
    let broken = format!("{}\n{last}\n", lines.join("\n"));
    let path = dir.path().join("broken.csv");
    fs::write(&path, broken).unwrap();
    match run(&["analyze", "--results", p(&path)]) {
        Err(Error::Parse { line, .. }) => assert_eq!(line as usize, bad_line),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), "d.csv", "1");
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "seed = 11\n[train]\nepochs = 1\nhidden_dim = 4\n").unwrap();
    let out = dir.path().join("t.ckpt");
    run(&["train-teacher", "--data", p(&data), "--out", p(&out), "--config", p(&cfg), "--epochs", "2"]).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("t.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["epochs"], 2);
    assert_eq!(manifest["config"]["hidden_dim"], 4);
    assert!(manifest["dataset_digest"].as_str().unwrap().len() == 64);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_kdlab");
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(exe)
        .args(["gen-data", "--samples", "100", "--out", p(&dir.path().join("d.csv"))])
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("bayes accuracy"));
    let bad = Command::new(exe)
        .args(["analyze", "--results", p(&dir.path().join("missing.csv"))])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));
    let help = Command::new(exe).args(["sweep", "--help"]).output().unwrap();
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("--jobs"));
}
