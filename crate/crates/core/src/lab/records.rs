//! Experiment records and the results CSV.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::losses::LossKind;

/// Where a student's supervision came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    NoisyBcpd,
    Teacher,
    ExactBcpd,
    OneHot,
    /// Teacher pseudo-labels on the unlabeled part of a semi-supervised run.
    PseudoLabel,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::NoisyBcpd => "noisy_bcpd",
            Provenance::Teacher => "teacher",
            Provenance::ExactBcpd => "exact_bcpd",
            Provenance::OneHot => "one_hot",
            Provenance::PseudoLabel => "pseudo_label",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One student run. Column order matches the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub provenance: Provenance,
    pub noise_scale: Option<f64>,
    pub teacher_loss: Option<LossKind>,
    pub replicate: Option<usize>,
    pub mse_to_bcpd: f64,
    pub ce_to_bcpd: f64,
    pub teacher_test_acc: Option<f64>,
    pub student_test_acc: f64,
    pub seed: u64,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.mse_to_bcpd >= 0.0 && self.ce_to_bcpd >= 0.0,
            "{}: distances must be >= 0",
            self.run_id
        );
        let acc_ok = |a: f64| (0.0..=1.0).contains(&a);
        ensure!(acc_ok(self.student_test_acc), "{}: student accuracy outside [0, 1]", self.run_id);
        ensure!(
            self.teacher_test_acc.map_or(true, acc_ok),
            "{}: teacher accuracy outside [0, 1]",
            self.run_id
        );
        Ok(())
    }

    pub fn field(&self, f: Field) -> Option<f64> {
        match f {
            Field::NoiseScale => self.noise_scale,
            Field::MseToBcpd => Some(self.mse_to_bcpd),
            Field::CeToBcpd => Some(self.ce_to_bcpd),
            Field::TeacherTestAcc => self.teacher_test_acc,
            Field::StudentTestAcc => Some(self.student_test_acc),
        }
    }
}

/// Numeric record columns usable in correlations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    NoiseScale,
    MseToBcpd,
    CeToBcpd,
    TeacherTestAcc,
    StudentTestAcc,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::NoiseScale => "noise_scale",
            Field::MseToBcpd => "mse_to_bcpd",
            Field::CeToBcpd => "ce_to_bcpd",
            Field::TeacherTestAcc => "teacher_test_acc",
            Field::StudentTestAcc => "student_test_acc",
        }
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Field::NoiseScale,
            Field::MseToBcpd,
            Field::CeToBcpd,
            Field::TeacherTestAcc,
            Field::StudentTestAcc,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown field {s:?}")))
    }
}

/// Values of two fields over the records where both are present.
pub fn paired_values(records: &[ExperimentRecord], x: Field, y: Field) -> (Vec<f64>, Vec<f64>) {
    records
        .iter()
        .filter_map(|r| Some((r.field(x)?, r.field(y)?)))
        .unzip()
}

/// Writes `#`-prefixed comment lines, then the header and one row per record.
pub fn write_results_csv<W: Write>(records: &[ExperimentRecord], comments: &[String], mut w: W) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(w, "# {line}").map_err(|e| Error::io("<results csv>", e))?;
        }
    }
    let mut wtr = csv::WriterBuilder::new().has_headers(true).from_writer(w);
    for r in records {
        r.validate()?;
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record(HEADER)?;
    }
    wtr.flush().map_err(|e| Error::io("<results csv>", e))?;
    Ok(())
}

pub const HEADER: [&str; 10] = [
    "run_id",
    "provenance",
    "noise_scale",
    "teacher_loss",
    "replicate",
    "mse_to_bcpd",
    "ce_to_bcpd",
    "teacher_test_acc",
    "student_test_acc",
    "seed",
];

/// Reads a results CSV, skipping `#` comment lines. Errors carry the
/// 1-based line number in the file.
pub fn read_results_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text, path)
}

pub fn parse_results_csv(text: &str, path: &Path) -> Result<Vec<ExperimentRecord>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().ne(HEADER) {
        let line = first_content_line(text);
        return Err(parse_err(line, format!("expected header {}", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let r: ExperimentRecord = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        r.validate().map_err(|e| parse_err(line, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

fn first_content_line(text: &str) -> u64 {
    text.lines()
        .position(|l| !l.starts_with('#'))
        .map_or(1, |i| i as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ExperimentRecord> {
        vec![
            ExperimentRecord {
                run_id: "set1-000".into(),
                provenance: Provenance::NoisyBcpd,
                noise_scale: Some(0.02),
                teacher_loss: None,
                replicate: None,
                mse_to_bcpd: 1.25e-5,
                ce_to_bcpd: 0.731,
                teacher_test_acc: None,
                student_test_acc: 0.675,
                seed: 17,
            },
            ExperimentRecord {
                run_id: "set2-mse-03".into(),
                provenance: Provenance::Teacher,
                noise_scale: None,
                teacher_loss: Some(LossKind::Mse),
                replicate: Some(3),
                mse_to_bcpd: 0.031,
                ce_to_bcpd: 0.78,
                teacher_test_acc: Some(0.66),
                student_test_acc: 0.669,
                seed: u64::MAX,
            },
        ]
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_results_csv(&sample(), &["distance: squared euclidean".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# distance: squared euclidean\nrun_id,provenance,"));
        assert!(text.contains("set2-mse-03,teacher,,mse,3,"));
        let back = parse_results_csv(&text, Path::new("mem.csv")).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn empty_file_still_has_header() {
        let mut buf = Vec::new();
        write_results_csv(&[], &[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), HEADER.join(","));
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut buf = Vec::new();
        write_results_csv(&sample(), &["a".into(), "b".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("0.669", "oops");
        match parse_results_csv(&text, Path::new("r.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_accuracy_rejected() {
        let mut r = sample();
        r[0].student_test_acc = 1.5;
        assert!(write_results_csv(&r, &[], Vec::new()).is_err());
    }

    #[test]
    fn paired_values_skip_missing() {
        let (x, y) = paired_values(&sample(), Field::NoiseScale, Field::StudentTestAcc);
        assert_eq!(x, vec![0.02]);
        assert_eq!(y, vec![0.675]);
    }
}
