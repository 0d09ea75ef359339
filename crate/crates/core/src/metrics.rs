//! Thresholding, confusion counts and the five classification metrics.

use std::fmt;
use std::ops::AddAssign;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// 1 iff `p > threshold`; ties go to the negative class.
pub fn classify(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p > threshold)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Labels that were positive.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    /// Accuracy, or 0 when nothing was scored.
    pub fn accuracy(&self) -> f64 {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.tn += rhs.tn;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub counts: ConfusionCounts,
}

/// Metrics from pooled counts. A zero denominator makes that metric 0.
pub fn compute_metrics(counts: ConfusionCounts) -> Result<MetricsReport> {
    if counts.total() == 0 {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    let ConfusionCounts { tp, tn, fp, fn_ } = counts;
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den);
    Ok(MetricsReport { accuracy: counts.accuracy(), precision, recall, f1, mcc, counts })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "accuracy,precision,recall,f1,mcc,tp,tn,fp,fn,positives,negatives";

    pub fn csv_row(&self) -> String {
        let c = &self.counts;
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.mcc,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            c.positives(),
            c.negatives()
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "{:>9} {:>9} {:>9} {:>9} {:>9}", "Accuracy", "Precision", "Recall", "F1", "MCC")?;
        writeln!(
            f,
            "{:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            self.accuracy, self.precision, self.recall, self.f1, self.mcc
        )?;
        writeln!(
            f,
            "tp {}  tn {}  fp {}  fn {}  (labels: {} up / {} down, predicted up: {})",
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            c.positives(),
            c.negatives(),
            c.predicted_positive()
        )?;
        write!(f, "metrics with a zero denominator are reported as 0")
    }
}

/// One scored stock-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub day: String,
    pub stock_id: String,
    pub probability: f64,
    pub label: u8,
}

fn malformed(path: &Path, line: u64, e: impl fmt::Display) -> Error {
    Error::Malformed { path: path.to_path_buf(), line, msg: e.to_string() }
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| malformed(path, 0, e))?;
    for r in records {
        w.serialize(r).map_err(|e| malformed(path, 0, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| malformed(path, 0, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<PredictionRecord>().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| malformed(path, line, e))?;
        if !(0.0..=1.0).contains(&rec.probability) || rec.label > 1 {
            return Err(malformed(path, line, "probability must be in [0,1] and label 0 or 1"));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::NoRows { path: path.to_path_buf() });
    }
    Ok(out)
}

/// Pooled metrics over prediction records.
pub fn score_records(records: &[PredictionRecord], threshold: f64) -> Result<MetricsReport> {
    let probs: Vec<f64> = records.iter().map(|r| r.probability).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    compute_metrics(confusion(&classify(&probs, threshold), &labels)?)
}
