//! Confusion matrices and the scores derived from them, in percent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows index the true class, columns the predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_predictions(k: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.k {
                return Err(Error::LabelOutOfRange { label, k: self.k });
            }
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Writes the matrix as CSV with a `true\pred` header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "true\\pred")?;
        for c in 0..self.k {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for r in 0..self.k {
            write!(out, "{r}")?;
            for c in 0..self.k {
                write!(out, ",{}", self.get(r, c))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Percentage of misclassified examples.
pub fn error_rate(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(100.0 * (1.0 - cm.trace() as f64 / total as f64))
}

/// Mean over classes of `100 * tp / (tp + fp + fn)`.
///
/// A class that never occurs in either truth or prediction scores 100.
pub fn jaccard_class_average(cm: &ConfusionMatrix) -> Result<f64> {
    let k = cm.k();
    if k < 2 {
        return Err(Error::InvalidArgument("jaccard needs at least two classes".into()));
    }
    let mut sum = 0.0;
    for c in 0..k {
        let tp = cm.get(c, c);
        let fp: u64 = (0..k).filter(|&r| r != c).map(|r| cm.get(r, c)).sum();
        let fn_: u64 = (0..k).filter(|&j| j != c).map(|j| cm.get(c, j)).sum();
        let denom = tp + fp + fn_;
        sum += if denom == 0 {
            100.0
        } else {
            100.0 * tp as f64 / denom as f64
        };
    }
    Ok(sum / k as f64)
}

/// Writes `metric,value` rows.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[(&str, f64)]) -> std::io::Result<()> {
    writeln!(out, "metric,value")?;
    for (name, value) in rows {
        writeln!(out, "{name},{value}")?;
    }
    Ok(())
}
