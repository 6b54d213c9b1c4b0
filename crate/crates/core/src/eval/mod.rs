//! Classification metrics and report emission.
//!
//! Ties in top-k ranking go to the lower class index. Precision, recall and
//! F1 with a zero denominator score 0. Macro averages are unweighted means
//! over classes with at least one true sample.

mod report;

pub use report::{
    comparison_table, confusion_csv, emit_report, parse_confusion_csv, read_metrics, ClassEntry,
    ComparisonRow, EmitOptions, MetricsSummary, ReportPaths, CONFUSION_FILE, CURVE_FILE,
    METRICS_FILE,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{what} has {got} entries, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("label {label} is out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("k = {k} is invalid for {classes} classes")]
    TopK { k: usize, classes: usize },
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// The top-k cut-offs a report tries to include.
pub const REPORT_KS: [usize; 3] = [1, 5, 10];

/// `K×K` counts, rows indexed by the true class and columns by the prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        let mut m = Self::zeros(k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(EvalError::Length {
                    what: "confusion row",
                    got: row.len(),
                    expected: k,
                });
            }
            m.counts[i * k..(i + 1) * k].copy_from_slice(&row);
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.classes).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Diagonal sum over total.
    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(EvalError::Empty),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }

    /// The top-left `m×m` block.
    pub fn window(&self, m: usize) -> Self {
        let m = m.min(self.classes);
        Self::from_rows((0..m).map(|i| self.row(i)[..m].to_vec()).collect())
            .expect("square window")
    }
}

pub fn confusion_matrix(truths: &[usize], preds: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truths.len() != preds.len() {
        return Err(EvalError::Length {
            what: "predictions",
            got: preds.len(),
            expected: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::zeros(classes);
    for (&t, &p) in truths.iter().zip(preds) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(EvalError::Label { label, classes });
        }
        m.counts[t * classes + p] += 1;
    }
    Ok(m)
}

/// Position of `class` in the descending order of `row`, ties going to the
/// lower index.
pub fn rank_of(row: &[f64], class: usize) -> usize {
    let z = row[class];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > z || (v == z && j < class))
        .count()
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    (0..row.len()).find(|&j| rank_of(row, j) == 0).unwrap_or(0)
}

/// Fraction of rows whose true class ranks within the top `k`.
pub fn topk_accuracy(rows: &[Vec<f64>], truths: &[usize], k: usize) -> Result<f64> {
    if rows.len() != truths.len() {
        return Err(EvalError::Length {
            what: "truths",
            got: truths.len(),
            expected: rows.len(),
        });
    }
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let classes = rows[0].len();
    if k == 0 || k > classes {
        return Err(EvalError::TopK { k, classes });
    }
    let mut hits = 0usize;
    for (row, &t) in rows.iter().zip(truths) {
        if row.len() != classes {
            return Err(EvalError::Length {
                what: "logit row",
                got: row.len(),
                expected: classes,
            });
        }
        if t >= classes {
            return Err(EvalError::Label { label: t, classes });
        }
        if rank_of(row, t) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class(m: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let k = m.classes();
    (0..k)
        .map(|c| {
            let tp = m.get(c, c);
            let support: u64 = m.row(c).iter().sum();
            let predicted: u64 = (0..k).map(|t| m.get(t, c)).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

/// Unweighted means over classes with support > 0; all zero when no class
/// has support.
pub fn macro_prf(m: &ConfusionMatrix) -> Prf {
    let present: Vec<ClassMetrics> = per_class(m).into_iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(f).sum::<f64>() / present.len() as f64
        }
    };
    Prf {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// Only cut-offs from [`REPORT_KS`] that do not exceed the class count.
    pub topk: BTreeMap<usize, f64>,
    pub macro_avg: Prf,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalReport {
    /// Builds a report from per-sample logits; predictions are row argmaxes.
    pub fn from_logits(rows: &[Vec<f64>], truths: &[usize], labels: Vec<String>) -> Result<Self> {
        let classes = labels.len();
        if let Some(row) = rows.iter().find(|r| r.len() != classes) {
            return Err(EvalError::Length {
                what: "logit row",
                got: row.len(),
                expected: classes,
            });
        }
        let preds: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
        let confusion = confusion_matrix(truths, &preds, classes)?;
        let mut topk = BTreeMap::new();
        for k in REPORT_KS.into_iter().filter(|&k| k <= classes) {
            topk.insert(k, topk_accuracy(rows, truths, k)?);
        }
        Ok(Self {
            accuracy: confusion.accuracy()?,
            macro_avg: macro_prf(&confusion),
            per_class: per_class(&confusion),
            labels,
            confusion,
            topk,
        })
    }
}
