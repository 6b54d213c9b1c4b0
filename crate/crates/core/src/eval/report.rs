use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, EvalError, EvalReport, Result};
use crate::train::{loss_curve_csv, EpochRecord};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CURVE_FILE: &str = "loss_curve.csv";

const CORNER: &str = "truth\\pred";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// The structured metrics document. Top-k entries beyond the class count are
/// null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub top10: Option<f64>,
    pub num_samples: u64,
    pub num_classes: usize,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub dataset: Option<String>,
    pub per_class: Vec<ClassEntry>,
}

impl MetricsSummary {
    pub fn from_report(report: &EvalReport, model: Option<String>, dataset: Option<String>) -> Self {
        Self {
            accuracy: report.accuracy,
            macro_precision: report.macro_avg.precision,
            macro_recall: report.macro_avg.recall,
            macro_f1: report.macro_avg.f1,
            top1: report.topk.get(&1).copied(),
            top5: report.topk.get(&5).copied(),
            top10: report.topk.get(&10).copied(),
            num_samples: report.confusion.total(),
            num_classes: report.confusion.classes(),
            model,
            dataset,
            per_class: report
                .labels
                .iter()
                .zip(&report.per_class)
                .map(|(label, c)| ClassEntry {
                    label: label.clone(),
                    precision: c.precision,
                    recall: c.recall,
                    f1: c.f1,
                    support: c.support,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EmitOptions<'a> {
    /// Emit only the first `m` classes of the confusion matrix.
    pub window: Option<usize>,
    pub model: Option<String>,
    pub dataset: Option<String>,
    pub history: Option<&'a [EpochRecord]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportPaths {
    pub metrics: PathBuf,
    pub confusion: PathBuf,
    pub curve: Option<PathBuf>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Format(format!("csv: {e}"))
}

pub fn confusion_csv(m: &ConfusionMatrix, labels: &[String]) -> Result<String> {
    if labels.len() < m.classes() {
        return Err(EvalError::Length {
            what: "labels",
            got: labels.len(),
            expected: m.classes(),
        });
    }
    let labels = &labels[..m.classes()];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once(CORNER).chain(labels.iter().map(String::as_str)))
        .map_err(csv_err)?;
    for (i, label) in labels.iter().enumerate() {
        let counts = m.row(i).iter().map(u64::to_string);
        w.write_record(std::iter::once(label.clone()).chain(counts))
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| EvalError::Format(e.to_string()))
}

/// Parses a table written by [`emit_report`] back into labels and counts.
pub fn parse_confusion_csv(text: &str) -> Result<(Vec<String>, ConfusionMatrix)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| EvalError::Format("empty confusion table".into()))?
        .map_err(csv_err)?;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.get(0) != labels.get(i).map(String::as_str) {
            return Err(EvalError::Format(format!(
                "confusion row {} is labelled {:?}, expected {:?}",
                i + 1,
                rec.get(0),
                labels.get(i)
            )));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<u64>()
                    .map_err(|e| EvalError::Format(format!("confusion row {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<u64>>>()?;
        rows.push(row);
    }
    if rows.len() != labels.len() {
        return Err(EvalError::Length {
            what: "confusion rows",
            got: rows.len(),
            expected: labels.len(),
        });
    }
    Ok((labels, ConfusionMatrix::from_rows(rows)?))
}

/// Writes the metrics summary, the confusion table and, when a history is
/// given, the loss curve into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path, opts: &EmitOptions) -> Result<ReportPaths> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let summary = MetricsSummary::from_report(report, opts.model.clone(), opts.dataset.clone());
    let metrics = dir.join(METRICS_FILE);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| EvalError::Format(e.to_string()))?;
    fs::write(&metrics, json + "\n").map_err(io(&metrics))?;

    let shown = match opts.window {
        Some(m) => report.confusion.window(m),
        None => report.confusion.clone(),
    };
    let confusion = dir.join(CONFUSION_FILE);
    fs::write(&confusion, confusion_csv(&shown, &report.labels)?).map_err(io(&confusion))?;

    let curve = match opts.history {
        Some(h) => {
            let path = dir.join(CURVE_FILE);
            fs::write(&path, loss_curve_csv(h)).map_err(io(&path))?;
            Some(path)
        }
        None => None,
    };
    Ok(ReportPaths {
        metrics,
        confusion,
        curve,
    })
}

pub fn read_metrics(path: &Path) -> Result<MetricsSummary> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Format(format!("{}: {e}", path.display())))
}

/// One line of the model × dataset comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub dataset: String,
    pub summary: MetricsSummary,
}

/// Joins summaries into a CSV keyed and sorted by `(model, dataset)`.
/// Summaries without both names, or with a repeated key, are rejected.
pub fn comparison_table(summaries: &[MetricsSummary]) -> Result<(Vec<ComparisonRow>, String)> {
    let mut keyed = BTreeMap::new();
    for s in summaries {
        let (Some(model), Some(dataset)) = (s.model.clone(), s.dataset.clone()) else {
            return Err(EvalError::Format("metrics summary lacks model or dataset name".into()));
        };
        if keyed.insert((model.clone(), dataset.clone()), s.clone()).is_some() {
            return Err(EvalError::Format(format!("duplicate entry for ({model}, {dataset})")));
        }
    }
    let rows: Vec<ComparisonRow> = keyed
        .into_iter()
        .map(|((model, dataset), summary)| ComparisonRow { model, dataset, summary })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "dataset",
        "accuracy",
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "top1",
        "top5",
        "top10",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        let s = &r.summary;
        w.write_record([
            r.model.clone(),
            r.dataset.clone(),
            s.accuracy.to_string(),
            s.macro_precision.to_string(),
            s.macro_recall.to_string(),
            s.macro_f1.to_string(),
            opt(s.top1),
            opt(s.top5),
            opt(s.top10),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| EvalError::Format(e.to_string()))?;
    Ok((rows, text))
}
