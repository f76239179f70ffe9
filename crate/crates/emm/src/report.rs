//! Reports and metric logs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use emm_core::metrics::GainReport;
use emm_core::train::TrainLog;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub name: String,
    pub auc: f64,
    /// Mean test AUC of the task's single-task models, when known.
    pub reference_auc: Option<f64>,
    pub gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub seed: u64,
    pub tasks: Vec<TaskRow>,
    pub variant: String,
}

impl Report {
    pub fn from_gains(dataset: &str, seed: u64, variant: &str, gains: &GainReport) -> Self {
        Self {
            dataset: dataset.into(),
            seed,
            variant: variant.into(),
            tasks: gains
                .tasks
                .iter()
                .map(|t| TaskRow {
                    name: t.task.clone(),
                    auc: t.auc,
                    reference_auc: Some(t.reference_auc),
                    gain: Some(t.gain),
                })
                .collect(),
        }
    }

    pub fn mean_auc(&self) -> f64 {
        self.tasks.iter().map(|t| t.auc).sum::<f64>() / self.tasks.len().max(1) as f64
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let width = self.tasks.iter().map(|t| t.name.len()).max().unwrap_or(4).max(4);
        let mut s = String::new();
        let _ = writeln!(s, "{} | seed {} | {}", self.dataset, self.seed, self.variant);
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>9}  {:>9}", "task", "auc", "reference", "gain");
        for t in &self.tasks {
            let opt = |v: Option<f64>, signed: bool| match (v, signed) {
                (Some(v), true) => format!("{v:+.5}"),
                (Some(v), false) => format!("{v:.5}"),
                (None, _) => "-".into(),
            };
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.5}  {:>9}  {:>9}",
                t.name,
                t.auc,
                opt(t.reference_auc, false),
                opt(t.gain, true)
            );
        }
        s
    }
}

/// Table of several variants or task counts over the same columns.
pub fn comparison_table(reports: &[Report]) -> String {
    let mut s = String::new();
    let Some(first) = reports.first() else {
        return s;
    };
    let _ = writeln!(s, "{} | seed {}", first.dataset, first.seed);
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for t in &r.tasks {
            if !names.contains(&t.name.as_str()) {
                names.push(&t.name);
            }
        }
    }
    let _ = write!(s, "{:<14}", "variant");
    for n in &names {
        let _ = write!(s, "  {n:>9}");
    }
    let _ = writeln!(s, "  {:>9}", "mean");
    for r in reports {
        let _ = write!(s, "{:<14}", r.variant);
        for n in &names {
            match r.tasks.iter().find(|t| t.name == *n) {
                Some(t) => {
                    let _ = write!(s, "  {:>9.5}", t.auc);
                }
                None => {
                    let _ = write!(s, "  {:>9}", "-");
                }
            }
        }
        let _ = writeln!(s, "  {:>9.5}", r.mean_auc());
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub task: String,
    pub split: String,
    pub loss: Option<f64>,
    pub auc: Option<f64>,
}

pub fn metric_records(log: &TrainLog) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for e in &log.epochs {
        for t in &e.tasks {
            out.push(MetricRecord {
                epoch: e.epoch,
                task: t.task.clone(),
                split: "train".into(),
                loss: Some(t.train_loss),
                auc: None,
            });
            if t.val_loss.is_some() || t.val_auc.is_some() {
                out.push(MetricRecord {
                    epoch: e.epoch,
                    task: t.task.clone(),
                    split: "val".into(),
                    loss: t.val_loss,
                    auc: t.val_auc,
                });
            }
        }
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).expect("value serializes");
    buf.push(b'\n');
    write_file(path, &buf)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(bytes).map_err(|e| AppError::io(path, e))
}
