//! Mini-batch training loop shared by single-task models and fused models.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Split, TaskDataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::auc;
use crate::optim::{Adam, AdamConfig};
use crate::param::Parameterized;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 4096;

/// Optimisation settings of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub coupled_weight_decay: bool,
}

impl TrainConfig {
    /// Census-scale settings: batch 1024, lr 1e-3, weight decay 1e-6, 100 epochs.
    pub fn census(seed: u64) -> Self {
        Self {
            seed,
            epochs: 100,
            batch_size: 1024,
            lr: 1e-3,
            weight_decay: 1e-6,
            coupled_weight_decay: false,
        }
    }

    /// Large-scale settings: batch 32768, lr 1e-3, weight decay 1e-5, 10 epochs.
    pub fn large_scale(seed: u64) -> Self {
        Self {
            seed,
            epochs: 10,
            batch_size: 32_768,
            lr: 1e-3,
            weight_decay: 1e-5,
            coupled_weight_decay: false,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            coupled_weight_decay: self.coupled_weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "invalid learning rate {} / weight decay {}",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskEpoch {
    pub task: String,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// `None` when the validation split lacks one of the classes.
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sum over tasks of the mean train BCE.
    pub train_loss: f64,
    pub tasks: Vec<TaskEpoch>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// A model with one logit output per task.
pub trait MultiTaskModel: Parameterized {
    fn task_names(&self) -> Vec<String>;
    fn task_logits(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>>;
}

/// Builds the joint loss: unweighted sum of per-task mean BCE.
pub fn joint_loss<M: MultiTaskModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    features: &Tensor,
    labels: &[&[f64]],
) -> Result<(Var, Vec<Var>)> {
    let x = g.constant(features.clone());
    let logits = model.task_logits(g, x)?;
    if logits.len() != labels.len() {
        return Err(Error::TaskMismatch(format!(
            "model has {} outputs, {} label vectors given",
            logits.len(),
            labels.len()
        )));
    }
    let mut per_task = Vec::with_capacity(logits.len());
    for (l, y) in logits.iter().zip(labels) {
        per_task.push(g.bce_with_logits(*l, y)?);
    }
    let mut total = per_task[0];
    for &t in &per_task[1..] {
        total = g.add(total, t)?;
    }
    Ok((total, per_task))
}

/// Trains `model` on the train split. `label_index[t]` names the dataset
/// label column of model task `t`.
pub fn fit<M: MultiTaskModel>(
    model: &mut M,
    data: &TaskDataset,
    label_index: &[usize],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    let names = model.task_names();
    if names.len() != label_index.len() {
        return Err(Error::TaskMismatch(format!(
            "{} model tasks, {} label columns",
            names.len(),
            label_index.len()
        )));
    }
    let mut adam = Adam::new(config.adam());
    let mut log = TrainLog::default();
    let val_rows = data.rows(Split::Val);
    for epoch in 0..config.epochs {
        let shuffle = config.seed ^ ((epoch as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D));
        let batches = data.batches(Split::Train, config.batch_size, Some(shuffle));
        let mut sums = alloc::vec![0.0; names.len()];
        let mut seen = 0usize;
        for (b, rows) in batches.iter().enumerate() {
            let batch = data.batch(rows);
            let labels: Vec<&[f64]> = label_index.iter().map(|&i| batch.labels[i].as_slice()).collect();
            let mut g = Graph::new();
            let (total, per_task) = joint_loss(&*model, &mut g, &batch.features, &labels).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    task: names.join("+"),
                },
                other => other,
            })?;
            for (t, v) in per_task.iter().enumerate() {
                let loss = g.value(*v).data()[0];
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b,
                        task: names[t].clone(),
                    });
                }
                sums[t] += loss * rows.len() as f64;
            }
            seen += rows.len();
            let grads = g.backward(total)?;
            model.load_grads(grads.params());
            adam.step(model.params_mut());
        }
        let mut tasks = Vec::with_capacity(names.len());
        let (val_probs, val_losses) = if val_rows.is_empty() {
            (None, None)
        } else {
            let vb = data.batch(&val_rows);
            let probs = predict(&*model, &vb.features)?;
            let losses: Vec<f64> = label_index
                .iter()
                .zip(&probs)
                .map(|(&i, p)| mean_bce(p, &vb.labels[i]))
                .collect();
            (Some((probs, vb)), Some(losses))
        };
        for t in 0..names.len() {
            let val_auc = val_probs
                .as_ref()
                .and_then(|(p, vb)| auc(&p[t], &vb.labels[label_index[t]]).ok());
            tasks.push(TaskEpoch {
                task: names[t].clone(),
                train_loss: sums[t] / seen.max(1) as f64,
                val_loss: val_losses.as_ref().map(|l| l[t]),
                val_auc,
            });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: tasks.iter().map(|t| t.train_loss).sum(),
            tasks,
        });
    }
    Ok(log)
}

fn mean_bce(probs: &[f64], labels: &[f64]) -> f64 {
    let eps = 1e-12;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
        })
        .sum::<f64>()
        / labels.len().max(1) as f64
}

/// Per-task sigmoid probabilities, computed in row chunks without gradients.
pub fn predict<M: MultiTaskModel + ?Sized>(model: &M, features: &Tensor) -> Result<Vec<Vec<f64>>> {
    let n = features.rows();
    let mut out: Vec<Vec<f64>> = (0..model.task_names().len()).map(|_| Vec::with_capacity(n)).collect();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let mut g = Graph::inference();
        let x = g.constant(features.select_rows(&rows));
        let logits = model.task_logits(&mut g, x)?;
        for (t, l) in logits.iter().enumerate() {
            out[t].extend(g.value(*l).data().iter().map(|&v| crate::graph::sigmoid(v)));
        }
        start = end;
    }
    Ok(out)
}

/// Per-task AUC on one split.
pub fn evaluate<M: MultiTaskModel + ?Sized>(
    model: &M,
    data: &TaskDataset,
    split: Split,
    label_index: &[usize],
) -> Result<Vec<f64>> {
    let rows = data.rows(split);
    let batch = data.batch(&rows);
    let probs = predict(model, &batch.features)?;
    probs
        .iter()
        .zip(label_index)
        .map(|(p, &i)| auc(p, &batch.labels[i]))
        .collect()
}
