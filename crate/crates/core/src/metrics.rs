//! Rank-based AUC and gains against single-task references.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Area under the ROC curve from the rank-sum statistic
/// `(Σ r_j − N₊(N₊+1)/2) / (N₊·N₋)`, ranks ascending by score with tied
/// scores sharing their average rank.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Undefined("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.iter().filter(|&&y| y == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Data("AUC labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined(format!(
            "need both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count();
        rank_sum += avg * positives as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskGain {
    pub task: String,
    pub auc: f64,
    pub reference_auc: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainReport {
    pub tasks: Vec<TaskGain>,
}

/// Gain of each task's AUC over the mean AUC of its single-task models.
pub fn gain_report(model_aucs: &[(String, f64)], reference_aucs: &[(String, Vec<f64>)]) -> Result<GainReport> {
    if model_aucs.len() != reference_aucs.len() {
        return Err(Error::TaskMismatch(format!(
            "{} model tasks vs {} reference tasks",
            model_aucs.len(),
            reference_aucs.len()
        )));
    }
    let mut tasks = Vec::with_capacity(model_aucs.len());
    for (task, value) in model_aucs {
        let refs = reference_aucs
            .iter()
            .find(|(t, _)| t == task)
            .map(|(_, r)| r)
            .ok_or_else(|| Error::TaskMismatch(format!("no reference AUC for task `{task}`")))?;
        if refs.is_empty() {
            return Err(Error::TaskMismatch(format!("empty reference list for `{task}`")));
        }
        let reference_auc = refs.iter().sum::<f64>() / refs.len() as f64;
        tasks.push(TaskGain {
            task: task.clone(),
            auc: *value,
            reference_auc,
            gain: value - reference_auc,
        });
    }
    Ok(GainReport { tasks })
}
