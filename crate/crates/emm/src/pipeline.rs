//! End-to-end steps: data, single-task pool, decomposition, fusion, evaluation.

use emm_core::data::{encode_table, make_synthetic, Split, SyntheticConfig, TaskDataset};
use emm_core::deconstruct::{deconstruct_pool, find_common_layers, ComponentSet};
use emm_core::emm::{build_emm, train_emm, EmmConfig, EmmModel, Variant};
use emm_core::metrics::{auc, gain_report};
use emm_core::model::{train_single, ModelPool, TrainedModel};
use emm_core::train::{predict, MultiTaskModel, TrainLog};
use emm_core::Tensor;

use crate::census;
use crate::config::{DatasetConfig, RunConfig};
use crate::error::{AppError, Result};
use crate::ingest::ingest_csv;
use crate::report::Report;

/// Seed of the `k`-th model or run derived from the config seed.
pub fn derived_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ k
}

pub fn load_dataset(cfg: &RunConfig) -> Result<TaskDataset> {
    let data = match &cfg.dataset {
        DatasetConfig::Census { rows, tasks } => {
            let t = census::generate(*rows, cfg.seed);
            let d = encode_table("census-like", &t.header, &t.rows, &census::feature_spec(), cfg.seed)
                .map_err(|e| AppError::Data(e.to_string()))?;
            match tasks {
                Some(tasks) => d.select_tasks(tasks).map_err(|e| AppError::Config(e.to_string()))?,
                None => d,
            }
        }
        DatasetConfig::Synthetic {
            rows,
            tasks,
            correlation,
            dim,
            noise,
        } => make_synthetic(&SyntheticConfig {
            rows: *rows,
            tasks: *tasks,
            correlation: *correlation,
            dim: *dim,
            noise: *noise,
            seed: cfg.seed,
        })?,
        DatasetConfig::Csv { path, tasks, .. } => {
            let spec = cfg.csv_spec()?.expect("csv dataset");
            let d = ingest_csv(path, &spec, cfg.seed)?;
            match tasks {
                Some(tasks) => d.select_tasks(tasks).map_err(|e| AppError::Config(e.to_string()))?,
                None => d,
            }
        }
    };
    Ok(data)
}

/// Number of evaluation threads: `EMM_THREADS`, else the available cores.
pub fn eval_threads() -> usize {
    std::env::var("EMM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Per-task probabilities, with rows split into contiguous shards across
/// `threads` workers. Rows are independent, so the result does not depend
/// on the thread count.
pub fn predict_sharded<M: MultiTaskModel + Sync>(
    model: &M,
    features: &Tensor,
    threads: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = features.rows();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return Ok(predict(model, features)?);
    }
    let chunk = n.div_ceil(threads);
    let shards: Vec<Tensor> = (0..n)
        .step_by(chunk)
        .map(|s| features.select_rows(&(s..(s + chunk).min(n)).collect::<Vec<_>>()))
        .collect();
    let parts: Vec<emm_core::Result<Vec<Vec<f64>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards.iter().map(|x| scope.spawn(move || predict(model, x))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = vec![Vec::with_capacity(n); model.task_names().len()];
    for part in parts {
        for (t, p) in part?.into_iter().enumerate() {
            out[t].extend(p);
        }
    }
    Ok(out)
}

/// Test-split AUC of every output of `model` against the dataset labels.
pub fn test_aucs<M: MultiTaskModel + Sync>(model: &M, data: &TaskDataset, threads: usize) -> Result<Vec<f64>> {
    let rows = data.rows(Split::Test);
    let batch = data.batch(&rows);
    let probs = predict_sharded(model, &batch.features, threads)?;
    model
        .task_names()
        .iter()
        .zip(&probs)
        .map(|(task, p)| {
            let t = data.task_index(task)?;
            Ok(auc(p, &batch.labels[t])?)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PoolMember {
    pub model: TrainedModel,
    /// Index into the configured architectures.
    pub architecture: usize,
    pub test_auc: f64,
    pub log: TrainLog,
}

/// Trains every configured architecture for every task. The first model
/// trains the shared input encoder; the others reuse it frozen.
pub fn train_pool(data: &TaskDataset, cfg: &RunConfig) -> Result<Vec<PoolMember>> {
    let threads = eval_threads();
    let mut members: Vec<PoolMember> = Vec::new();
    let mut k = 0;
    for task in &data.tasks {
        for (a, hidden) in cfg.pool.architectures.iter().enumerate() {
            let id = format!("{task}-tm{}", a + 1);
            let train = cfg.pool.train.to_train_config(derived_seed(cfg.seed, k));
            let encoder = members.first().and_then(|m| m.model.encoder().cloned());
            let (model, log) = train_single(&id, task, hidden, data, &train, encoder.as_ref())?;
            let test_auc = test_aucs(&model, data, threads)?[0];
            members.push(PoolMember {
                model,
                architecture: a,
                test_auc,
                log,
            });
            k += 1;
        }
    }
    Ok(members)
}

pub fn pool_of(data: &TaskDataset, models: Vec<TrainedModel>) -> Result<ModelPool> {
    Ok(ModelPool::with_tasks(data.tasks.clone(), models)?)
}

/// Mean test AUC of each task's single-task models.
pub fn reference_aucs(pool: &ModelPool, data: &TaskDataset) -> Result<Vec<(String, Vec<f64>)>> {
    let threads = eval_threads();
    pool.tasks
        .iter()
        .map(|t| {
            let aucs = pool
                .models_for(t)
                .map(|m| test_aucs(m, data, threads).map(|a| a[0]))
                .collect::<Result<Vec<_>>>()?;
            Ok((t.clone(), aucs))
        })
        .collect()
}

pub fn decompose(pool: &ModelPool, cfg: &RunConfig) -> Result<ComponentSet> {
    let common = find_common_layers(pool)?;
    Ok(deconstruct_pool(pool, &common, cfg.tail_mode()?)?)
}

#[derive(Clone, Debug)]
pub struct FuseOutcome {
    pub model: EmmModel,
    pub log: TrainLog,
    pub report: Report,
}

pub fn emm_config(cfg: &RunConfig, variant: Variant) -> Result<EmmConfig> {
    Ok(EmmConfig {
        score_mode: cfg.score_mode()?,
        tower_hidden: cfg.fusion.tower_hidden.clone(),
        ..EmmConfig::variant(derived_seed(cfg.seed, 0xF05E), variant)
    })
}

/// Builds, trains and evaluates one fused variant.
pub fn fuse(
    data: &TaskDataset,
    set: &ComponentSet,
    reference: &[(String, Vec<f64>)],
    cfg: &RunConfig,
    variant: Variant,
) -> Result<FuseOutcome> {
    let mut model = build_emm(set, &emm_config(cfg, variant)?)?;
    let train = cfg.fusion.train.to_train_config(derived_seed(cfg.seed, 0x7A11));
    let log = train_emm(&mut model, data, &train)?;
    let aucs = test_aucs(&model, data, eval_threads())?;
    let named: Vec<(String, f64)> = model.tasks.iter().cloned().zip(aucs).collect();
    let gains = gain_report(&named, reference)?;
    let report = Report::from_gains(&cfg.dataset_name(), cfg.seed, variant.name(), &gains);
    Ok(FuseOutcome { model, log, report })
}

/// Everything a full run produces, kept in memory.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub data: TaskDataset,
    pub members: Vec<PoolMember>,
    pub pool: ModelPool,
    pub set: ComponentSet,
    pub reference: Vec<(String, Vec<f64>)>,
    pub runs: Vec<FuseOutcome>,
}

/// Data, pool, decomposition and the configured fusion variants.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let members = train_pool(&data, cfg)?;
    let pool = pool_of(&data, members.iter().map(|m| m.model.clone()).collect())?;
    let set = decompose(&pool, cfg)?;
    let reference = reference_aucs(&pool, &data)?;
    let runs = cfg
        .variants()?
        .into_iter()
        .map(|v| fuse(&data, &set, &reference, cfg, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Experiment {
        data,
        members,
        pool,
        set,
        reference,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use emm_core::model::TrainedModel;

    #[test]
    fn sharded_prediction_matches_sequential() {
        let mut alloc = emm_core::ParamAlloc::new(1);
        let m = TrainedModel::mlp("m", "t", &emm_core::data::InputLayout::dense(3), &[5], None, &mut alloc).unwrap();
        let x = Tensor::new(&[37, 3], (0..111).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let one = predict_sharded(&m, &x, 1).unwrap();
        for t in [2, 3, 8, 100] {
            assert_eq!(predict_sharded(&m, &x, t).unwrap(), one);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..100).map(|k| derived_seed(7, k)).collect();
        assert_eq!(s.len(), 100);
    }
}
