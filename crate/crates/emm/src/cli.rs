//! Command-line workflow: each subcommand writes under
//! `<out>/{models,manifests,logs,reports}/<run-id>/`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use emm_core::data::{Split, TaskDataset};
use emm_core::deconstruct::{verify_roundtrip, ComponentSet};
use emm_core::emm::Variant;
use emm_core::metrics::gain_report;
use emm_core::model::{ModelPool, TrainedModel};
use emm_core::ParamAlloc;
use serde::Serialize;

use crate::config::{DatasetConfig, RunConfig};
use crate::error::{AppError, FormatError, Result};
use crate::format::{decode_fused, decode_model, encode_fused, encode_model, write_bytes, FUSED_MAGIC, MODEL_MAGIC};
use crate::pipeline::{self, decompose, eval_threads, load_dataset, pool_of, reference_aucs, test_aucs, PoolMember};
use crate::report::{
    comparison_table, metric_records, write_file, write_json, write_jsonl, MetricRecord, Report, TaskRow,
};

/// Extension of single-task model files.
pub const MODEL_EXT: &str = "emm1";
/// Extension of fused model files.
pub const FUSED_EXT: &str = "emmf";

#[derive(Debug, Parser)]
#[command(
    name = "emm",
    version,
    about = "Decompose trained single-task models and fuse them into one multi-task model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a run configuration to start from.
    Init {
        /// `census` or `synthetic`.
        #[arg(long, default_value = "census")]
        profile: String,
    },
    /// Train every configured architecture for every task.
    TrainSingle(Common),
    /// Split a trained pool into aligned component levels and check the split.
    Deconstruct {
        #[command(flatten)]
        common: Common,
        /// Directory of single-task model files.
        #[arg(long)]
        pool: PathBuf,
    },
    /// Build, train and evaluate fused models; trains a pool first unless `--pool` is given.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Test-split AUC of a stored single-task or fused model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Train the four ablation variants on one pool.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Pool and fusion runs over several task counts of a synthetic dataset.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        counts: Vec<usize>,
    },
}

/// Overrides shared by the run subcommands.
#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// TOML run configuration; the census profile when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task names to keep, or the task count of a synthetic dataset.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    /// `keep`, `adapter` or `drop`.
    #[arg(long)]
    pub tail: Option<String>,
    /// `self` or `cross`.
    #[arg(long)]
    pub mtm_score: Option<String>,
    /// `none`, `all` or one variant name.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Output root directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run directory name; a UTC timestamp plus the seed by default.
    #[arg(long)]
    pub run_id: Option<String>,
}

/// A resolved configuration and the directory name of its outputs.
#[derive(Clone, Debug)]
pub struct Run {
    pub cfg: RunConfig,
    pub id: String,
}

impl Run {
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::census(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(tasks) = &common.tasks {
            set_tasks(&mut cfg, tasks)?;
        }
        if let Some(tail) = &common.tail {
            cfg.tail = tail.clone();
        }
        if let Some(score) = &common.mtm_score {
            cfg.mtm_score = score.clone();
        }
        if let Some(ablate) = &common.ablate {
            cfg.ablate = ablate.clone();
        }
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        let id = match &common.run_id {
            Some(id) if id.is_empty() || id.contains(['/', '\\']) => {
                return Err(AppError::Config(format!("invalid run id `{id}`")))
            }
            Some(id) => id.clone(),
            None => format!("{}-s{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), cfg.seed),
        };
        Ok(Self { cfg, id })
    }

    /// `<out>/<kind>/<run-id>`.
    pub fn dir(&self, kind: &str) -> PathBuf {
        self.cfg.out.join(kind).join(&self.id)
    }

    fn save_config(&self) -> Result<()> {
        write_file(
            &self.dir("manifests").join("config.toml"),
            self.cfg.to_toml().as_bytes(),
        )
    }
}

fn set_tasks(cfg: &mut RunConfig, names: &[String]) -> Result<()> {
    match &mut cfg.dataset {
        DatasetConfig::Synthetic { tasks, .. } => match names {
            [n] => {
                *tasks = n
                    .parse()
                    .map_err(|_| AppError::Config(format!("synthetic --tasks takes a task count, got `{n}`")))?;
            }
            _ => return Err(AppError::Config("synthetic --tasks takes a single task count".into())),
        },
        DatasetConfig::Census { tasks, .. } | DatasetConfig::Csv { tasks, .. } => *tasks = Some(names.to_vec()),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { profile } => {
            let cfg = match profile.as_str() {
                "census" => RunConfig::census(),
                "synthetic" => RunConfig::synthetic(2, 0.8),
                other => return Err(AppError::Config(format!("unknown profile `{other}`"))),
            };
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::TrainSingle(common) => {
            let run = Run::resolve(&common)?;
            train_single(&run).map(|_| ())
        }
        Command::Deconstruct { common, pool } => deconstruct(&Run::resolve(&common)?, &pool).map(|_| ()),
        Command::Fuse { common, pool } => fuse(&Run::resolve(&common)?, pool.as_deref()).map(|_| ()),
        Command::Eval { common, model } => eval(&Run::resolve(&common)?, &model).map(|_| ()),
        Command::Ablate { common, pool } => {
            let mut run = Run::resolve(&common)?;
            run.cfg.ablate = "all".into();
            let reports = fuse(&run, pool.as_deref())?;
            let table = comparison_table(&reports);
            write_file(&run.dir("reports").join("ablation.txt"), table.as_bytes())?;
            write_json(&run.dir("reports").join("ablation.json"), &reports)?;
            print!("{table}");
            Ok(())
        }
        Command::Adapt { common, counts } => adapt(&Run::resolve(&common)?, &counts).map(|_| ()),
    }
}

#[derive(Serialize)]
struct PoolEntry<'a> {
    id: &'a str,
    task: &'a str,
    hidden: &'a [usize],
    layers: Vec<String>,
    test_auc: f64,
    file: String,
}

#[derive(Serialize)]
struct ModelRecord<'a> {
    model: &'a str,
    #[serde(flatten)]
    record: &'a MetricRecord,
}

/// Trains the pool and writes one model file per member.
pub fn train_single(run: &Run) -> Result<(TaskDataset, Vec<PoolMember>)> {
    run.save_config()?;
    let data = load_dataset(&run.cfg)?;
    eprintln!("{}: {} rows, tasks {}", data.name, data.len(), data.tasks.join(", "));
    let members = pipeline::train_pool(&data, &run.cfg)?;
    let models = run.dir("models");
    let mut manifest = Vec::new();
    let mut records = Vec::new();
    let mut table = String::from("model              auc\n");
    for m in &members {
        let file = format!("{}.{MODEL_EXT}", m.model.id);
        write_bytes(&models.join(&file), &encode_model(&m.model))?;
        manifest.push(PoolEntry {
            id: &m.model.id,
            task: &m.model.task,
            hidden: &run.cfg.pool.architectures[m.architecture],
            layers: m.model.signatures().iter().map(ToString::to_string).collect(),
            test_auc: m.test_auc,
            file,
        });
        records.extend(metric_records(&m.log).into_iter().map(|r| (m.model.id.clone(), r)));
        table.push_str(&format!("{:<16} {:.5}\n", m.model.id, m.test_auc));
    }
    write_json(&run.dir("manifests").join("pool.json"), &manifest)?;
    let records: Vec<ModelRecord> = records
        .iter()
        .map(|(model, record)| ModelRecord { model, record })
        .collect();
    write_jsonl(&run.dir("logs").join("train-single.jsonl"), &records)?;
    write_file(&run.dir("reports").join("pool.txt"), table.as_bytes())?;
    print!("{table}");
    eprintln!("models written to {}", models.display());
    Ok((data, members))
}

/// Reads every single-task model file in `dir`, in file-name order.
pub fn read_pool_dir(dir: &Path) -> Result<Vec<TrainedModel>> {
    let entries = std::fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let path = e.map_err(|e| AppError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == MODEL_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Data(format!(
            "{}: no .{MODEL_EXT} model files",
            dir.display()
        )));
    }
    let mut alloc = ParamAlloc::new(0);
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| AppError::io(p, e))?;
            decode_model(&bytes, &mut alloc).map_err(|e| AppError::format_in(p, e))
        })
        .collect()
}

#[derive(Serialize)]
struct LevelEntry {
    level: usize,
    in_dim: usize,
    out_dim: usize,
    components: Vec<ComponentEntry>,
}

#[derive(Serialize)]
struct ComponentEntry {
    model: String,
    task: String,
    layers: [usize; 2],
}

#[derive(Serialize)]
struct SplitEntry {
    id: String,
    cuts: Vec<usize>,
    roundtrip_max_abs_diff: f64,
}

#[derive(Serialize)]
struct DeconstructManifest {
    tail_mode: String,
    common_layers: Vec<String>,
    levels: Vec<LevelEntry>,
    models: Vec<SplitEntry>,
}

/// Number of test rows used to check that the components reproduce their model.
const PROBE_ROWS: usize = 64;

pub fn deconstruct(run: &Run, pool_dir: &Path) -> Result<ComponentSet> {
    run.save_config()?;
    let data = load_dataset(&run.cfg)?;
    let pool = pool_of(&data, read_pool_dir(pool_dir)?)?;
    let set = decompose(&pool, &run.cfg)?;
    let rows: Vec<usize> = data.rows(Split::Test).into_iter().take(PROBE_ROWS).collect();
    let probe = data.batch(&rows).features;
    let mut models = Vec::new();
    for (m, comps) in pool.models.iter().zip(&set.models) {
        models.push(SplitEntry {
            id: m.id.clone(),
            cuts: set.common.cuts[models.len()].clone(),
            roundtrip_max_abs_diff: verify_roundtrip(m, &comps.components, &probe)?,
        });
    }
    let levels = (1..=set.level_count())
        .map(|k| LevelEntry {
            level: k,
            in_dim: set.level_in_dim(k),
            out_dim: set.level_dims[k - 1],
            components: set
                .level(k)
                .into_iter()
                .flatten()
                .map(|c| ComponentEntry {
                    model: c.model_id.clone(),
                    task: set.tasks[c.task].clone(),
                    layers: [c.range.start, c.range.end],
                })
                .collect(),
        })
        .collect();
    let manifest = DeconstructManifest {
        tail_mode: set.tail_mode.name().into(),
        common_layers: set.common.signatures.iter().map(ToString::to_string).collect(),
        levels,
        models,
    };
    write_json(&run.dir("manifests").join("deconstruct.json"), &manifest)?;
    println!(
        "{} models, {} levels, {} components; common layers {}",
        pool.models.len(),
        set.level_count(),
        set.component_count(),
        manifest.common_layers.join(" ")
    );
    for m in &manifest.models {
        println!(
            "  {:<16} cuts {:?}  max |diff| {:.3e}",
            m.id, m.cuts, m.roundtrip_max_abs_diff
        );
    }
    Ok(set)
}

fn pool_for(run: &Run, pool_dir: Option<&Path>) -> Result<(TaskDataset, ModelPool)> {
    match pool_dir {
        Some(dir) => {
            run.save_config()?;
            let data = load_dataset(&run.cfg)?;
            let pool = pool_of(&data, read_pool_dir(dir)?)?;
            Ok((data, pool))
        }
        None => {
            let (data, members) = train_single(run)?;
            let pool = pool_of(&data, members.into_iter().map(|m| m.model).collect())?;
            Ok((data, pool))
        }
    }
}

/// Trains the configured variants and writes a model, a log and a report for each.
pub fn fuse(run: &Run, pool_dir: Option<&Path>) -> Result<Vec<Report>> {
    let (data, pool) = pool_for(run, pool_dir)?;
    let set = decompose(&pool, &run.cfg)?;
    let reference = reference_aucs(&pool, &data)?;
    let tail = run.cfg.tail_mode()?;
    let mut reports = Vec::new();
    for variant in run.cfg.variants()? {
        eprintln!(
            "fusing {} ({} levels, {} components)",
            variant.name(),
            set.level_count(),
            set.component_count()
        );
        let out = pipeline::fuse(&data, &set, &reference, &run.cfg, variant)?;
        let stem = format!("emm-{}", variant.name());
        write_bytes(
            &run.dir("models").join(format!("{stem}.{FUSED_EXT}")),
            &encode_fused(&out.model, &pool, tail),
        )?;
        write_jsonl(
            &run.dir("logs").join(format!("{stem}.jsonl")),
            &metric_records(&out.log),
        )?;
        write_json(&run.dir("reports").join(format!("{stem}.json")), &out.report)?;
        write_file(
            &run.dir("reports").join(format!("{stem}.txt")),
            out.report.table().as_bytes(),
        )?;
        print!("{}", out.report.table());
        reports.push(out.report);
    }
    Ok(reports)
}

/// Evaluates a stored model on the test split of the configured dataset.
pub fn eval(run: &Run, path: &Path) -> Result<Report> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    let magic: [u8; 4] = bytes
        .get(..4)
        .and_then(|m| m.try_into().ok())
        .ok_or(FormatError::Truncated("magic"))?;
    let data = load_dataset(&run.cfg)?;
    let threads = eval_threads();
    let report = if magic == MODEL_MAGIC {
        let model = decode_model(&bytes, &mut ParamAlloc::new(0)).map_err(|e| AppError::format_in(path, e))?;
        let auc = test_aucs(&model, &data, threads)?[0];
        Report {
            dataset: run.cfg.dataset_name(),
            seed: run.cfg.seed,
            variant: format!("single:{}", model.id),
            tasks: vec![TaskRow {
                name: model.task.clone(),
                auc,
                reference_auc: None,
                gain: None,
            }],
        }
    } else if magic == FUSED_MAGIC {
        let (model, pool) = decode_fused(&bytes)?;
        let aucs = test_aucs(&model, &data, threads)?;
        let named: Vec<(String, f64)> = model.tasks.iter().cloned().zip(aucs).collect();
        let gains = gain_report(&named, &reference_aucs(&pool, &data)?)?;
        Report::from_gains(
            &run.cfg.dataset_name(),
            run.cfg.seed,
            model.config.variant_name(),
            &gains,
        )
    } else {
        return Err(FormatError::BadMagic(magic).into());
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    write_json(&run.dir("reports").join(format!("eval-{stem}.json")), &report)?;
    print!("{}", report.table());
    Ok(report)
}

/// Full runs over synthetic task counts.
pub fn adapt(run: &Run, counts: &[usize]) -> Result<Vec<Report>> {
    if !matches!(run.cfg.dataset, DatasetConfig::Synthetic { .. }) {
        return Err(AppError::Config("adapt needs a synthetic dataset".into()));
    }
    if counts.is_empty() || counts.contains(&0) {
        return Err(AppError::Config("--counts needs positive task counts".into()));
    }
    run.save_config()?;
    let mut reports = Vec::new();
    let mut table = String::from("tasks  mean_auc  mean_gain\n");
    for &t in counts {
        let mut cfg = run.cfg.clone();
        set_tasks(&mut cfg, &[t.to_string()])?;
        cfg.ablate = Variant::Full.name().into();
        cfg.validate()?;
        eprintln!("adapt: {t} task(s)");
        let ex = pipeline::run_experiment(&cfg)?;
        let report = ex.runs.into_iter().next().expect("one variant").report;
        let gains: Vec<f64> = report.tasks.iter().filter_map(|r| r.gain).collect();
        table.push_str(&format!(
            "{t:>5}  {:>8.5}  {:>+9.5}\n",
            report.mean_auc(),
            gains.iter().sum::<f64>() / gains.len().max(1) as f64
        ));
        write_json(&run.dir("reports").join(format!("adapt-t{t}.json")), &report)?;
        reports.push(report);
    }
    write_file(&run.dir("reports").join("adapt.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(reports)
}
