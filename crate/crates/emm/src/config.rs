//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use emm_core::akf::ScoreMode;
use emm_core::data::{ColumnRole, ColumnSpec, FeatureSpec, DEFAULT_EMBEDDING_DIM};
use emm_core::deconstruct::TailMode;
use emm_core::emm::Variant;
use emm_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::format::{parse_score_mode, parse_tail_mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// `keep` (strict), `adapter` or `drop`.
    #[serde(default = "default_tail")]
    pub tail: String,
    /// `self` or `cross`.
    #[serde(default = "default_score")]
    pub mtm_score: String,
    /// `none`, `all` or one variant name.
    #[serde(default = "default_ablate")]
    pub ablate: String,
    pub dataset: DatasetConfig,
    pub pool: PoolConfig,
    pub fusion: FusionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    /// Generated census-style rows.
    Census {
        rows: usize,
        /// Optional subset of the two labels, in order.
        #[serde(default)]
        tasks: Option<Vec<String>>,
    },
    /// Linear-threshold tasks with correlated weight vectors.
    Synthetic {
        rows: usize,
        tasks: usize,
        correlation: f64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// A CSV file with a header row.
    Csv {
        path: PathBuf,
        columns: Vec<ColumnConfig>,
        #[serde(default = "default_embedding_dim")]
        embedding_dim: usize,
        #[serde(default)]
        tasks: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnConfig {
    pub name: String,
    /// `dense`, `sparse` or `label`.
    pub role: String,
    /// Task name of a label column; defaults to the column name.
    #[serde(default)]
    pub task: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    /// Hidden widths of each single-task architecture, trained for every task.
    pub architectures: Vec<Vec<usize>>,
    pub train: TrainSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub train: TrainSettings,
    #[serde(default)]
    pub tower_hidden: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub coupled_weight_decay: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_tail() -> String {
    "keep".into()
}
fn default_score() -> String {
    "self".into()
}
fn default_ablate() -> String {
    "none".into()
}
fn default_dim() -> usize {
    16
}
fn default_noise() -> f64 {
    0.05
}
fn default_embedding_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            coupled_weight_decay: self.coupled_weight_decay,
        }
    }

    fn from_train_config(c: &TrainConfig) -> Self {
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            weight_decay: c.weight_decay,
            coupled_weight_decay: c.coupled_weight_decay,
        }
    }
}

impl RunConfig {
    /// Desk-scale census run: 20k generated rows, two architectures per task.
    pub fn census() -> Self {
        let base = TrainConfig::census(0);
        Self {
            seed: 1,
            out: default_out(),
            tail: default_tail(),
            mtm_score: default_score(),
            ablate: default_ablate(),
            dataset: DatasetConfig::Census {
                rows: 20_000,
                tasks: None,
            },
            pool: PoolConfig {
                architectures: vec![vec![8, 8], vec![8, 16, 8]],
                train: TrainSettings {
                    epochs: 20,
                    batch_size: 256,
                    ..TrainSettings::from_train_config(&base)
                },
            },
            fusion: FusionConfig {
                train: TrainSettings {
                    epochs: 30,
                    batch_size: 256,
                    ..TrainSettings::from_train_config(&base)
                },
                tower_hidden: Some(vec![16]),
            },
        }
    }

    /// Synthetic correlated tasks: 10k rows with unit label noise, small batches.
    pub fn synthetic(tasks: usize, correlation: f64) -> Self {
        let mut cfg = Self {
            dataset: DatasetConfig::Synthetic {
                rows: 10_000,
                tasks,
                correlation,
                dim: default_dim(),
                noise: 1.0,
            },
            ..Self::census()
        };
        cfg.pool.train.batch_size = 64;
        cfg.fusion.train.batch_size = 64;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn tail_mode(&self) -> Result<TailMode> {
        parse_tail_mode(&self.tail).ok_or_else(|| AppError::Config(format!("unknown tail mode `{}`", self.tail)))
    }

    pub fn score_mode(&self) -> Result<ScoreMode> {
        parse_score_mode(&self.mtm_score)
            .ok_or_else(|| AppError::Config(format!("unknown mtm_score `{}`", self.mtm_score)))
    }

    /// Variants selected by `ablate`; `none` means the full model only.
    pub fn variants(&self) -> Result<Vec<Variant>> {
        match self.ablate.as_str() {
            "none" => Ok(vec![Variant::Full]),
            "all" => Ok(Variant::ALL.to_vec()),
            other => other
                .parse::<Variant>()
                .map(|v| vec![v])
                .map_err(|_| AppError::Config(format!("unknown ablation `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tail_mode()?;
        self.score_mode()?;
        self.variants()?;
        if self.pool.architectures.is_empty() {
            return Err(AppError::Config("pool.architectures is empty".into()));
        }
        if self.pool.architectures.iter().any(|a| a.contains(&0)) {
            return Err(AppError::Config("hidden widths must be positive".into()));
        }
        for (name, t) in [("pool.train", &self.pool.train), ("fusion.train", &self.fusion.train)] {
            t.to_train_config(self.seed)
                .validate()
                .map_err(|e| AppError::Config(format!("{name}: {e}")))?;
        }
        match &self.dataset {
            DatasetConfig::Census { rows, tasks } => {
                if *rows < 50 {
                    return Err(AppError::Config("census dataset needs at least 50 rows".into()));
                }
                if let Some(t) = tasks {
                    if t.is_empty() {
                        return Err(AppError::Config("dataset.tasks is empty".into()));
                    }
                }
            }
            DatasetConfig::Synthetic {
                rows,
                tasks,
                correlation,
                dim,
                noise,
            } => {
                if *rows < 50 || *tasks == 0 || !(0.0..=1.0).contains(correlation) || *dim <= *tasks || *noise < 0.0 {
                    return Err(AppError::Config(
                        "synthetic dataset needs rows >= 50, tasks >= 1, correlation in [0, 1], dim > tasks and noise >= 0".into(),
                    ));
                }
            }
            DatasetConfig::Csv { columns, .. } => {
                self.feature_spec_of(columns)?;
            }
        }
        Ok(())
    }

    fn feature_spec_of(&self, columns: &[ColumnConfig]) -> Result<FeatureSpec> {
        let embedding_dim = match &self.dataset {
            DatasetConfig::Csv { embedding_dim, .. } => *embedding_dim,
            _ => DEFAULT_EMBEDDING_DIM,
        };
        let columns = columns
            .iter()
            .map(|c| {
                let role = match c.role.as_str() {
                    "dense" => ColumnRole::Dense,
                    "sparse" => ColumnRole::Sparse,
                    "label" => ColumnRole::Label(c.task.clone().unwrap_or_else(|| c.name.clone())),
                    other => return Err(AppError::Config(format!("column `{}`: unknown role `{other}`", c.name))),
                };
                Ok(ColumnSpec {
                    name: c.name.clone(),
                    role,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = FeatureSpec { columns, embedding_dim };
        spec.validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Feature spec of a CSV dataset.
    pub fn csv_spec(&self) -> Result<Option<FeatureSpec>> {
        match &self.dataset {
            DatasetConfig::Csv { columns, .. } => self.feature_spec_of(columns).map(Some),
            _ => Ok(None),
        }
    }

    /// Short dataset label for reports.
    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetConfig::Census { rows, .. } => format!("census-like-{rows}"),
            DatasetConfig::Synthetic {
                rows,
                tasks,
                correlation,
                ..
            } => format!("synthetic-{rows}-t{tasks}-rho{correlation}"),
            DatasetConfig::Csv { path, .. } => path.display().to_string(),
        }
    }
}
