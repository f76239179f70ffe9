//! The assembled multi-task model: a shared encoder, stacked fusion levels
//! and one tower per task.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::akf::{AkfLevel, ScoreMode};
use crate::data::TaskDataset;
use crate::deconstruct::{ComponentSet, ModelComponent};
use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::Mlp;
use crate::model::{EmbeddingConcat, Layer};
use crate::param::{Init, ParamAlloc, Parameter, Parameterized};
use crate::tensor::Tensor;
use crate::train::{self, MultiTaskModel, TrainConfig, TrainLog};

/// The four ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Same structure, components trained from scratch, no merge.
    Baseline,
    /// Components trained from scratch, with the merge.
    BaselineMtm,
    /// Pretrained frozen components, no merge.
    BaselinePretrained,
    /// Pretrained frozen components with the merge.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::BaselineMtm,
        Variant::BaselinePretrained,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BaselineMtm => "baseline+mtm",
            Variant::BaselinePretrained => "baseline+p",
            Variant::Full => "full",
        }
    }

    /// `(use_pretrained, use_mtm)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::BaselineMtm => (false, true),
            Variant::BaselinePretrained => (true, false),
            Variant::Full => (true, true),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmmConfig {
    /// Seeds every fresh parameter of the model.
    pub seed: u64,
    pub use_pretrained: bool,
    pub use_mtm: bool,
    pub score_mode: ScoreMode,
    /// Hidden widths of each tower; `None` uses one layer of `max(d/2, 4)`.
    pub tower_hidden: Option<Vec<usize>>,
}

impl EmmConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            use_pretrained: true,
            use_mtm: true,
            score_mode: ScoreMode::SelfScore,
            tower_hidden: None,
        }
    }

    pub fn variant(seed: u64, variant: Variant) -> Self {
        let (use_pretrained, use_mtm) = variant.flags();
        Self {
            use_pretrained,
            use_mtm,
            ..Self::new(seed)
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match (self.use_pretrained, self.use_mtm) {
            (false, false) => Variant::Baseline.name(),
            (false, true) => Variant::BaselineMtm.name(),
            (true, false) => Variant::BaselinePretrained.name(),
            (true, true) => Variant::Full.name(),
        }
    }

    pub fn tower_widths(&self, dim: usize) -> Vec<usize> {
        self.tower_hidden.clone().unwrap_or_else(|| vec![(dim / 2).max(4)])
    }
}

/// Per-task output head.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerHead {
    pub task: usize,
    pub mlp: Mlp,
}

impl TowerHead {
    pub fn new(alloc: &mut ParamAlloc, task: usize, dim: usize, hidden: &[usize]) -> Self {
        Self {
            task,
            mlp: Mlp::new(alloc, dim, hidden, 1),
        }
    }

    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.mlp.forward(g, z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmmModel {
    pub tasks: Vec<String>,
    pub input_dim: usize,
    pub encoder: Option<EmbeddingConcat>,
    pub levels: Vec<AkfLevel>,
    pub towers: Vec<TowerHead>,
    pub config: EmmConfig,
}

/// Gives every parameter a fresh id so that parts cut from different
/// source models never collide in one graph.
fn renumber<'a>(alloc: &mut ParamAlloc, params: impl IntoIterator<Item = &'a mut Parameter>) {
    for p in params {
        p.id = alloc.next_id();
    }
}

fn reinit_layers(alloc: &ParamAlloc, layers: &mut [Layer]) {
    for l in layers {
        match l {
            Layer::Dense(d) => {
                alloc.reinit(&mut d.weight, Init::HeUniform);
                alloc.reinit(&mut d.bias, Init::Zeros);
            }
            Layer::Embedding(e) => {
                for t in &mut e.tables {
                    alloc.reinit(t, Init::XavierUniform);
                }
            }
            Layer::Relu(_) | Layer::Sigmoid(_) => {}
        }
    }
}

/// Assembles levels and towers over a decomposed pool.
pub fn build_emm(set: &ComponentSet, config: &EmmConfig) -> Result<EmmModel> {
    let tasks = set.tasks.len();
    if tasks == 0 || set.level_count() == 0 {
        return Err(Error::Config("component set has no tasks or levels".into()));
    }
    let mut alloc = ParamAlloc::new(config.seed);
    let mut encoder = set.encoder.clone();
    let mut grouped: Vec<Vec<Vec<ModelComponent>>> = (1..=set.level_count())
        .map(|k| {
            set.level(k)
                .into_iter()
                .map(|comps| comps.into_iter().cloned().collect())
                .collect()
        })
        .collect();
    if let Some(enc) = &mut encoder {
        renumber(&mut alloc, enc.params_mut());
    }
    for c in grouped.iter_mut().flatten().flatten() {
        renumber(&mut alloc, c.layers.iter_mut().flat_map(|l| l.params_mut()));
    }
    if let Some(enc) = &mut encoder {
        if !config.use_pretrained {
            for t in &mut enc.tables {
                alloc.reinit(t, Init::XavierUniform);
            }
        }
        enc.set_frozen(config.use_pretrained);
    }
    if !config.use_pretrained {
        for c in grouped.iter_mut().flatten().flatten() {
            reinit_layers(&alloc, &mut c.layers);
        }
    }

    let mut levels = Vec::with_capacity(grouped.len());
    for (k, comps) in grouped.into_iter().enumerate() {
        let level = k + 1;
        if comps.iter().any(Vec::is_empty) {
            return Err(Error::Config(format!("level {level} has a task without components")));
        }
        let mut l = AkfLevel::new(
            &mut alloc,
            level,
            set.level_in_dim(level),
            set.level_dims[k],
            comps,
            config.use_mtm,
            config.score_mode,
        )
        .map_err(|e| match e {
            Error::Dimension(msg) => dim_err!("levels {} and {level} do not chain: {msg}", level.saturating_sub(1)),
            other => other,
        })?;
        if !config.use_pretrained {
            for c in l.experts.iter_mut().flatten() {
                for layer in &mut c.layers {
                    layer.set_frozen(false);
                }
            }
        }
        levels.push(l);
    }
    let dim = *set.level_dims.last().expect("at least one level");
    let hidden = config.tower_widths(dim);
    let towers = (0..tasks)
        .map(|t| TowerHead::new(&mut alloc, t, dim, &hidden))
        .collect();
    Ok(EmmModel {
        tasks: set.tasks.clone(),
        input_dim: set.input_dim,
        encoder,
        levels,
        towers,
        config: config.clone(),
    })
}

impl EmmModel {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn expert_count(&self) -> usize {
        self.levels.iter().map(AkfLevel::expert_count).sum()
    }

    /// Per-task outputs of the last level.
    pub fn representations(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        if g.value(x).cols() != self.input_dim {
            return Err(dim_err!(
                "model expects input width {}, got {:?}",
                self.input_dim,
                g.value(x).shape()
            ));
        }
        let h = match &self.encoder {
            Some(e) => e.forward(g, x)?,
            None => x,
        };
        let mut z = vec![h; self.tasks.len()];
        for level in &self.levels {
            z = level.forward(g, &z)?;
        }
        Ok(z)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let z = self.representations(g, x)?;
        self.towers.iter().zip(z).map(|(t, z)| t.forward(g, z)).collect()
    }

    /// Per-task probabilities.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<Vec<f64>>> {
        train::predict(self, features)
    }

    /// Parameters copied from the pool: the encoder and every component.
    pub fn component_params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.tables.iter());
        }
        for l in &self.levels {
            out.extend(l.component_params());
        }
        out
    }

    /// Parameters created for fusion: gates, heads, adapters, towers.
    pub fn fusion_params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = Vec::new();
        for l in &self.levels {
            out.extend(l.fusion_params());
        }
        for t in &self.towers {
            out.extend(t.mlp.params());
        }
        out
    }

    /// Little-endian bytes of all component parameters, in a fixed order.
    pub fn component_bytes(&self) -> Vec<u8> {
        self.component_params()
            .iter()
            .flat_map(|p| p.value.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }
}

impl Parameterized for EmmModel {
    /// Same order as `params_mut`: encoder, then each level, then towers.
    fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.tables.iter());
        }
        for l in &self.levels {
            out.extend(l.params());
        }
        for t in &self.towers {
            out.extend(t.mlp.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.extend(e.tables.iter_mut());
        }
        for l in &mut self.levels {
            out.extend(l.params_mut());
        }
        for t in &mut self.towers {
            out.extend(t.mlp.params_mut());
        }
        out
    }
}

impl MultiTaskModel for EmmModel {
    fn task_names(&self) -> Vec<String> {
        self.tasks.clone()
    }

    fn task_logits(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        self.forward(g, x)
    }
}

/// Trains the fusion parameters (and, for from-scratch variants, the
/// components) on the dataset's train split with the joint loss.
pub fn train_emm(model: &mut EmmModel, data: &TaskDataset, config: &TrainConfig) -> Result<TrainLog> {
    let label_index = model
        .tasks
        .iter()
        .map(|t| data.task_index(t))
        .collect::<Result<Vec<_>>>()?;
    train::fit(model, data, &label_index, config)
}
