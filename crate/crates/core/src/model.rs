//! Layer-structured single-task models and the pool they form.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{InputLayout, TaskDataset};
use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::Dense;
use crate::param::{Init, ParamAlloc, Parameter, Parameterized};
use crate::tensor::Tensor;
use crate::train::{self, MultiTaskModel, TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum LayerKind {
    Dense = 0,
    Relu = 1,
    Sigmoid = 2,
    EmbeddingConcat = 3,
}

impl LayerKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Dense),
            1 => Some(Self::Relu),
            2 => Some(Self::Sigmoid),
            3 => Some(Self::EmbeddingConcat),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Dense => "D",
            Self::Relu => "R",
            Self::Sigmoid => "S",
            Self::EmbeddingConcat => "E",
        }
    }
}

/// Structural identity of a layer. Two layers have "the same structure"
/// exactly when their signatures are equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerSignature {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSignature {
    pub fn dense(i: usize, o: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            in_dim: i,
            out_dim: o,
        }
    }

    pub fn relu(d: usize) -> Self {
        Self {
            kind: LayerKind::Relu,
            in_dim: d,
            out_dim: d,
        }
    }
}

impl core::fmt::Display for LayerSignature {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}({},{})", self.kind.short_name(), self.in_dim, self.out_dim)
    }
}

/// Learned embeddings for the sparse columns, concatenated after the dense
/// columns. Input rows follow [`InputLayout`]; indices outside a table map
/// to the reserved OOV row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingConcat {
    pub layout: InputLayout,
    pub tables: Vec<Parameter>,
}

impl EmbeddingConcat {
    pub fn new(alloc: &mut ParamAlloc, layout: &InputLayout) -> Self {
        let tables = layout
            .vocab_sizes
            .iter()
            .map(|&v| alloc.matrix(v, layout.embedding_dim, Init::XavierUniform))
            .collect();
        Self {
            layout: layout.clone(),
            tables,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layout.raw_width()
    }

    pub fn out_dim(&self) -> usize {
        self.layout.embedded_width()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n_dense = self.layout.n_dense;
        if g.value(x).cols() != self.in_dim() {
            return Err(dim_err!(
                "embedding layer expects width {}, got {:?}",
                self.in_dim(),
                g.value(x).shape()
            ));
        }
        let mut parts = Vec::with_capacity(1 + self.tables.len());
        if n_dense > 0 {
            parts.push(g.slice_cols(x, 0, n_dense)?);
        }
        for (k, table) in self.tables.iter().enumerate() {
            let vocab = table.value.rows();
            let indices: Vec<usize> = {
                let xv = g.value(x);
                (0..xv.rows())
                    .map(|r| {
                        let v = xv.get(r, n_dense + k);
                        if v >= 0.0 && (v as usize) < vocab {
                            v as usize
                        } else {
                            0
                        }
                    })
                    .collect()
            };
            let t = g.param(table);
            parts.push(g.embed(t, &indices)?);
        }
        g.concat_cols(&parts)
    }

    /// Exact (bitwise) parameter equality.
    pub fn same_weights(&self, other: &EmbeddingConcat) -> bool {
        self.layout == other.layout
            && self.tables.len() == other.tables.len()
            && self
                .tables
                .iter()
                .zip(&other.tables)
                .all(|(a, b)| a.value.to_bits() == b.value.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Relu(usize),
    Sigmoid(usize),
    Embedding(EmbeddingConcat),
}

impl Layer {
    pub fn signature(&self) -> LayerSignature {
        match self {
            Layer::Dense(d) => LayerSignature::dense(d.in_dim(), d.out_dim()),
            Layer::Relu(n) => LayerSignature::relu(*n),
            Layer::Sigmoid(n) => LayerSignature {
                kind: LayerKind::Sigmoid,
                in_dim: *n,
                out_dim: *n,
            },
            Layer::Embedding(e) => LayerSignature {
                kind: LayerKind::EmbeddingConcat,
                in_dim: e.in_dim(),
                out_dim: e.out_dim(),
            },
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let sig = self.signature();
        if g.value(x).cols() != sig.in_dim {
            return Err(dim_err!("layer {} got input {:?}", sig, g.value(x).shape()));
        }
        match self {
            Layer::Dense(d) => d.forward(g, x),
            Layer::Relu(_) => Ok(g.relu(x)),
            Layer::Sigmoid(_) => Ok(g.sigmoid(x)),
            Layer::Embedding(e) => e.forward(g, x),
        }
    }
}

impl Parameterized for Layer {
    fn params(&self) -> Vec<&Parameter> {
        match self {
            Layer::Dense(d) => d.params(),
            Layer::Embedding(e) => e.tables.iter().collect(),
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::Dense(d) => d.params_mut(),
            Layer::Embedding(e) => e.tables.iter_mut().collect(),
            _ => Vec::new(),
        }
    }
}

/// Runs `x` through a contiguous layer sequence.
pub fn forward_layers(layers: &[Layer], g: &mut Graph, x: Var) -> Result<Var> {
    layers.iter().try_fold(x, |h, l| l.forward(g, h))
}

/// A trained single-task model: an ordered layer list whose `head_index`
/// layer produces the task logit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub id: String,
    pub task: String,
    pub layers: Vec<Layer>,
    pub head_index: usize,
}

impl TrainedModel {
    /// Optional embedding encoder, then `Dense + ReLU` per hidden width,
    /// then a one-logit head.
    pub fn mlp(
        id: &str,
        task: &str,
        layout: &InputLayout,
        hidden: &[usize],
        encoder: Option<EmbeddingConcat>,
        alloc: &mut ParamAlloc,
    ) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths {hidden:?} must be positive")));
        }
        let mut layers = Vec::new();
        let mut width = layout.raw_width();
        if layout.has_sparse() {
            let enc = encoder.unwrap_or_else(|| EmbeddingConcat::new(alloc, layout));
            if enc.layout != *layout {
                return Err(Error::Config("shared encoder was built for another layout".into()));
            }
            width = enc.out_dim();
            layers.push(Layer::Embedding(enc));
        }
        for &h in hidden {
            layers.push(Layer::Dense(Dense::new(alloc, width, h, Init::HeUniform)));
            layers.push(Layer::Relu(h));
            width = h;
        }
        layers.push(Layer::Dense(Dense::new(alloc, width, 1, Init::XavierUniform)));
        let model = Self {
            id: id.into(),
            task: task.into(),
            head_index: layers.len() - 1,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn signatures(&self) -> Vec<LayerSignature> {
        self.layers.iter().map(|l| l.signature()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].signature().in_dim
    }

    pub fn encoder(&self) -> Option<&EmbeddingConcat> {
        match self.layers.first() {
            Some(Layer::Embedding(e)) => Some(e),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config(format!("model `{}` has no layers", self.id)));
        }
        if self.head_index >= self.layers.len() {
            return Err(Error::Config(format!(
                "model `{}`: head index {} outside {} layers",
                self.id,
                self.head_index,
                self.layers.len()
            )));
        }
        for pair in self.layers.windows(2) {
            let (a, b) = (pair[0].signature(), pair[1].signature());
            if a.out_dim != b.in_dim {
                return Err(dim_err!("model `{}`: layer {} does not chain into {}", self.id, a, b));
            }
        }
        let head = self.layers[self.head_index].signature();
        if head.kind != LayerKind::Dense || head.out_dim != 1 {
            return Err(Error::Config(format!(
                "model `{}`: head {} must be a one-logit dense layer",
                self.id, head
            )));
        }
        if self.params().iter().any(|p| !p.value.is_finite()) {
            return Err(Error::NonFinite(format!("parameters of model `{}`", self.id)));
        }
        Ok(())
    }

    /// Output of the head layer.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        forward_layers(&self.layers[..=self.head_index], g, x)
    }

    /// Sigmoid probabilities for a feature matrix.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut out = train::predict(self, features)?;
        Ok(out.remove(0))
    }
}

impl Parameterized for TrainedModel {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl MultiTaskModel for TrainedModel {
    fn task_names(&self) -> Vec<String> {
        vec![self.task.clone()]
    }

    fn task_logits(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        Ok(vec![self.logits(g, x)?])
    }
}

/// The trained-model pool, grouped by task.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPool {
    pub tasks: Vec<String>,
    pub models: Vec<TrainedModel>,
}

impl ModelPool {
    /// Orders tasks by first appearance and checks the pool invariants.
    pub fn new(models: Vec<TrainedModel>) -> Result<Self> {
        let mut tasks: Vec<String> = Vec::new();
        for m in &models {
            if !tasks.contains(&m.task) {
                tasks.push(m.task.clone());
            }
        }
        Self::with_tasks(tasks, models)
    }

    pub fn with_tasks(tasks: Vec<String>, models: Vec<TrainedModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("model pool is empty".into()));
        }
        for t in &tasks {
            if !models.iter().any(|m| &m.task == t) {
                return Err(Error::Config(format!("task `{t}` has no model in the pool")));
            }
        }
        if let Some(m) = models.iter().find(|m| !tasks.contains(&m.task)) {
            return Err(Error::Config(format!(
                "model `{}` belongs to task `{}` outside the task list",
                m.id, m.task
            )));
        }
        let dim = models[0].input_dim();
        for m in &models {
            m.validate()?;
            if m.input_dim() != dim {
                return Err(dim_err!(
                    "model `{}` takes width {}, `{}` takes {}",
                    m.id,
                    m.input_dim(),
                    models[0].id,
                    dim
                ));
            }
        }
        Ok(Self { tasks, models })
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    pub fn task_index(&self, task: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == task)
    }

    pub fn models_for(&self, task: &str) -> impl Iterator<Item = &TrainedModel> {
        let task = String::from(task);
        self.models.iter().filter(move |m| m.task == task)
    }
}

/// Trains one sigmoid/BCE MLP for `task`. When the data has sparse columns
/// and `encoder` is given, that encoder is reused frozen; otherwise a fresh
/// trainable encoder is created.
pub fn train_single(
    id: &str,
    task: &str,
    hidden: &[usize],
    data: &TaskDataset,
    config: &TrainConfig,
    encoder: Option<&EmbeddingConcat>,
) -> Result<(TrainedModel, TrainLog)> {
    let label = data.task_index(task)?;
    if let Some(bad) = data.labels[label].iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!(
            "label column for `{task}` is not binary (found {bad})"
        )));
    }
    let mut alloc = ParamAlloc::new(config.seed);
    let shared = encoder.map(|e| {
        let mut e = e.clone();
        e.set_frozen(true);
        e
    });
    let mut model = TrainedModel::mlp(id, task, &data.layout, hidden, shared, &mut alloc)?;
    let log = train::fit(&mut model, data, &[label], config)?;
    Ok((model, log))
}

impl Parameterized for EmbeddingConcat {
    fn params(&self) -> Vec<&Parameter> {
        self.tables.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.tables.iter_mut().collect()
    }
}
