//! One adaptive knowledge fusion level.
//!
//! Each task runs its frozen expert components, mixes them with a softmax
//! task gate, picks one partner task with a softmax fusion gate and merges
//! itself with that partner through a two-input attention head.

use alloc::format;
use alloc::vec::Vec;

use crate::deconstruct::ModelComponent;
use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::Dense;
use crate::param::{Init, ParamAlloc, Parameter, Parameterized};
use crate::tensor::Tensor;

/// How the attention head scores its two inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreMode {
    /// Each input is scored against itself: `⟨Q(w), K(w)⟩ / √d`.
    #[default]
    SelfScore,
    /// The task's own representation is the query: `⟨Q(p_x), K(w)⟩ / √d`.
    Cross,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::SelfScore => "self",
            ScoreMode::Cross => "cross",
        }
    }
}

/// Softmax weights over the experts of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGate {
    pub task: usize,
    pub dense: Dense,
}

impl TaskGate {
    pub fn new(alloc: &mut ParamAlloc, task: usize, gate_in: usize, experts: usize) -> Self {
        Self {
            task,
            dense: Dense::new(alloc, gate_in, experts, Init::XavierUniform),
        }
    }

    pub fn experts(&self) -> usize {
        self.dense.out_dim()
    }

    pub fn weights(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let logits = self.dense.forward(g, input)?;
        g.softmax_rows(logits)
    }
}

/// Softmax weights over all tasks, used to pick a partner.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionGate {
    pub task: usize,
    pub dense: Dense,
}

impl FusionGate {
    pub fn new(alloc: &mut ParamAlloc, task: usize, gate_in: usize, tasks: usize) -> Self {
        Self {
            task,
            dense: Dense::new(alloc, gate_in, tasks, Init::XavierUniform),
        }
    }

    pub fn weights(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let logits = self.dense.forward(g, input)?;
        g.softmax_rows(logits)
    }
}

/// Two-input attention merge with single-layer ReLU projections.
#[derive(Clone, Debug, PartialEq)]
pub struct MtmHead {
    pub task: usize,
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
}

impl MtmHead {
    /// `Q` and `K` start random; `V` starts as the identity, so that
    /// `V(w) = w` for the non-negative inputs a merge receives.
    pub fn new(alloc: &mut ParamAlloc, task: usize, dim: usize) -> Self {
        let mut v = Dense::new(alloc, dim, dim, Init::Zeros);
        let data = v.weight.value.data_mut();
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self {
            task,
            q: Dense::new(alloc, dim, dim, Init::HeUniform),
            k: Dense::new(alloc, dim, dim, Init::HeUniform),
            v,
        }
    }

    pub fn dim(&self) -> usize {
        self.v.out_dim()
    }

    fn project(dense: &Dense, g: &mut Graph, x: Var) -> Result<Var> {
        let h = dense.forward(g, x)?;
        Ok(g.relu(h))
    }

    fn score(&self, g: &mut Graph, query: Var, key: Var) -> Result<Var> {
        let q = Self::project(&self.q, g, query)?;
        let k = Self::project(&self.k, g, key)?;
        let dot = g.row_dot(q, k)?;
        Ok(g.scale(dot, 1.0 / libm::sqrt(self.dim() as f64)))
    }

    /// Returns the merged representation and the `[B × 2]` weights `(c_x, c_y)`.
    pub fn merge_with_weights(&self, g: &mut Graph, px: Var, py: Var, mode: ScoreMode) -> Result<(Var, Var)> {
        let d = self.dim();
        for v in [px, py] {
            if g.value(v).cols() != d {
                return Err(dim_err!(
                    "attention head of task {} expects width {d}, got {:?}",
                    self.task,
                    g.value(v).shape()
                ));
            }
        }
        let sx = self.score(g, px, px)?;
        let sy = match mode {
            ScoreMode::SelfScore => self.score(g, py, py)?,
            ScoreMode::Cross => self.score(g, px, py)?,
        };
        let scores = g.concat_cols(&[sx, sy])?;
        let c = g.softmax_rows(scores)?;
        let cx = g.column(c, 0)?;
        let cy = g.column(c, 1)?;
        let vx = Self::project(&self.v, g, px)?;
        let vy = Self::project(&self.v, g, py)?;
        let a = g.scale_rows(vx, cx)?;
        let b = g.scale_rows(vy, cy)?;
        Ok((g.add(a, b)?, c))
    }

    pub fn merge(&self, g: &mut Graph, px: Var, py: Var, mode: ScoreMode) -> Result<Var> {
        Ok(self.merge_with_weights(g, px, py, mode)?.0)
    }

    /// `V(x)` on its own.
    pub fn value(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Self::project(&self.v, g, x)
    }
}

/// Index of the largest probability other than `self_task`; ties go to the
/// smallest index.
pub fn partner_index(probs: &[f64], self_task: usize) -> Result<usize> {
    if probs.len() < 2 {
        return Err(Error::NotApplicable);
    }
    let mut best: Option<usize> = None;
    for (j, &p) in probs.iter().enumerate() {
        if j == self_task {
            continue;
        }
        if best.is_none_or(|b| p > probs[b]) {
            best = Some(j);
        }
    }
    Ok(best.expect("at least one other task"))
}

/// Per-row `(partner, probability)` from raw fusion-gate logits `[B × T]`.
pub fn select_partner(logits: &Tensor, self_task: usize) -> Result<Vec<(usize, f64)>> {
    if self_task >= logits.cols() {
        return Err(Error::Config(format!(
            "task {self_task} outside {} fusion-gate outputs",
            logits.cols()
        )));
    }
    let probs = logits.softmax()?;
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            partner_index(row, self_task).map(|j| (j, row[j]))
        })
        .collect()
}

/// Expert outputs for every task, after adapters.
pub fn run_experts(level: &AkfLevel, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Vec<Var>>> {
    if inputs.len() != level.experts.len() {
        return Err(Error::TaskMismatch(format!(
            "level {} has {} tasks, got {} inputs",
            level.level,
            level.experts.len(),
            inputs.len()
        )));
    }
    let mut out = Vec::with_capacity(inputs.len());
    for (t, (&x, comps)) in inputs.iter().zip(&level.experts).enumerate() {
        if g.value(x).cols() != level.in_dim {
            return Err(dim_err!(
                "level {} task {} expects width {}, got {:?}",
                level.level,
                t,
                level.in_dim,
                g.value(x).shape()
            ));
        }
        let mut hs = Vec::with_capacity(comps.len());
        for (c, adapter) in comps.iter().zip(&level.adapters[t]) {
            let mut h = c.forward(g, x)?;
            if let Some(a) = adapter {
                h = a.forward(g, h)?;
            }
            hs.push(h);
        }
        out.push(hs);
    }
    Ok(out)
}

/// Gate-weighted sum of one task's experts.
pub fn intra_task_fuse(gate: &TaskGate, g: &mut Graph, gate_input: Var, experts: &[Var]) -> Result<Var> {
    if experts.len() != gate.experts() {
        return Err(Error::Config(format!(
            "task gate {} weights {} experts, {} given",
            gate.task,
            gate.experts(),
            experts.len()
        )));
    }
    let w = gate.weights(g, gate_input)?;
    let mut acc: Option<Var> = None;
    for (j, &e) in experts.iter().enumerate() {
        let wj = g.column(w, j)?;
        let term = g.scale_rows(e, wj)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::Config("task with no experts".into()))
}

/// Picks each row's partner among `fused` and scales it by its gate
/// probability. Returns the weighted partner and the chosen indices.
pub fn partner_representation(
    gate: &FusionGate,
    g: &mut Graph,
    gate_input: Var,
    fused: &[Var],
) -> Result<(Var, Vec<usize>)> {
    let probs = gate.weights(g, gate_input)?;
    if g.value(probs).cols() != fused.len() {
        return Err(Error::Config(format!(
            "fusion gate {} scores {} tasks, {} given",
            gate.task,
            g.value(probs).cols(),
            fused.len()
        )));
    }
    let choice = {
        let p = g.value(probs);
        (0..p.rows())
            .map(|r| partner_index(p.row(r), gate.task))
            .collect::<Result<Vec<_>>>()?
    };
    let picked = g.pick_rows(fused, &choice)?;
    let cols = (0..fused.len())
        .map(|j| g.column(probs, j))
        .collect::<Result<Vec<_>>>()?;
    let weight = g.pick_rows(&cols, &choice)?;
    Ok((g.scale_rows(picked, weight)?, choice))
}

/// Components and trainable fusion parts of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct AkfLevel {
    /// 1-based level index.
    pub level: usize,
    pub in_dim: usize,
    pub dim: usize,
    /// Frozen components, grouped by task.
    pub experts: Vec<Vec<ModelComponent>>,
    /// Linear maps to `dim`, for components whose width differs.
    pub adapters: Vec<Vec<Option<Dense>>>,
    pub task_gates: Vec<TaskGate>,
    /// Empty when the level has a single task or the merge is disabled.
    pub fusion_gates: Vec<FusionGate>,
    pub heads: Vec<MtmHead>,
    pub use_mtm: bool,
    pub score_mode: ScoreMode,
}

impl AkfLevel {
    /// Wires a level around `experts`, which are frozen in the process.
    pub fn new(
        alloc: &mut ParamAlloc,
        level: usize,
        in_dim: usize,
        dim: usize,
        mut experts: Vec<Vec<ModelComponent>>,
        use_mtm: bool,
        score_mode: ScoreMode,
    ) -> Result<Self> {
        let tasks = experts.len();
        if tasks == 0 || experts.iter().any(Vec::is_empty) {
            return Err(Error::Config(format!("level {level} has a task without experts")));
        }
        let mut adapters = Vec::with_capacity(tasks);
        for comps in &mut experts {
            let mut row = Vec::with_capacity(comps.len());
            for c in comps.iter_mut() {
                if c.in_dim != in_dim {
                    return Err(dim_err!(
                        "level {level}: component of `{}` takes width {}, level input is {in_dim}",
                        c.model_id,
                        c.in_dim
                    ));
                }
                for l in &mut c.layers {
                    l.set_frozen(true);
                }
                row.push((c.out_dim != dim).then(|| Dense::new(alloc, c.out_dim, dim, Init::XavierUniform)));
            }
            adapters.push(row);
        }
        let task_gates = experts
            .iter()
            .enumerate()
            .map(|(t, comps)| TaskGate::new(alloc, t, in_dim, comps.len()))
            .collect();
        let merge = use_mtm && tasks > 1;
        let fusion_gates = if merge {
            (0..tasks).map(|t| FusionGate::new(alloc, t, in_dim, tasks)).collect()
        } else {
            Vec::new()
        };
        let heads = if merge {
            (0..tasks).map(|t| MtmHead::new(alloc, t, dim)).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            level,
            in_dim,
            dim,
            experts,
            adapters,
            task_gates,
            fusion_gates,
            heads,
            use_mtm,
            score_mode,
        })
    }

    pub fn tasks(&self) -> usize {
        self.experts.len()
    }

    pub fn expert_count(&self) -> usize {
        self.experts.iter().map(Vec::len).sum()
    }

    /// Whether the forward pass runs partner selection and the merge.
    pub fn merges(&self) -> bool {
        self.use_mtm && self.tasks() > 1 && !self.heads.is_empty()
    }

    /// Intra-task fused outputs `h^i`.
    pub fn fused(&self, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>> {
        let experts = run_experts(self, g, inputs)?;
        self.task_gates
            .iter()
            .zip(inputs)
            .zip(&experts)
            .map(|((gate, &x), hs)| intra_task_fuse(gate, g, x, hs))
            .collect()
    }

    /// Per-task outputs `z^i`.
    pub fn forward(&self, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>> {
        let h = self.fused(g, inputs)?;
        if !self.merges() {
            return Ok(h);
        }
        let mut z = Vec::with_capacity(h.len());
        for t in 0..h.len() {
            let (partner, _) = partner_representation(&self.fusion_gates[t], g, inputs[t], &h)?;
            z.push(self.heads[t].merge(g, h[t], partner, self.score_mode)?);
        }
        Ok(z)
    }

    /// Parameters of the frozen components.
    pub fn component_params(&self) -> Vec<&Parameter> {
        self.experts
            .iter()
            .flatten()
            .flat_map(|c| c.layers.iter().flat_map(|l| l.params()))
            .collect()
    }

    /// Gates, heads and adapters.
    pub fn fusion_params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = Vec::new();
        out.extend(self.adapters.iter().flatten().flatten().flat_map(|a| a.params()));
        out.extend(self.task_gates.iter().flat_map(|g| g.dense.params()));
        out.extend(self.fusion_gates.iter().flat_map(|g| g.dense.params()));
        for h in &self.heads {
            out.extend(h.q.params());
            out.extend(h.k.params());
            out.extend(h.v.params());
        }
        out
    }
}

/// Runs one level: experts, intra-task fusion, partner selection, merge.
pub fn akf_forward(level: &AkfLevel, g: &mut Graph, inputs: &[Var]) -> Result<Vec<Var>> {
    level.forward(g, inputs)
}

impl Parameterized for AkfLevel {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = self.component_params();
        out.extend(self.fusion_params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self
            .experts
            .iter_mut()
            .flatten()
            .flat_map(|c| c.layers.iter_mut().flat_map(|l| l.params_mut()))
            .collect();
        out.extend(
            self.adapters
                .iter_mut()
                .flatten()
                .flatten()
                .flat_map(|a| a.params_mut()),
        );
        out.extend(self.task_gates.iter_mut().flat_map(|g| g.dense.params_mut()));
        out.extend(self.fusion_gates.iter_mut().flat_map(|g| g.dense.params_mut()));
        for h in &mut self.heads {
            out.extend(h.q.params_mut());
            out.extend(h.k.params_mut());
            out.extend(h.v.params_mut());
        }
        out
    }
}
