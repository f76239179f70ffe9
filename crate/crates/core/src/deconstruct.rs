//! Decomposition of trained models into aligned components.
//!
//! The common structure of a pool is the longest ordered subsequence of
//! layer signatures present in every model, searched between the optional
//! leading embedding encoder and the head. Every model is then cut after
//! each matched layer, so component `k` of every model ends in a layer with
//! the same signature and therefore the same output width.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{dim_err, Error, Result};
use crate::graph::Graph;
use crate::model::{forward_layers, EmbeddingConcat, Layer, LayerSignature, ModelPool, TrainedModel};
use crate::tensor::Tensor;

/// Aligned common layers and where each model matches them.
#[derive(Clone, Debug, PartialEq)]
pub struct CommonLayerSet {
    pub signatures: Vec<LayerSignature>,
    /// `cuts[m][k]`: layer index in model `m` matched to signature `k`.
    pub cuts: Vec<Vec<usize>>,
}

impl CommonLayerSet {
    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }
}

/// What to do with the layers between the last cut and the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailMode {
    /// Keep the trailing segment as a final component; widths must agree.
    Strict,
    /// Keep it and map disagreeing widths to a common width with trainable
    /// linear adapters.
    Adapter,
    /// Discard it.
    Drop,
}

impl TailMode {
    pub fn name(self) -> &'static str {
        match self {
            TailMode::Strict => "strict",
            TailMode::Adapter => "adapter",
            TailMode::Drop => "drop",
        }
    }
}

/// A contiguous, frozen slice of a source model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelComponent {
    pub model_id: String,
    pub task: usize,
    /// 1-based level.
    pub level: usize,
    pub layers: Vec<Layer>,
    /// Absolute layer range in the source model.
    pub range: Range<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ModelComponent {
    pub fn forward(&self, g: &mut Graph, x: crate::graph::Var) -> Result<crate::graph::Var> {
        if g.value(x).cols() != self.in_dim {
            return Err(dim_err!(
                "component {} level {} expects width {}, got {:?}",
                self.model_id,
                self.level,
                self.in_dim,
                g.value(x).shape()
            ));
        }
        forward_layers(&self.layers, g, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelComponents {
    pub model_id: String,
    pub task: usize,
    pub components: Vec<ModelComponent>,
}

/// All components of a pool, aligned into levels.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSet {
    pub tasks: Vec<String>,
    /// Shared frozen input encoder, applied before level 1.
    pub encoder: Option<EmbeddingConcat>,
    /// Width of a raw input row.
    pub input_dim: usize,
    /// Width entering level 1 (after the encoder).
    pub level_input_dim: usize,
    pub models: Vec<ModelComponents>,
    /// Common output width of every level.
    pub level_dims: Vec<usize>,
    pub tail_mode: TailMode,
    pub common: CommonLayerSet,
}

impl ComponentSet {
    pub fn level_count(&self) -> usize {
        self.level_dims.len()
    }

    pub fn component_count(&self) -> usize {
        self.models.iter().map(|m| m.components.len()).sum()
    }

    /// Components of one level (1-based), grouped by task in task order.
    pub fn level(&self, level: usize) -> Vec<Vec<&ModelComponent>> {
        let mut out = vec![Vec::new(); self.tasks.len()];
        for m in &self.models {
            out[m.task].push(&m.components[level - 1]);
        }
        out
    }

    pub fn level_in_dim(&self, level: usize) -> usize {
        if level == 1 {
            self.level_input_dim
        } else {
            self.level_dims[level - 2]
        }
    }
}

fn search_range(m: &TrainedModel) -> Range<usize> {
    let start = usize::from(m.encoder().is_some());
    start..m.head_index.max(start)
}

/// Longest common subsequence of several sequences. Among optimal answers
/// the one matching earliest in the first sequence wins, and every element
/// is matched at its earliest feasible position in each sequence.
pub fn longest_common_subsequence<T: Ord + Clone>(seqs: &[&[T]]) -> (Vec<T>, Vec<Vec<usize>>) {
    if seqs.is_empty() {
        return (Vec::new(), Vec::new());
    }
    // Identical sequences share one search dimension.
    let mut unique: Vec<&[T]> = Vec::new();
    let mut which = Vec::with_capacity(seqs.len());
    for s in seqs {
        match unique.iter().position(|u| u == s) {
            Some(i) => which.push(i),
            None => {
                which.push(unique.len());
                unique.push(s);
            }
        }
    }
    let mut search = Lcs {
        seqs: unique,
        memo: BTreeMap::new(),
    };
    let mut state = vec![0; search.seqs.len()];
    let mut items = Vec::new();
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); search.seqs.len()];
    let mut remaining = search.best(&state);
    while remaining > 0 {
        let next = search
            .candidates(&state)
            .into_iter()
            .find(|cand| {
                let after: Vec<usize> = cand.iter().map(|p| p + 1).collect();
                1 + search.best(&after) == remaining
            })
            .expect("an optimal continuation exists");
        items.push(search.seqs[0][next[0]].clone());
        for (k, &p) in next.iter().enumerate() {
            positions[k].push(p);
        }
        state = next.iter().map(|p| p + 1).collect();
        remaining -= 1;
    }
    let per_input = which.iter().map(|&u| positions[u].clone()).collect();
    (items, per_input)
}

struct Lcs<'a, T> {
    seqs: Vec<&'a [T]>,
    memo: BTreeMap<Vec<usize>, usize>,
}

impl<T: Ord + Clone> Lcs<'_, T> {
    /// Next-match position tuples, in increasing order of the position in
    /// the first sequence. Only the first occurrence of each value counts.
    fn candidates(&self, state: &[usize]) -> Vec<Vec<usize>> {
        let first = self.seqs[0];
        let mut out = Vec::new();
        let mut tried: Vec<&T> = Vec::new();
        for (p, item) in first.iter().enumerate().skip(state[0]) {
            if tried.contains(&item) {
                continue;
            }
            tried.push(item);
            let mut cand = Vec::with_capacity(self.seqs.len());
            cand.push(p);
            let found = self.seqs[1..].iter().zip(&state[1..]).all(|(s, &from)| {
                match s[from.min(s.len())..].iter().position(|x| x == item) {
                    Some(off) => {
                        cand.push(from + off);
                        true
                    }
                    None => false,
                }
            });
            if found {
                out.push(cand);
            }
        }
        out
    }

    fn best(&mut self, state: &[usize]) -> usize {
        if let Some(&v) = self.memo.get(state) {
            return v;
        }
        let mut best = 0;
        for cand in self.candidates(state) {
            let after: Vec<usize> = cand.iter().map(|p| p + 1).collect();
            best = best.max(1 + self.best(&after));
        }
        self.memo.insert(state.to_vec(), best);
        best
    }
}

/// Finds the layers with identical structure across the whole pool.
pub fn find_common_layers(pool: &ModelPool) -> Result<CommonLayerSet> {
    let sigs: Vec<Vec<LayerSignature>> = pool
        .models
        .iter()
        .map(|m| m.signatures()[search_range(m)].to_vec())
        .collect();
    let refs: Vec<&[LayerSignature]> = sigs.iter().map(|s| s.as_slice()).collect();
    let (signatures, positions) = longest_common_subsequence(&refs);
    if signatures.is_empty() {
        let (a, b) = most_dissimilar(&refs);
        return Err(Error::NoCommonStructure {
            first: pool.models[a].id.clone(),
            second: pool.models[b].id.clone(),
        });
    }
    let cuts = pool
        .models
        .iter()
        .zip(positions)
        .map(|(m, pos)| {
            let offset = search_range(m).start;
            pos.into_iter().map(|p| p + offset).collect()
        })
        .collect();
    Ok(CommonLayerSet { signatures, cuts })
}

fn most_dissimilar(seqs: &[&[LayerSignature]]) -> (usize, usize) {
    let mut worst = (0, 0, usize::MAX);
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            let (common, _) = longest_common_subsequence(&[seqs[i], seqs[j]]);
            if common.len() < worst.2 {
                worst = (i, j, common.len());
            }
        }
    }
    (worst.0, worst.1)
}

fn shared_encoder(pool: &ModelPool) -> Result<Option<EmbeddingConcat>> {
    let first = &pool.models[0];
    for m in &pool.models[1..] {
        let same = match (first.encoder(), m.encoder()) {
            (None, None) => true,
            (Some(a), Some(b)) => a.same_weights(b),
            _ => false,
        };
        if !same {
            return Err(Error::EncoderMismatch {
                first: first.id.clone(),
                second: m.id.clone(),
            });
        }
    }
    Ok(first.encoder().cloned())
}

/// Most frequent value; ties go to the larger value.
fn majority(values: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(v, _)| v)
        .unwrap_or(0)
}

/// Splits every model after each of its matched common layers.
pub fn deconstruct_pool(pool: &ModelPool, common: &CommonLayerSet, tail_mode: TailMode) -> Result<ComponentSet> {
    if common.is_empty() {
        return Err(Error::Config("common layer set is empty".into()));
    }
    if common.cuts.len() != pool.models.len() {
        return Err(Error::Config(format!(
            "common layer set covers {} models, pool has {}",
            common.cuts.len(),
            pool.models.len()
        )));
    }
    let encoder = shared_encoder(pool)?;
    let level_input_dim = encoder.as_ref().map_or(pool.input_dim(), |e| e.out_dim());

    // Trailing segments, head excluded.
    let tails: Vec<Range<usize>> = pool
        .models
        .iter()
        .zip(&common.cuts)
        .map(|(m, cuts)| cuts[cuts.len() - 1] + 1..m.head_index)
        .collect();
    let tail_dims: Vec<Option<usize>> = pool
        .models
        .iter()
        .zip(&tails)
        .map(|(m, r)| (!r.is_empty()).then(|| m.layers[r.end - 1].signature().out_dim))
        .collect();
    let any_tail = tail_dims.iter().any(Option::is_some);
    let keep_tail = any_tail && tail_mode != TailMode::Drop;

    let last_common_dim = common.signatures[common.len() - 1].out_dim;
    let mut tail_dim = None;
    if keep_tail {
        let dims: Vec<usize> = tail_dims.iter().map(|d| d.unwrap_or(last_common_dim)).collect();
        let d = majority(&dims);
        let offenders: Vec<String> = pool
            .models
            .iter()
            .zip(&tail_dims)
            .filter(|(_, td)| td.is_none_or(|v| v != d))
            .map(|(m, td)| match td {
                Some(v) => format!("{} (width {v})", m.id),
                None => format!("{} (empty tail)", m.id),
            })
            .collect();
        if tail_mode == TailMode::Strict && !offenders.is_empty() {
            return Err(Error::TailMismatch { models: offenders });
        }
        tail_dim = Some(d);
    }

    let mut models = Vec::with_capacity(pool.models.len());
    for ((m, cuts), tail) in pool.models.iter().zip(&common.cuts).zip(&tails) {
        let task = pool
            .task_index(&m.task)
            .ok_or_else(|| Error::TaskMismatch(format!("model `{}` has unknown task", m.id)))?;
        let mut start = search_range(m).start;
        let mut components = Vec::with_capacity(cuts.len() + 1);
        for (k, &cut) in cuts.iter().enumerate() {
            if cut < start {
                return Err(Error::Config(format!("cuts of `{}` are not increasing", m.id)));
            }
            components.push(component(m, task, k + 1, start..cut + 1));
            start = cut + 1;
        }
        if keep_tail {
            let mut c = component(m, task, cuts.len() + 1, tail.clone());
            if tail.is_empty() {
                c.in_dim = last_common_dim;
                c.out_dim = last_common_dim;
            }
            components.push(c);
        }
        models.push(ModelComponents {
            model_id: m.id.clone(),
            task,
            components,
        });
    }

    let mut level_dims: Vec<usize> = common.signatures.iter().map(|s| s.out_dim).collect();
    if let Some(d) = tail_dim {
        level_dims.push(d);
    }
    Ok(ComponentSet {
        tasks: pool.tasks.clone(),
        encoder,
        input_dim: pool.input_dim(),
        level_input_dim,
        models,
        level_dims,
        tail_mode,
        common: common.clone(),
    })
}

fn component(m: &TrainedModel, task: usize, level: usize, range: Range<usize>) -> ModelComponent {
    let layers = m.layers[range.clone()].to_vec();
    let (in_dim, out_dim) = match (layers.first(), layers.last()) {
        (Some(f), Some(l)) => (f.signature().in_dim, l.signature().out_dim),
        _ => (0, 0),
    };
    ModelComponent {
        model_id: m.id.clone(),
        task,
        level,
        layers,
        range,
        in_dim,
        out_dim,
    }
}

/// Maximum absolute difference between running `probe` through the
/// component chain and through the original model truncated where the
/// components end.
pub fn verify_roundtrip(model: &TrainedModel, components: &[ModelComponent], probe: &Tensor) -> Result<f64> {
    let end = components
        .iter()
        .map(|c| c.range.end)
        .max()
        .ok_or_else(|| Error::Config("no components to verify".into()))?;
    let mut g = Graph::inference();
    let x = g.constant(probe.clone());
    let reference = forward_layers(&model.layers[..end], &mut g, x)?;
    let mut h = x;
    if let Some(enc) = model.encoder() {
        h = enc.forward(&mut g, h)?;
    }
    for c in components {
        h = c.forward(&mut g, h)?;
    }
    g.value(h).max_abs_diff(g.value(reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InputLayout;
    use crate::layers::Dense;
    use crate::param::{Init, ParamAlloc};
    use alloc::string::ToString;

    fn model_from(id: &str, task: &str, sigs: &[LayerSignature], alloc: &mut ParamAlloc) -> TrainedModel {
        let layers = sigs
            .iter()
            .map(|s| match s.kind {
                crate::model::LayerKind::Dense => Layer::Dense(Dense::new(alloc, s.in_dim, s.out_dim, Init::HeUniform)),
                crate::model::LayerKind::Relu => Layer::Relu(s.in_dim),
                crate::model::LayerKind::Sigmoid => Layer::Sigmoid(s.in_dim),
                crate::model::LayerKind::EmbeddingConcat => unreachable!(),
            })
            .collect::<Vec<_>>();
        TrainedModel {
            id: id.into(),
            task: task.into(),
            head_index: layers.len() - 1,
            layers,
        }
    }

    use LayerSignature as S;

    #[test]
    fn identical_architectures_match_fully() {
        let mut alloc = ParamAlloc::new(1);
        let layout = InputLayout::dense(5);
        let a = TrainedModel::mlp("a", "t", &layout, &[4, 3], None, &mut alloc).unwrap();
        let b = TrainedModel::mlp("b", "t", &layout, &[4, 3], None, &mut alloc).unwrap();
        let pool = ModelPool::new(vec![a, b]).unwrap();
        let c = find_common_layers(&pool).unwrap();
        assert_eq!(
            c.signatures,
            vec![S::dense(5, 4), S::relu(4), S::dense(4, 3), S::relu(3)]
        );
        assert_eq!(c.cuts, vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3]]);
    }

    #[test]
    fn single_shared_layer_gives_two_components() {
        // A: 18 layers, B: 24 layers, only A's 8th and B's 20th layer agree.
        let mut alloc = ParamAlloc::new(2);
        let mut sa = Vec::new();
        for i in 0..17 {
            sa.push(if i == 7 { S::dense(6, 6) } else { S::relu(6) });
        }
        sa.push(S::dense(6, 1));
        let mut sb = Vec::new();
        for i in 0..23 {
            sb.push(if i == 19 { S::dense(6, 6) } else { S::relu(6) });
        }
        sb.push(S::dense(6, 1));
        // Make the ReLU layers distinct between the models.
        let sb: Vec<S> = sb
            .into_iter()
            .map(|s| {
                if s.kind == crate::model::LayerKind::Relu {
                    S {
                        kind: crate::model::LayerKind::Sigmoid,
                        ..s
                    }
                } else {
                    s
                }
            })
            .collect();
        let a = model_from("A", "t", &sa, &mut alloc);
        let b = model_from("B", "t", &sb, &mut alloc);
        let pool = ModelPool::new(vec![a, b]).unwrap();
        let c = find_common_layers(&pool).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.cuts, vec![vec![7], vec![19]]);
        let set = deconstruct_pool(&pool, &c, TailMode::Strict).unwrap();
        let ra: Vec<_> = set.models[0].components.iter().map(|c| c.range.clone()).collect();
        let rb: Vec<_> = set.models[1].components.iter().map(|c| c.range.clone()).collect();
        assert_eq!(ra, vec![0..8, 8..17]);
        assert_eq!(rb, vec![0..20, 20..23]);
    }

    #[test]
    fn three_model_common_set_counts_repeated_activations() {
        let mut alloc = ParamAlloc::new(8);
        let a = [S::dense(10, 8), S::relu(8), S::dense(8, 8), S::relu(8), S::dense(8, 1)];
        let b = [
            S::dense(10, 8),
            S::relu(8),
            S::dense(8, 4),
            S::relu(4),
            S::dense(4, 8),
            S::relu(8),
            S::dense(8, 1),
        ];
        let pool = ModelPool::new(vec![
            model_from("a", "t1", &a, &mut alloc),
            model_from("b", "t2", &b, &mut alloc),
            model_from("c", "t3", &a, &mut alloc),
        ])
        .unwrap();
        let common = find_common_layers(&pool).unwrap();
        assert_eq!(common.signatures, vec![S::dense(10, 8), S::relu(8), S::relu(8)]);
        assert_eq!(common.cuts, vec![vec![0, 1, 3], vec![0, 1, 5], vec![0, 1, 3]]);
    }

    #[test]
    fn empty_tail_yields_common_count() {
        let mut alloc = ParamAlloc::new(3);
        let layout = InputLayout::dense(5);
        let a = TrainedModel::mlp("a", "t", &layout, &[4], None, &mut alloc).unwrap();
        let pool = ModelPool::new(vec![a.clone(), a]).unwrap();
        let c = find_common_layers(&pool).unwrap();
        let set = deconstruct_pool(&pool, &c, TailMode::Strict).unwrap();
        assert_eq!(set.level_count(), c.len());
    }

    #[test]
    fn no_common_structure_names_models() {
        let mut alloc = ParamAlloc::new(4);
        let a = model_from("a", "t", &[S::dense(3, 4), S::relu(4), S::dense(4, 1)], &mut alloc);
        let b = model_from("b", "t", &[S::dense(3, 5), S::relu(5), S::dense(5, 1)], &mut alloc);
        let pool = ModelPool::new(vec![a, b]).unwrap();
        assert_eq!(
            find_common_layers(&pool).unwrap_err(),
            Error::NoCommonStructure {
                first: "a".into(),
                second: "b".into()
            }
        );
    }

    #[test]
    fn strict_tail_mismatch_and_adapter_mode() {
        let mut alloc = ParamAlloc::new(5);
        let layout = InputLayout::dense(6);
        let a = TrainedModel::mlp("a", "t", &layout, &[4, 3], None, &mut alloc).unwrap();
        let b = TrainedModel::mlp("b", "t", &layout, &[4, 5], None, &mut alloc).unwrap();
        let c = TrainedModel::mlp("c", "t", &layout, &[4, 5], None, &mut alloc).unwrap();
        let pool = ModelPool::new(vec![a, b, c]).unwrap();
        let common = find_common_layers(&pool).unwrap();
        assert_eq!(common.signatures, vec![S::dense(6, 4), S::relu(4)]);
        match deconstruct_pool(&pool, &common, TailMode::Strict) {
            Err(Error::TailMismatch { models }) => assert_eq!(models, vec!["a (width 3)".to_string()]),
            other => panic!("{other:?}"),
        }
        let set = deconstruct_pool(&pool, &common, TailMode::Adapter).unwrap();
        assert_eq!(set.level_dims, vec![4, 4, 5]);
        assert_eq!(set.models[0].components[2].out_dim, 3);
        let dropped = deconstruct_pool(&pool, &common, TailMode::Drop).unwrap();
        assert_eq!(dropped.level_count(), 2);
    }

    #[test]
    fn roundtrip_and_reordering() {
        let mut alloc = ParamAlloc::new(6);
        let layout = InputLayout::dense(5);
        let a = TrainedModel::mlp("a", "t", &layout, &[4, 4], None, &mut alloc).unwrap();
        let b = TrainedModel::mlp("b", "t", &layout, &[4, 6, 4], None, &mut alloc).unwrap();
        let pool = ModelPool::new(vec![a.clone(), b]).unwrap();
        let common = find_common_layers(&pool).unwrap();
        let set = deconstruct_pool(&pool, &common, TailMode::Strict).unwrap();
        let mut rng = crate::rng::stream(1, 1);
        let probe = Tensor::new(&[64, 5], (0..320).map(|_| crate::rng::normal(&mut rng)).collect()).unwrap();
        let comps = &set.models[0].components;
        assert!(verify_roundtrip(&a, comps, &probe).unwrap() < 1e-9);
        let mut reordered = comps.clone();
        reordered.swap(0, 1);
        match verify_roundtrip(&a, &reordered, &probe) {
            Err(_) => {}
            Ok(dev) => assert!(dev > 1e-3),
        }
    }
}
