//! Tabular multi-task datasets: column roles, encoding, splits, batching and
//! a seeded synthetic generator.
//!
//! Encoded rows keep dense columns first (z-scored with train-split
//! statistics) followed by one column per sparse feature holding the
//! category index as a float. Index 0 is reserved for categories never seen
//! in the train split. Embedding of the sparse indices happens inside the
//! models, see [`crate::model::EmbeddingConcat`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{self, SliceRandom};
use crate::tensor::Tensor;

pub const DEFAULT_EMBEDDING_DIM: usize = 4;
pub const TEST_FRACTION: f64 = 0.2;
pub const VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnRole {
    Dense,
    Sparse,
    /// Binary label of the named task.
    Label(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
}

/// Declared column roles, before fitting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSpec {
    pub columns: Vec<ColumnSpec>,
    pub embedding_dim: usize,
}

impl FeatureSpec {
    pub fn tasks(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter_map(|c| match &c.role {
                ColumnRole::Label(t) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks().is_empty() {
            return Err(Error::Config("feature spec has no label column".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        let mut seen = BTreeMap::new();
        for c in &self.columns {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::Config(format!("column `{}` declared twice", c.name)));
            }
        }
        Ok(())
    }
}

/// Statistics fitted on the train split.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedColumn {
    Dense { name: String, mean: f64, std: f64 },
    Sparse { name: String, vocabulary: Vec<String> },
}

/// Shape of an encoded row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputLayout {
    pub n_dense: usize,
    /// Per sparse column, vocabulary size including the OOV slot.
    pub vocab_sizes: Vec<usize>,
    pub embedding_dim: usize,
}

impl InputLayout {
    pub fn dense(n: usize) -> Self {
        Self {
            n_dense: n,
            vocab_sizes: Vec::new(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    /// Width of an encoded row as stored in the dataset.
    pub fn raw_width(&self) -> usize {
        self.n_dense + self.vocab_sizes.len()
    }

    /// Width after sparse columns are embedded.
    pub fn embedded_width(&self) -> usize {
        self.n_dense + self.vocab_sizes.len() * self.embedding_dim
    }

    pub fn has_sparse(&self) -> bool {
        !self.vocab_sizes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub features: Tensor,
    pub tasks: Vec<String>,
    /// `labels[t][row]` in {0, 1}.
    pub labels: Vec<Vec<f64>>,
    pub splits: Vec<Split>,
    pub layout: InputLayout,
    pub fitted: Vec<FittedColumn>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    /// One label vector per task, in dataset task order.
    pub labels: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic train/val/test assignment: a seeded shuffle puts the first
/// 20% of rows in test, and 10% of the remainder in validation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0x5_711));
    let n_test = libm::round((n as f64) * TEST_FRACTION) as usize;
    let n_val = libm::round(((n - n_test) as f64) * VAL_FRACTION) as usize;
    let mut splits = vec![Split::Train; n];
    for (pos, &row) in order.iter().enumerate() {
        if pos < n_test {
            splits[row] = Split::Test;
        } else if pos < n_test + n_val {
            splits[row] = Split::Val;
        }
    }
    splits
}

fn parse_label(raw: &str, row: usize, col: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ => Err(Error::Data(format!(
            "row {}, column `{}`: label `{}` is not binary (0/1)",
            row + 1,
            col,
            raw
        ))),
    }
}

/// Fits column statistics on the train split and encodes every row.
pub fn encode_table(
    name: &str,
    header: &[String],
    rows: &[Vec<String>],
    spec: &FeatureSpec,
    seed: u64,
) -> Result<TaskDataset> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::Data(format!("`{name}` has no data rows")));
    }
    let mut position = BTreeMap::new();
    for (i, h) in header.iter().enumerate() {
        position.insert(h.trim(), i);
    }
    let col_index = |c: &ColumnSpec| {
        position
            .get(c.name.as_str())
            .copied()
            .ok_or_else(|| Error::Data(format!("missing column `{}`", c.name)))
    };
    for (r, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Data(format!(
                "row {} has {} fields, header has {}",
                r + 1,
                row.len(),
                header.len()
            )));
        }
    }

    let n = rows.len();
    let splits = assign_splits(n, seed);
    let is_train = |r: usize| splits[r] == Split::Train;

    let dense: Vec<&ColumnSpec> = spec.columns.iter().filter(|c| c.role == ColumnRole::Dense).collect();
    let sparse: Vec<&ColumnSpec> = spec.columns.iter().filter(|c| c.role == ColumnRole::Sparse).collect();

    let mut fitted = Vec::new();
    let mut dense_values: Vec<Vec<f64>> = Vec::with_capacity(dense.len());
    for c in &dense {
        let j = col_index(c)?;
        let mut values = Vec::with_capacity(n);
        for (r, row) in rows.iter().enumerate() {
            let v = row[j].trim().parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "row {}, column `{}`: `{}` is not a number",
                    r + 1,
                    c.name,
                    row[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {}, column `{}`: non-finite value",
                    r + 1,
                    c.name
                )));
            }
            values.push(v);
        }
        let train: Vec<f64> = (0..n).filter(|&r| is_train(r)).map(|r| values[r]).collect();
        let count = train.len().max(1) as f64;
        let mean = train.iter().sum::<f64>() / count;
        let var = train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let std = libm::sqrt(var);
        fitted.push(FittedColumn::Dense {
            name: c.name.clone(),
            mean,
            std,
        });
        dense_values.push(
            values
                .iter()
                .map(|v| if std > 0.0 { (v - mean) / std } else { 0.0 })
                .collect(),
        );
    }

    let mut sparse_values: Vec<Vec<f64>> = Vec::with_capacity(sparse.len());
    let mut vocab_sizes = Vec::with_capacity(sparse.len());
    for c in &sparse {
        let j = col_index(c)?;
        let mut vocabulary: Vec<String> = (0..n)
            .filter(|&r| is_train(r))
            .map(|r| String::from(rows[r][j].trim()))
            .collect();
        vocabulary.sort();
        vocabulary.dedup();
        let values = rows
            .iter()
            .map(
                |row| match vocabulary.binary_search_by(|v| v.as_str().cmp(row[j].trim())) {
                    Ok(k) => (k + 1) as f64,
                    Err(_) => 0.0,
                },
            )
            .collect();
        vocab_sizes.push(vocabulary.len() + 1);
        sparse_values.push(values);
        fitted.push(FittedColumn::Sparse {
            name: c.name.clone(),
            vocabulary,
        });
    }

    let tasks = spec.tasks();
    let mut labels = Vec::with_capacity(tasks.len());
    for c in spec.columns.iter().filter(|c| matches!(c.role, ColumnRole::Label(_))) {
        let j = col_index(c)?;
        let values = rows
            .iter()
            .enumerate()
            .map(|(r, row)| parse_label(&row[j], r, &c.name))
            .collect::<Result<Vec<_>>>()?;
        labels.push(values);
    }

    let width = dense.len() + sparse.len();
    if width == 0 {
        return Err(Error::Config("feature spec has no feature columns".into()));
    }
    let mut data = Vec::with_capacity(n * width);
    for r in 0..n {
        data.extend(dense_values.iter().map(|col| col[r]));
        data.extend(sparse_values.iter().map(|col| col[r]));
    }
    Ok(TaskDataset {
        name: name.into(),
        features: Tensor::new(&[n, width], data)?,
        tasks,
        labels,
        splits,
        layout: InputLayout {
            n_dense: dense.len(),
            vocab_sizes,
            embedding_dim: spec.embedding_dim,
        },
        fitted,
    })
}

/// Parameters of the Gaussian multi-task generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub tasks: usize,
    /// Pairwise cosine similarity of the task weight vectors, in `[0, 1]`.
    pub correlation: f64,
    pub dim: usize,
    /// Standard deviation of the label noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(rows: usize, tasks: usize, correlation: f64, seed: u64) -> Self {
        Self {
            rows,
            tasks,
            correlation,
            dim: 16,
            noise: 0.05,
            seed,
        }
    }
}

/// Unit task directions with pairwise cosine exactly `rho`:
/// `w_t = √ρ·u₀ + √(1−ρ)·u_t` over an orthonormal set `u₀..u_T`.
pub fn task_directions(tasks: usize, dim: usize, rho: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("correlation {rho} outside [0, 1]")));
    }
    if tasks == 0 || dim < tasks + 1 {
        return Err(Error::Config(format!(
            "{tasks} tasks need a feature dimension of at least {}",
            tasks + 1
        )));
    }
    let mut stream = rng::stream(seed, 0xD1EC);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(tasks + 1);
    while basis.len() < tasks + 1 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut stream)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let (a, b) = (libm::sqrt(rho), libm::sqrt(1.0 - rho));
    Ok((1..=tasks)
        .map(|t| basis[0].iter().zip(&basis[t]).map(|(u0, ut)| a * u0 + b * ut).collect())
        .collect())
}

/// Features `x ~ N(0, I)`, labels `1[w_tᵀx + ε > 0]`, `ε ~ N(0, noise²)`.
pub fn make_synthetic(config: &SyntheticConfig) -> Result<TaskDataset> {
    if config.rows == 0 {
        return Err(Error::Config("synthetic dataset needs at least one row".into()));
    }
    let directions = task_directions(config.tasks, config.dim, config.correlation, config.seed)?;
    let mut stream = rng::stream(config.seed, 0xDA7A);
    let mut data = Vec::with_capacity(config.rows * config.dim);
    let mut labels = vec![Vec::with_capacity(config.rows); config.tasks];
    for _ in 0..config.rows {
        let x: Vec<f64> = (0..config.dim).map(|_| rng::normal(&mut stream)).collect();
        for (t, w) in directions.iter().enumerate() {
            let s: f64 = w.iter().zip(&x).map(|(p, q)| p * q).sum();
            let eps = config.noise * rng::normal(&mut stream);
            labels[t].push(if s + eps > 0.0 { 1.0 } else { 0.0 });
        }
        data.extend(x);
    }
    Ok(TaskDataset {
        name: format!("synthetic-t{}-rho{}", config.tasks, config.correlation),
        features: Tensor::new(&[config.rows, config.dim], data)?,
        tasks: (0..config.tasks).map(|t| format!("task{}", t + 1)).collect(),
        labels,
        splits: assign_splits(config.rows, config.seed),
        layout: InputLayout::dense(config.dim),
        fitted: Vec::new(),
    })
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::Data(format!("dataset has no label for task `{task}`")))
    }

    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.splits[r] == split).collect()
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(rows),
            labels: self
                .labels
                .iter()
                .map(|l| rows.iter().map(|&r| l[r]).collect())
                .collect(),
        }
    }

    /// Row index chunks for one epoch; shuffled when `shuffle_seed` is set.
    pub fn batches(&self, split: Split, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
        let mut rows = self.rows(split);
        if let Some(seed) = shuffle_seed {
            rows.shuffle(&mut rng::stream(seed, 0xBA7C));
        }
        rows.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    /// Keeps only the named tasks, in the given order.
    pub fn select_tasks(&self, tasks: &[String]) -> Result<TaskDataset> {
        let idx = tasks.iter().map(|t| self.task_index(t)).collect::<Result<Vec<_>>>()?;
        let mut out = self.clone();
        out.tasks = tasks.to_vec();
        out.labels = idx.iter().map(|&i| self.labels[i].clone()).collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn spec(cols: &[(&str, ColumnRole)]) -> FeatureSpec {
        FeatureSpec {
            columns: cols
                .iter()
                .map(|(n, r)| ColumnSpec {
                    name: n.to_string(),
                    role: r.clone(),
                })
                .collect(),
            embedding_dim: 4,
        }
    }

    #[test]
    fn all_dense_width_is_dense_count() {
        let header = s(&["a", "b", "y"]);
        let rows: Vec<Vec<String>> = (0..20)
            .map(|i| s(&[&i.to_string(), &(i * 2).to_string(), if i % 2 == 0 { "1" } else { "0" }]))
            .collect();
        let sp = spec(&[
            ("a", ColumnRole::Dense),
            ("b", ColumnRole::Dense),
            ("y", ColumnRole::Label("t".into())),
        ]);
        let ds = encode_table("d", &header, &rows, &sp, 1).unwrap();
        assert_eq!(ds.features.cols(), 2);
        assert_eq!(ds.layout.embedded_width(), 2);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let header = s(&["c", "y"]);
        let rows: Vec<Vec<String>> = (0..10).map(|i| s(&["3.5", if i < 5 { "1" } else { "0" }])).collect();
        let sp = spec(&[("c", ColumnRole::Dense), ("y", ColumnRole::Label("t".into()))]);
        let ds = encode_table("d", &header, &rows, &sp, 1).unwrap();
        assert!(ds.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors_are_distinct() {
        let header = s(&["a", "y"]);
        let good = spec(&[("a", ColumnRole::Dense), ("y", ColumnRole::Label("t".into()))]);
        let missing = spec(&[("zz", ColumnRole::Dense), ("y", ColumnRole::Label("t".into()))]);
        let rows = vec![s(&["1", "1"]), s(&["2", "0"])];
        assert!(matches!(
            encode_table("d", &header, &rows, &missing, 0),
            Err(Error::Data(m)) if m.contains("missing column `zz`")
        ));
        let bad_label = vec![s(&["1", "1"]), s(&["2", "2"])];
        assert!(matches!(
            encode_table("d", &header, &bad_label, &good, 0),
            Err(Error::Data(m)) if m.contains("row 2") && m.contains("not binary")
        ));
        assert!(matches!(
            encode_table("d", &header, &[], &good, 0),
            Err(Error::Data(m)) if m.contains("no data rows")
        ));
    }

    #[test]
    fn unseen_category_maps_to_oov() {
        let header = s(&["k", "y"]);
        let mut rows: Vec<Vec<String>> = (0..50).map(|i| s(&[if i % 2 == 0 { "a" } else { "b" }, "1"])).collect();
        rows[0][1] = "0".into();
        let sp = spec(&[("k", ColumnRole::Sparse), ("y", ColumnRole::Label("t".into()))]);
        let ds = encode_table("d", &header, &rows, &sp, 9).unwrap();
        // Find a non-train row and give it a fresh category.
        let r = ds.rows(Split::Test)[0];
        rows[r][0] = "zzz".into();
        let ds2 = encode_table("d", &header, &rows, &sp, 9).unwrap();
        assert_eq!(ds2.features.get(r, 0), 0.0);
        assert_eq!(ds2.layout.vocab_sizes, vec![3]);
    }

    #[test]
    fn normalisation_uses_train_only() {
        let header = s(&["a", "y"]);
        let rows: Vec<Vec<String>> = (0..100).map(|i| s(&[&(i * i).to_string(), "1"])).collect();
        let sp = spec(&[("a", ColumnRole::Dense), ("y", ColumnRole::Label("t".into()))]);
        let ds = encode_table("d", &header, &rows, &sp, 4).unwrap();
        let train = ds.rows(Split::Train);
        let mean: f64 = train.iter().map(|&r| ds.features.get(r, 0)).sum::<f64>() / train.len() as f64;
        assert!(mean.abs() < 1e-12);
        let test = ds.rows(Split::Test);
        let test_mean: f64 = test.iter().map(|&r| ds.features.get(r, 0)).sum::<f64>() / test.len() as f64;
        assert!(test_mean.abs() > 1e-6);
    }

    #[test]
    fn splits_are_deterministic() {
        assert_eq!(assign_splits(1000, 5), assign_splits(1000, 5));
        assert_ne!(assign_splits(1000, 5), assign_splits(1000, 6));
        let s = assign_splits(1000, 5);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 200);
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 80);
    }

    #[test]
    fn directions_have_requested_cosine() {
        for &rho in &[0.0, 0.3, 0.8, 1.0] {
            let w = task_directions(4, 16, rho, 3).unwrap();
            for i in 0..4 {
                let n: f64 = w[i].iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
                for j in 0..i {
                    let c: f64 = w[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum();
                    assert!((c - rho).abs() < 1e-12, "rho {rho}: {c}");
                }
            }
        }
    }

    #[test]
    fn perfectly_correlated_tasks_mostly_agree() {
        let ds = make_synthetic(&SyntheticConfig::new(20_000, 2, 1.0, 11)).unwrap();
        let agree = ds.labels[0].iter().zip(&ds.labels[1]).filter(|(a, b)| a == b).count();
        assert!(agree as f64 / 20_000.0 > 0.95);
    }

    #[test]
    fn uncorrelated_tasks_have_near_zero_label_correlation() {
        let ds = make_synthetic(&SyntheticConfig::new(100_000, 2, 0.0, 12)).unwrap();
        let (a, b) = (&ds.labels[0], &ds.labels[1]);
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let sa = libm::sqrt(a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n);
        let sb = libm::sqrt(b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n);
        assert!((cov / (sa * sb)).abs() < 0.05);
    }

    #[test]
    fn four_tasks_give_four_label_columns() {
        let ds = make_synthetic(&SyntheticConfig::new(100, 4, 0.5, 1)).unwrap();
        assert_eq!(ds.labels.len(), 4);
        assert_eq!(ds.tasks.len(), 4);
    }
}
