//! Binary model files.
//!
//! A single-task model file (`EMM1`) is
//!
//! ```text
//! magic "EMM1" | version u32 | id (u16 len + utf8) | task (u16 len + utf8)
//! layer count u32 | per layer: kind u8, in u32, out u32
//!     embedding layers add: n_dense u32, embedding_dim u32,
//!     n_sparse u32, vocab sizes u32 × n_sparse
//! head index u32 | weights then bias of every dense layer, tables of
//! every embedding layer, as f64 little endian | crc32 u32
//! ```
//!
//! A fused model file (`EMMF`) holds a JSON header with the build settings,
//! the source pool as embedded `EMM1` blobs, and every parameter value in
//! model order, followed by a crc32.

use emm_core::akf::ScoreMode;
use emm_core::data::InputLayout;
use emm_core::deconstruct::{deconstruct_pool, find_common_layers, TailMode};
use emm_core::emm::{build_emm, EmmConfig, EmmModel};
use emm_core::layers::Dense;
use emm_core::model::{EmbeddingConcat, Layer, LayerKind, ModelPool, TrainedModel};
use emm_core::{ParamAlloc, Parameterized, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, FormatError, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"EMM1";
pub const FUSED_MAGIC: [u8; 4] = *b"EMMF";
pub const VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("name shorter than 64 KiB");
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.buf.extend_from_slice(b);
    }

    fn values(&mut self, t: &Tensor) {
        for v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and checksum, returning a reader over the body.
    fn open(bytes: &'a [u8], magic: [u8; 4]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::Truncated("magic"));
        }
        let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if found != magic {
            return Err(FormatError::BadMagic(found));
        }
        if bytes.len() < 12 {
            return Err(FormatError::Truncated("header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(Self { buf: body, pos: 8 })
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(FormatError::Truncated(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn str(&mut self, what: &'static str) -> Result<String, FormatError> {
        let n = self.u16(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| FormatError::Malformed(format!("{what} is not utf-8")))
    }

    fn bytes(&mut self, what: &'static str) -> Result<&'a [u8], FormatError> {
        let n = self.u32(what)?;
        self.take(n, what)
    }

    fn values(&mut self, shape: &[usize], what: &'static str) -> Result<Tensor, FormatError> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or(FormatError::Truncated(what))?, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| FormatError::Malformed(e.to_string()))
    }

    fn done(&self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

/// Encodes a single-task model.
pub fn encode_model(m: &TrainedModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(&MODEL_MAGIC);
    w.u32(VERSION as usize);
    w.str(&m.id);
    w.str(&m.task);
    w.u32(m.layers.len());
    for l in &m.layers {
        let s = l.signature();
        w.u8(s.kind as u8);
        w.u32(s.in_dim);
        w.u32(s.out_dim);
        if let Layer::Embedding(e) = l {
            w.u32(e.layout.n_dense);
            w.u32(e.layout.embedding_dim);
            w.u32(e.layout.vocab_sizes.len());
            for &v in &e.layout.vocab_sizes {
                w.u32(v);
            }
        }
    }
    w.u32(m.head_index);
    for l in &m.layers {
        for p in l.params() {
            w.values(&p.value);
        }
    }
    w.finish()
}

/// Decodes a single-task model. Parameter ids are drawn from `alloc`.
pub fn decode_model(bytes: &[u8], alloc: &mut ParamAlloc) -> Result<TrainedModel, FormatError> {
    let mut r = Reader::open(bytes, MODEL_MAGIC)?;
    let id = r.str("model id")?;
    let task = r.str("task name")?;
    let n = r.u32("layer count")?;
    if n > 1 << 16 {
        return Err(FormatError::Malformed(format!("{n} layers")));
    }
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = r.u8("layer kind")?;
        let kind = LayerKind::from_u8(kind).ok_or_else(|| FormatError::Malformed(format!("layer kind {kind}")))?;
        let in_dim = r.u32("layer input width")?;
        let out_dim = r.u32("layer output width")?;
        let layout = if kind == LayerKind::EmbeddingConcat {
            let n_dense = r.u32("embedding layout")?;
            let embedding_dim = r.u32("embedding layout")?;
            let n_sparse = r.u32("embedding layout")?;
            let vocab_sizes = (0..n_sparse)
                .map(|_| r.u32("vocabulary size"))
                .collect::<Result<Vec<_>, _>>()?;
            Some(InputLayout {
                n_dense,
                vocab_sizes,
                embedding_dim,
            })
        } else {
            None
        };
        shapes.push((kind, in_dim, out_dim, layout));
    }
    let head_index = r.u32("head index")?;
    let mut layers = Vec::with_capacity(n);
    for (kind, in_dim, out_dim, layout) in shapes {
        let layer = match kind {
            LayerKind::Dense => {
                let mut d = Dense::new(alloc, in_dim, out_dim, emm_core::Init::Zeros);
                d.weight.value = r.values(&[in_dim, out_dim], "dense weights")?;
                d.bias.value = r.values(&[1, out_dim], "dense bias")?;
                Layer::Dense(d)
            }
            LayerKind::Relu => Layer::Relu(in_dim),
            LayerKind::Sigmoid => Layer::Sigmoid(in_dim),
            LayerKind::EmbeddingConcat => {
                let layout = layout.expect("read above");
                let mut e = EmbeddingConcat::new(alloc, &layout);
                for t in &mut e.tables {
                    let shape = t.value.shape().to_vec();
                    t.value = r.values(&shape, "embedding table")?;
                }
                if e.in_dim() != in_dim || e.out_dim() != out_dim {
                    return Err(FormatError::Malformed(
                        "embedding layout disagrees with its widths".into(),
                    ));
                }
                Layer::Embedding(e)
            }
        };
        layers.push(layer);
    }
    r.done()?;
    let model = TrainedModel {
        id,
        task,
        layers,
        head_index,
    };
    model.validate().map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok(model)
}

/// Build settings stored with a fused model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedHeader {
    pub tasks: Vec<String>,
    pub tail_mode: String,
    pub seed: u64,
    pub use_pretrained: bool,
    pub use_mtm: bool,
    pub score_mode: String,
    pub tower_hidden: Option<Vec<usize>>,
}

pub fn parse_tail_mode(s: &str) -> Option<TailMode> {
    match s {
        "strict" | "keep" => Some(TailMode::Strict),
        "adapter" => Some(TailMode::Adapter),
        "drop" => Some(TailMode::Drop),
        _ => None,
    }
}

pub fn parse_score_mode(s: &str) -> Option<ScoreMode> {
    match s {
        "self" => Some(ScoreMode::SelfScore),
        "cross" => Some(ScoreMode::Cross),
        _ => None,
    }
}

/// Encodes a fused model together with the pool it was built from.
pub fn encode_fused(model: &EmmModel, pool: &ModelPool, tail_mode: TailMode) -> Vec<u8> {
    let header = FusedHeader {
        tasks: model.tasks.clone(),
        tail_mode: tail_mode.name().into(),
        seed: model.config.seed,
        use_pretrained: model.config.use_pretrained,
        use_mtm: model.config.use_mtm,
        score_mode: model.config.score_mode.name().into(),
        tower_hidden: model.config.tower_hidden.clone(),
    };
    let mut w = Writer::default();
    w.buf.extend_from_slice(&FUSED_MAGIC);
    w.u32(VERSION as usize);
    w.bytes(serde_json::to_string(&header).expect("header serializes").as_bytes());
    w.u32(pool.models.len());
    for m in &pool.models {
        w.bytes(&encode_model(m));
    }
    let params = model.params();
    w.u32(params.len());
    for p in params {
        w.values(&p.value);
    }
    w.finish()
}

/// Decodes a fused model by rebuilding it from its pool and settings and
/// then restoring every parameter value.
pub fn decode_fused(bytes: &[u8]) -> Result<(EmmModel, ModelPool)> {
    let mut r = Reader::open(bytes, FUSED_MAGIC)?;
    let header: FusedHeader =
        serde_json::from_slice(r.bytes("header")?).map_err(|e| FormatError::Malformed(format!("header: {e}")))?;
    let n = r.u32("pool size")?;
    let mut alloc = ParamAlloc::new(0);
    let mut models = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        models.push(decode_model(r.bytes("pool model")?, &mut alloc)?);
    }
    let pool = ModelPool::with_tasks(header.tasks.clone(), models)?;
    let tail_mode = parse_tail_mode(&header.tail_mode)
        .ok_or_else(|| FormatError::Malformed(format!("tail mode `{}`", header.tail_mode)))?;
    let score_mode = parse_score_mode(&header.score_mode)
        .ok_or_else(|| FormatError::Malformed(format!("score mode `{}`", header.score_mode)))?;
    let common = find_common_layers(&pool)?;
    let set = deconstruct_pool(&pool, &common, tail_mode)?;
    let config = EmmConfig {
        seed: header.seed,
        use_pretrained: header.use_pretrained,
        use_mtm: header.use_mtm,
        score_mode,
        tower_hidden: header.tower_hidden,
    };
    let mut model = build_emm(&set, &config)?;
    let count = r.u32("parameter count")?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(FormatError::Malformed(format!("{count} stored parameters, model has {}", params.len())).into());
    }
    for p in params.iter_mut() {
        let shape = p.value.shape().to_vec();
        p.value = r.values(&shape, "parameter values")?;
    }
    r.done()?;
    Ok((model, pool))
}

pub fn read_model(path: &std::path::Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(decode_model(&bytes, &mut ParamAlloc::new(0))?)
}

pub fn write_bytes(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}
