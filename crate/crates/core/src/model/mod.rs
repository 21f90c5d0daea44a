//! Edge classifiers over cell graphs in three input variants, one model per
//! relation direction.

mod checkpoint;
pub mod check;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use checkpoint::{from_bytes, load_checkpoint, load_checkpoint_as, save_checkpoint, to_bytes, CHECKPOINT_VERSION};

use crate::cellgraph::{CellGraph, DEFAULT_K};
use crate::error::{Error, Result};
use crate::features::{encode_text, preprocess_image, Vocabulary, IMAGE_SIZE};
use crate::nn::graph::softmax_in_place;
use crate::nn::layers::{
    conv_stack, cross_entropy, graph_conv, mlp, normalized_adjacency, recurrent_encode, xavier_uniform,
    LstmParams, MlpParams,
};
use crate::nn::{Bindings, Graph, ParamSet, Real, Tensor, Var};
use crate::raster::Grayscale2D;
use crate::rng::Stream;
use crate::table::{CellId, EdgeSample, TableInstance};

/// Which node features feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Geometry only.
    Pos,
    /// Geometry and text.
    PosText,
    /// Geometry, text, and sampled image features.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Pos, Variant::PosText, Variant::Full];

    pub fn uses_text(self) -> bool {
        self != Variant::Pos
    }

    pub fn uses_image(self) -> bool {
        self == Variant::Full
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Pos => "GFTE-pos",
            Variant::PosText => "GFTE-pos+text",
            Variant::Full => "GFTE",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(Variant::Pos),
            "pos_text" | "pos+text" => Ok(Variant::PosText),
            "full" => Ok(Variant::Full),
            _ => Err(Error::Config(format!("unknown variant {s:?} (pos, pos_text, full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Same-row relation.
    Horizontal,
    /// Same-column relation.
    Vertical,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Horizontal, Direction::Vertical];

    pub fn label(self, e: &EdgeSample) -> bool {
        match self {
            Direction::Horizontal => e.label_h,
            Direction::Vertical => e.label_v,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Direction::Horizontal => "h",
            Direction::Vertical => "v",
        }
    }
}

/// What the edge head sees for each endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeInputMode {
    /// Graph-network output plus the sampled image feature.
    GcnImage,
    /// As above, plus the raw position and text encodings.
    #[default]
    GcnImageRaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub gcn_hidden: usize,
    pub text_hidden: usize,
    pub embed_dim: usize,
    pub mlp_hidden: usize,
    pub img_channels: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            gcn_hidden: 64,
            text_hidden: 64,
            embed_dim: 16,
            mlp_hidden: 128,
            img_channels: 32,
        }
    }
}

pub const POS_DIM: usize = 8;
/// Initial forget-gate bias, so text survives the trailing padding steps.
pub const FORGET_BIAS_INIT: f32 = 2.0;
const CONV_CHANNELS: [usize; 2] = [8, 16];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub direction: Direction,
    pub k: usize,
    pub dims: ModelDims,
    pub edge_input_mode: EdgeInputMode,
    /// Present exactly when the variant reads text.
    pub vocab_fingerprint: Option<String>,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Builds a config, zeroing the dimensions the variant does not use.
    pub fn new(
        variant: Variant,
        direction: Direction,
        mut dims: ModelDims,
        vocab: Option<&Vocabulary>,
        seed: u64,
    ) -> Result<Self> {
        if !variant.uses_text() {
            dims.text_hidden = 0;
            dims.embed_dim = 0;
        }
        if !variant.uses_image() {
            dims.img_channels = 0;
        }
        let vocab = if variant.uses_text() {
            Some(vocab.ok_or_else(|| {
                Error::Usage(format!("variant {} needs a vocabulary", variant.label()))
            })?)
        } else {
            None
        };
        let cfg = Self {
            variant,
            direction,
            k: DEFAULT_K,
            dims,
            edge_input_mode: EdgeInputMode::default(),
            vocab_fingerprint: vocab.map(Vocabulary::fingerprint),
            vocab_size: vocab.map_or(0, Vocabulary::len),
            max_len: vocab.map_or(0, |v| v.max_len),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if d.gcn_hidden == 0 || d.mlp_hidden == 0 {
            return bad("gcn_hidden and mlp_hidden must be positive".into());
        }
        let text = self.variant.uses_text();
        let text_dims = [d.text_hidden, d.embed_dim, self.vocab_size, self.max_len];
        if text && text_dims.contains(&0) {
            return bad("text variants need positive text_hidden, embed_dim, vocab_size, max_len".into());
        }
        if !text && text_dims.iter().any(|x| *x != 0) {
            return bad("the pos variant has no text dimensions".into());
        }
        if text != self.vocab_fingerprint.is_some() {
            return bad("vocab fingerprint must be present exactly for text variants".into());
        }
        if self.variant.uses_image() != (d.img_channels > 0) {
            return bad("img_channels must be positive exactly for the full variant".into());
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }

    fn node_in_dim(&self) -> usize {
        POS_DIM + self.dims.text_hidden
    }

    /// Width of one endpoint's representation at the edge head.
    fn node_out_dim(&self) -> usize {
        let raw = match self.edge_input_mode {
            EdgeInputMode::GcnImage => 0,
            EdgeInputMode::GcnImageRaw => self.node_in_dim(),
        };
        self.dims.gcn_hidden + self.dims.img_channels + raw
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn architecture(&self) -> Vec<(String, Vec<usize>)> {
        let d = &self.dims;
        let mut a: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |n: &str, s: Vec<usize>| a.push((n.to_string(), s));
        if self.variant.uses_text() {
            let h = d.text_hidden;
            push("embed.weight", vec![self.vocab_size, d.embed_dim]);
            push("lstm.w_ih", vec![d.embed_dim, 4 * h]);
            push("lstm.w_hh", vec![h, 4 * h]);
            push("lstm.bias", vec![4 * h]);
        }
        if self.variant.uses_image() {
            let ch = [1, CONV_CHANNELS[0], CONV_CHANNELS[1], d.img_channels];
            for i in 0..3 {
                push(&format!("conv{}.weight", i + 1), vec![ch[i + 1], ch[i], 3, 3]);
                push(&format!("conv{}.bias", i + 1), vec![ch[i + 1]]);
            }
        }
        push("gcn1.weight", vec![self.node_in_dim(), d.gcn_hidden]);
        push("gcn1.bias", vec![d.gcn_hidden]);
        push("gcn2.weight", vec![d.gcn_hidden, d.gcn_hidden]);
        push("gcn2.bias", vec![d.gcn_hidden]);
        push("mlp1.weight", vec![2 * self.node_out_dim(), d.mlp_hidden]);
        push("mlp1.bias", vec![d.mlp_hidden]);
        push("mlp2.weight", vec![d.mlp_hidden, 2]);
        push("mlp2.bias", vec![2]);
        a
    }
}

/// Per-table inputs computed once and reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedTable {
    pub source_id: String,
    pub node_ids: Vec<CellId>,
    pub pos: Vec<[f64; POS_DIM]>,
    /// Image sampling point per node.
    pub centers: Vec<(f64, f64)>,
    /// Empty when prepared without a vocabulary.
    pub text_ids: Vec<Vec<usize>>,
    pub vocab_fingerprint: Option<String>,
    /// Preprocessed `256 x 256` image, when requested.
    pub image: Option<Grayscale2D>,
    pub edges: Vec<EdgeSample>,
    pub pairs: Vec<(usize, usize)>,
}

impl PreparedTable {
    /// Checks that `g` was built from `t` and gathers node inputs.
    pub fn new(
        t: &TableInstance,
        g: &CellGraph,
        vocab: Option<&Vocabulary>,
        with_image: bool,
    ) -> Result<Self> {
        let cell_ids: BTreeSet<CellId> = t.cells.iter().map(|c| c.id).collect();
        let node_ids: Vec<CellId> = g.nodes.iter().map(|n| n.cell_id).collect();
        let node_set: BTreeSet<CellId> = node_ids.iter().copied().collect();
        if node_set != cell_ids || node_set.len() != node_ids.len() {
            return Err(Error::Graph(format!(
                "graph nodes do not match the cells of table {}",
                t.source_id
            )));
        }
        let pairs = g.index_pairs()?;
        let text_ids = match vocab {
            Some(v) => node_ids
                .iter()
                .map(|id| encode_text(v, &t.cell(*id).expect("checked above").text))
                .collect(),
            None => Vec::new(),
        };
        let image = if with_image {
            Some(preprocess_image(&t.image)?)
        } else {
            None
        };
        Ok(Self {
            source_id: t.source_id.clone(),
            pos: g.nodes.iter().map(|n| n.position_vector()).collect(),
            centers: g.nodes.iter().map(|n| (n.rel_cx, n.rel_cy)).collect(),
            node_ids,
            text_ids,
            vocab_fingerprint: vocab.map(Vocabulary::fingerprint),
            image,
            edges: g.edges.clone(),
            pairs,
        })
    }

    pub fn labels(&self, d: Direction) -> Vec<bool> {
        self.edges.iter().map(|e| d.label(e)).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Builds `2E x 2` logits: rows `0..E` score each edge as `(src, dst)`,
/// rows `E..2E` as `(dst, src)`.
pub fn edge_logits<T: Real>(
    cfg: &ModelConfig,
    g: &mut Graph<T>,
    b: &Bindings,
    prep: &PreparedTable,
) -> Result<Var> {
    check_compatible(cfg, prep)?;
    let n = prep.node_ids.len();
    let flat: Vec<f64> = prep.pos.iter().flatten().copied().collect();
    let pos = g.constant(Tensor::from_f64(vec![n, POS_DIM], &flat)?);
    let node_in = if cfg.variant.uses_text() {
        let p = LstmParams {
            embed: b.get("embed.weight")?,
            w_ih: b.get("lstm.w_ih")?,
            w_hh: b.get("lstm.w_hh")?,
            bias: b.get("lstm.bias")?,
        };
        let enc = recurrent_encode(g, &p, &prep.text_ids)?;
        g.concat(&[pos, enc])?
    } else {
        pos
    };
    let adj = g.constant(normalized_adjacency::<T>(n, &prep.pairs)?);
    let h = graph_conv(g, node_in, adj, b.get("gcn1.weight")?, b.get("gcn1.bias")?)?;
    let h = graph_conv(g, h, adj, b.get("gcn2.weight")?, b.get("gcn2.bias")?)?;
    let mut parts = vec![h];
    if cfg.variant.uses_image() {
        let img = prep.image.as_ref().expect("checked by check_compatible");
        let data = img.data().iter().map(|v| T::of(f64::from(*v))).collect();
        let img = g.constant(Tensor::new(vec![1, IMAGE_SIZE, IMAGE_SIZE], data)?);
        let layers = [
            (b.get("conv1.weight")?, b.get("conv1.bias")?),
            (b.get("conv2.weight")?, b.get("conv2.bias")?),
            (b.get("conv3.weight")?, b.get("conv3.bias")?),
        ];
        let fmap = conv_stack(g, img, &layers)?;
        parts.push(g.grid_sample(fmap, &prep.centers)?);
    }
    if cfg.edge_input_mode == EdgeInputMode::GcnImageRaw {
        parts.push(node_in);
    }
    let node = if parts.len() == 1 { h } else { g.concat(&parts)? };
    let (src, dst): (Vec<usize>, Vec<usize>) = prep.pairs.iter().copied().unzip();
    let left: Vec<usize> = src.iter().chain(&dst).copied().collect();
    let right: Vec<usize> = dst.iter().chain(&src).copied().collect();
    let l = g.gather_rows(node, &left)?;
    let r = g.gather_rows(node, &right)?;
    let x = g.concat(&[l, r])?;
    let head = MlpParams {
        w1: b.get("mlp1.weight")?,
        b1: b.get("mlp1.bias")?,
        w2: b.get("mlp2.weight")?,
        b2: b.get("mlp2.bias")?,
    };
    mlp(g, x, &head)
}

/// Mean cross-entropy over both orderings of every edge. Returns the logits
/// and the loss.
pub fn edge_loss<T: Real>(
    cfg: &ModelConfig,
    g: &mut Graph<T>,
    b: &Bindings,
    prep: &PreparedTable,
    weights: Option<&[f64]>,
) -> Result<(Var, Var)> {
    if prep.edges.is_empty() {
        return Err(Error::Graph(format!("table {} has no edges", prep.source_id)));
    }
    let logits = edge_logits(cfg, g, b, prep)?;
    let labels = prep.labels(cfg.direction);
    let both: Vec<bool> = labels.iter().chain(&labels).copied().collect();
    let w2: Option<Vec<f64>> = weights.map(|w| w.iter().chain(w).copied().collect());
    let loss = cross_entropy(g, logits, &both, w2.as_deref())?;
    Ok((logits, loss))
}

fn check_compatible(cfg: &ModelConfig, prep: &PreparedTable) -> Result<()> {
    if cfg.variant.uses_text() {
        if prep.vocab_fingerprint != cfg.vocab_fingerprint {
            return Err(Error::ConfigMismatch(format!(
                "table {} was encoded with vocabulary {:?}, model expects {:?}",
                prep.source_id, prep.vocab_fingerprint, cfg.vocab_fingerprint
            )));
        }
        if prep.text_ids.iter().any(|s| s.len() != cfg.max_len) || prep.text_ids.len() != prep.node_ids.len() {
            return Err(Error::ConfigMismatch(format!(
                "table {} has no text encoding of length {}",
                prep.source_id, cfg.max_len
            )));
        }
    }
    if cfg.variant.uses_image() && prep.image.is_none() {
        return Err(Error::ConfigMismatch(format!(
            "table {} was prepared without its image",
            prep.source_id
        )));
    }
    Ok(())
}

/// Averages the class-1 softmax probability of the two orderings.
fn symmetric_probabilities<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let e = logits.shape()[0] / 2;
    let p1 = |i: usize| {
        let mut row = [logits.at2(i, 0), logits.at2(i, 1)];
        softmax_in_place(&mut row);
        row[1].as_f64()
    };
    (0..e).map(|i| (p1(i) + p1(i + e)) / 2.0).collect()
}

/// A trained or freshly initialized edge classifier. Immutable during
/// inference, so shared references may run forward passes concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub vocab: Option<Vocabulary>,
}

impl Model {
    /// Uniform fan-scaled weights and zero biases from the config seed.
    pub fn init(config: ModelConfig, vocab: Option<Vocabulary>) -> Result<Self> {
        config.validate()?;
        if config.vocab_fingerprint != vocab.as_ref().map(Vocabulary::fingerprint) {
            return Err(Error::ConfigMismatch("vocabulary does not match the config".into()));
        }
        let mut rng = Stream::new(config.seed, &format!("init-{}", config.direction.short()));
        let mut params = ParamSet::new();
        for (name, shape) in config.architecture() {
            let t = if name == "lstm.bias" {
                let h = config.dims.text_hidden;
                let mut b = Tensor::zeros(shape);
                b.data_mut()[h..2 * h].fill(FORGET_BIAS_INIT);
                b
            } else if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                let (fan_in, fan_out) = match shape.as_slice() {
                    [a, b] => (*a, *b),
                    [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
                    _ => unreachable!("weights are matrices or conv kernels"),
                };
                xavier_uniform(&mut rng, shape, fan_in, fan_out)
            };
            params.insert(name, t)?;
        }
        Ok(Self {
            config,
            params,
            vocab,
        })
    }

    /// Inputs this model needs for `t` over `g`.
    pub fn prepare(&self, t: &TableInstance, g: &CellGraph) -> Result<PreparedTable> {
        PreparedTable::new(t, g, self.vocab.as_ref(), self.config.variant.uses_image())
    }

    /// Per-edge same-relation probability, symmetric in the endpoints.
    pub fn edge_probabilities(&self, prep: &PreparedTable) -> Result<Vec<f64>> {
        if prep.edges.is_empty() {
            check_compatible(&self.config, prep)?;
            return Ok(Vec::new());
        }
        let mut g = Graph::<f32>::new();
        let b = self.params.bind(&mut g);
        let logits = edge_logits(&self.config, &mut g, &b, prep)?;
        let probs = symmetric_probabilities(g.value(logits));
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite probability on {}", prep.source_id)));
        }
        Ok(probs)
    }

    pub fn forward(&self, t: &TableInstance, g: &CellGraph) -> Result<Vec<f64>> {
        self.edge_probabilities(&self.prepare(t, g)?)
    }

    /// Loss and probabilities without a backward pass.
    pub fn loss_and_probabilities(&self, prep: &PreparedTable, weights: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::<f32>::new();
        let b = self.params.bind(&mut g);
        let (logits, loss) = edge_loss(&self.config, &mut g, &b, prep, weights)?;
        let value = f64::from(g.value(loss).item());
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} on table {}", prep.source_id)));
        }
        Ok((value, symmetric_probabilities(g.value(logits))))
    }

    /// Loss, parameter gradients, and the probabilities seen on this step.
    pub fn loss_and_grads(
        &self,
        prep: &PreparedTable,
        weights: Option<&[f64]>,
    ) -> Result<(f64, ParamSet<f32>, Vec<f64>)> {
        let mut g = Graph::<f32>::new();
        let b = self.params.bind(&mut g);
        let (logits, loss) = edge_loss(&self.config, &mut g, &b, prep, weights)?;
        let value = f64::from(g.value(loss).item());
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} on table {}", prep.source_id)));
        }
        let probs = symmetric_probabilities(g.value(logits));
        let mut grads = g.backward(loss)?;
        Ok((value, self.params.collect_grads(&b, &mut grads), probs))
    }
}

/// Thresholds the probabilities of both direction models (`p >= threshold`
/// is positive) into labeled edges.
pub fn predict_prepared(
    h: &Model,
    v: &Model,
    prep_h: &PreparedTable,
    prep_v: &PreparedTable,
    threshold: f64,
) -> Result<Vec<EdgeSample>> {
    if h.config.direction != Direction::Horizontal || v.config.direction != Direction::Vertical {
        return Err(Error::ConfigMismatch(
            "expected a horizontal and a vertical model, in that order".into(),
        ));
    }
    if prep_h.edges.len() != prep_v.edges.len()
        || prep_h.edges.iter().zip(&prep_v.edges).any(|(a, b)| (a.src, a.dst) != (b.src, b.dst))
    {
        return Err(Error::Graph("direction inputs disagree on the edge set".into()));
    }
    let ph = h.edge_probabilities(prep_h)?;
    let pv = v.edge_probabilities(prep_v)?;
    Ok(prep_h
        .edges
        .iter()
        .zip(ph.iter().zip(&pv))
        .map(|(e, (a, b))| EdgeSample {
            label_h: *a >= threshold,
            label_v: *b >= threshold,
            ..*e
        })
        .collect())
}

pub fn predict_relations(
    h: &Model,
    v: &Model,
    t: &TableInstance,
    g: &CellGraph,
    threshold: f64,
) -> Result<Vec<EdgeSample>> {
    let ph = h.prepare(t, g)?;
    let pv = if v.config.variant == h.config.variant && v.vocab == h.vocab {
        ph.clone()
    } else {
        v.prepare(t, g)?
    };
    predict_prepared(h, v, &ph, &pv, threshold)
}

#[cfg(test)]
mod tests;
