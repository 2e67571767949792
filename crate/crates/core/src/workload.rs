//! ViT model description and its expansion into a layer graph.
//!
//! Static VMM layers hold pretrained weights and run on ACIM. Dynamic `QKᵀ` and
//! `PV` operators run on DCIM. Everything elementwise is a vector operator.
//! FFN weights are split into `k = D/d` square sub-layers so that every static
//! layer has shape `d × d`.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_bits() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTModelSpec {
    pub name: String,
    /// Embedding dimension `d`.
    pub embed_dim: u32,
    /// FFN hidden dimension `D`.
    pub ffn_dim: u32,
    /// Transformer block count `N`.
    pub blocks: u32,
    /// Attention head count `H`.
    pub heads: u32,
    /// Sequence length `L` in tokens.
    pub seq_len: u32,
    #[serde(default = "default_bits")]
    pub weight_bits: u32,
    #[serde(default = "default_bits")]
    pub act_bits: u32,
}

impl ViTModelSpec {
    pub fn new(name: &str, embed_dim: u32, ffn_dim: u32, blocks: u32, heads: u32, seq_len: u32) -> Self {
        Self {
            name: name.to_string(),
            embed_dim,
            ffn_dim,
            blocks,
            heads,
            seq_len,
            weight_bits: 8,
            act_bits: 8,
        }
    }

    pub fn vit_s16() -> Self {
        Self::new("ViT-S/16", 384, 1536, 12, 6, 197)
    }

    pub fn vit_b16() -> Self {
        Self::new("ViT-B/16", 768, 3072, 12, 12, 197)
    }

    pub fn vit_l16() -> Self {
        Self::new("ViT-L/16", 1024, 4096, 24, 16, 197)
    }

    /// The three evaluation models, smallest first.
    pub fn table() -> Vec<Self> {
        vec![Self::vit_s16(), Self::vit_b16(), Self::vit_l16()]
    }

    /// Looks up a preset by a loose name: `vit-b`, `ViT-B/16`, `vit_b16`, ...
    pub fn preset(name: &str) -> Option<Self> {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.trim_end_matches("16") {
            "vits" => Some(Self::vit_s16()),
            "vitb" => Some(Self::vit_b16()),
            "vitl" => Some(Self::vit_l16()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Model(format!("{}: {msg}", self.name)));
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if self.ffn_dim < self.embed_dim {
            return fail(format!(
                "ffn_dim ({}) must be at least embed_dim ({})",
                self.ffn_dim, self.embed_dim
            ));
        }
        if !self.ffn_dim.is_multiple_of(self.embed_dim) {
            return fail(format!(
                "ffn_dim ({}) is not a multiple of embed_dim ({}); FFN cannot be split into square sub-layers",
                self.ffn_dim, self.embed_dim
            ));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "heads ({}) must divide embed_dim ({})",
                self.heads, self.embed_dim
            ));
        }
        if self.blocks == 0 {
            return fail("blocks must be positive".into());
        }
        if self.seq_len == 0 {
            return fail("seq_len must be positive".into());
        }
        if self.weight_bits == 0 || self.act_bits == 0 {
            return fail("bit widths must be positive".into());
        }
        Ok(())
    }

    /// FFN partition factor `k = D / d`.
    pub fn ffn_ratio(&self) -> u32 {
        self.ffn_dim / self.embed_dim
    }

    pub fn head_dim(&self) -> u32 {
        self.embed_dim / self.heads
    }

    pub fn static_layer_count(&self) -> u64 {
        self.blocks as u64 * (4 + 2 * self.ffn_ratio() as u64)
    }

    pub fn dynamic_op_count(&self) -> u64 {
        2 * self.blocks as u64 * self.heads as u64
    }

    /// Total number of static weights across all transformer blocks.
    pub fn static_weight_count(&self) -> u64 {
        let d = self.embed_dim as u64;
        let ff = self.ffn_dim as u64;
        self.blocks as u64 * (4 * d * d + 2 * d * ff)
    }

    /// Bytes per activation element, rounded up.
    pub fn act_bytes(&self) -> u64 {
        (self.act_bits as u64).div_ceil(8)
    }

    /// Static layers in ascending `(block, kind, sub)` order.
    pub fn static_layers(&self) -> Vec<StaticLayer> {
        let d = self.embed_dim;
        let mut out = Vec::with_capacity(self.static_layer_count() as usize);
        for block in 0..self.blocks {
            for kind in [LayerKind::Wq, LayerKind::Wk, LayerKind::Wv, LayerKind::Wo] {
                out.push(StaticLayer::new(LayerId::mha(block, kind), d, d));
            }
            for kind in [LayerKind::W1, LayerKind::W2] {
                for sub in 0..self.ffn_ratio() {
                    out.push(StaticLayer::new(LayerId::ffn(block, kind, sub), d, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "WQ")]
    Wq,
    #[serde(rename = "WK")]
    Wk,
    #[serde(rename = "WV")]
    Wv,
    #[serde(rename = "WO")]
    Wo,
    #[serde(rename = "W1")]
    W1,
    #[serde(rename = "W2")]
    W2,
}

impl LayerKind {
    pub const MHA: [LayerKind; 4] = [LayerKind::Wq, LayerKind::Wk, LayerKind::Wv, LayerKind::Wo];

    pub fn is_ffn(self) -> bool {
        matches!(self, LayerKind::W1 | LayerKind::W2)
    }

    /// The projections that consume the same block input at the same time.
    pub fn is_qkv(self) -> bool {
        matches!(self, LayerKind::Wq | LayerKind::Wk | LayerKind::Wv)
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Wq => "WQ",
            LayerKind::Wk => "WK",
            LayerKind::Wv => "WV",
            LayerKind::Wo => "WO",
            LayerKind::W1 => "W1",
            LayerKind::W2 => "W2",
        }
    }
}

/// Unique identity of a static layer. Ordering is `(block, kind, sub)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LayerId {
    pub block: u32,
    pub kind: LayerKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sub: Option<u32>,
}

impl LayerId {
    pub fn mha(block: u32, kind: LayerKind) -> Self {
        debug_assert!(!kind.is_ffn());
        Self { block, kind, sub: None }
    }

    pub fn ffn(block: u32, kind: LayerKind, sub: u32) -> Self {
        debug_assert!(kind.is_ffn());
        Self {
            block,
            kind,
            sub: Some(sub),
        }
    }

    /// Two static layers are concurrent iff they are distinct Q/K/V projections of
    /// the same block. Every other pair is ordered by the dataflow.
    pub fn concurrent_with(&self, other: &LayerId) -> bool {
        self != other && self.block == other.block && self.kind.is_qkv() && other.kind.is_qkv()
    }
}

impl std::fmt::Display for LayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.sub {
            Some(sub) => write!(f, "b{}.{}_{}", self.block, self.kind.label(), sub),
            None => write!(f, "b{}.{}", self.block, self.kind.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StaticLayer {
    pub id: LayerId,
    pub rows: u32,
    pub cols: u32,
}

impl StaticLayer {
    pub fn new(id: LayerId, rows: u32, cols: u32) -> Self {
        Self { id, rows, cols }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DynamicKind {
    #[serde(rename = "QKT")]
    Qkt,
    #[serde(rename = "PV")]
    Pv,
}

/// A runtime-generated VMM of one head: `QKᵀ` (`L×d_h · d_h×L`) or `PV` (`L×L · L×d_h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DynamicOp {
    pub block: u32,
    pub head: u32,
    pub kind: DynamicKind,
    pub seq_len: u32,
    pub head_dim: u32,
}

impl DynamicOp {
    pub fn macs(&self) -> u64 {
        self.seq_len as u64 * self.seq_len as u64 * self.head_dim as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VectorKind {
    SoftmaxLocal,
    GlobalNorm,
    LayerNorm,
    Gelu,
    ResidualAdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorOp {
    pub block: u32,
    pub kind: VectorKind,
    pub elements: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    Static(StaticLayer),
    Dynamic(DynamicOp),
    Vector(VectorOp),
}

/// Dependency graph of one inference. Node indices are stable: nodes are emitted
/// block by block in dataflow order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGraph {
    pub nodes: Vec<Node>,
    /// `(from, to)` pairs: `to` consumes a result of `from`.
    pub edges: Vec<(usize, usize)>,
}

impl LayerGraph {
    pub fn static_layers(&self) -> impl Iterator<Item = &StaticLayer> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Static(l) => Some(l),
            _ => None,
        })
    }

    pub fn dynamic_ops(&self) -> impl Iterator<Item = &DynamicOp> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Dynamic(op) => Some(op),
            _ => None,
        })
    }

    pub fn vector_ops(&self) -> impl Iterator<Item = &VectorOp> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Vector(op) => Some(op),
            _ => None,
        })
    }

    pub fn index_of(&self, id: &LayerId) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| matches!(n, Node::Static(l) if l.id == *id))
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            succ[a].push(b);
        }
        succ
    }

    /// True if a directed path leads from `from` to `to`.
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        let succ = self.successors();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            for &m in &succ[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        false
    }
}

/// Expands a model into its layer graph.
pub fn expand_model(spec: &ViTModelSpec) -> Result<LayerGraph> {
    spec.validate()?;
    let d = spec.embed_dim;
    let k = spec.ffn_ratio();
    let l = spec.seq_len as u64;
    let ld = l * d as u64;
    let mut g = GraphBuilder::default();
    let mut prev: Option<usize> = None;

    for block in 0..spec.blocks {
        let vec_op = |kind, elements| Node::Vector(VectorOp { block, kind, elements });
        let q = g.push(Node::Static(StaticLayer::new(LayerId::mha(block, LayerKind::Wq), d, d)), prev);
        let k_ = g.push(Node::Static(StaticLayer::new(LayerId::mha(block, LayerKind::Wk), d, d)), prev);
        let v = g.push(Node::Static(StaticLayer::new(LayerId::mha(block, LayerKind::Wv), d, d)), prev);

        let qkt: Vec<usize> = (0..spec.heads)
            .map(|head| {
                let n = g.node(Node::Dynamic(DynamicOp {
                    block,
                    head,
                    kind: DynamicKind::Qkt,
                    seq_len: spec.seq_len,
                    head_dim: spec.head_dim(),
                }));
                g.edge(q, n);
                g.edge(k_, n);
                n
            })
            .collect();
        let softmax = g.node(vec_op(VectorKind::SoftmaxLocal, spec.heads as u64 * l * l));
        for &n in &qkt {
            g.edge(n, softmax);
        }
        let pv: Vec<usize> = (0..spec.heads)
            .map(|head| {
                let n = g.node(Node::Dynamic(DynamicOp {
                    block,
                    head,
                    kind: DynamicKind::Pv,
                    seq_len: spec.seq_len,
                    head_dim: spec.head_dim(),
                }));
                g.edge(softmax, n);
                g.edge(v, n);
                n
            })
            .collect();
        let norm = g.node(vec_op(VectorKind::GlobalNorm, ld));
        for &n in &pv {
            g.edge(n, norm);
        }
        let wo = g.push(Node::Static(StaticLayer::new(LayerId::mha(block, LayerKind::Wo), d, d)), Some(norm));
        let res1 = g.push(vec_op(VectorKind::ResidualAdd, ld), Some(wo));
        let mut last = g.push(vec_op(VectorKind::LayerNorm, ld), Some(res1));
        for sub in 0..k {
            last = g.push(
                Node::Static(StaticLayer::new(LayerId::ffn(block, LayerKind::W1, sub), d, d)),
                Some(last),
            );
        }
        last = g.push(vec_op(VectorKind::Gelu, l * spec.ffn_dim as u64), Some(last));
        for sub in 0..k {
            last = g.push(
                Node::Static(StaticLayer::new(LayerId::ffn(block, LayerKind::W2, sub), d, d)),
                Some(last),
            );
        }
        let res2 = g.push(vec_op(VectorKind::ResidualAdd, ld), Some(last));
        prev = Some(g.push(vec_op(VectorKind::LayerNorm, ld), Some(res2)));
    }
    Ok(LayerGraph {
        nodes: g.nodes,
        edges: g.edges,
    })
}

#[derive(Default)]
struct GraphBuilder {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
}

impl GraphBuilder {
    fn node(&mut self, n: Node) -> usize {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn edge(&mut self, a: usize, b: usize) {
        self.edges.push((a, b));
    }

    fn push(&mut self, n: Node, after: Option<usize>) -> usize {
        let id = self.node(n);
        if let Some(a) = after {
            self.edge(a, id);
        }
        id
    }
}

/// Splits a full FFN weight into `k` square sub-layers: `W1 (d×D)` along columns,
/// `W2 (D×d)` along rows.
pub fn ffn_partition<T: Clone>(weight: &Array2<T>, kind: LayerKind, k: usize) -> Result<Vec<Array2<T>>> {
    let (rows, cols) = weight.dim();
    let split_dim = match kind {
        LayerKind::W1 => cols,
        LayerKind::W2 => rows,
        other => return Err(Error::Shape(format!("{} is not an FFN layer", other.label()))),
    };
    if k == 0 || split_dim % k != 0 {
        return Err(Error::Shape(format!(
            "{} dimension {split_dim} is not divisible into {k} sub-layers",
            kind.label()
        )));
    }
    let step = split_dim / k;
    Ok((0..k)
        .map(|i| {
            let range = i * step..(i + 1) * step;
            match kind {
                LayerKind::W1 => weight.slice(s![.., range]).to_owned(),
                _ => weight.slice(s![range, ..]).to_owned(),
            }
        })
        .collect())
}

/// Work content of one inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub static_macs: u64,
    pub dynamic_macs: u64,
    /// Element-wise operations, each processed element counted once. Bias
    /// additions of the projections are included here.
    pub vector_ops: u64,
}

impl OpCount {
    pub fn macs(&self) -> u64 {
        self.static_macs + self.dynamic_macs
    }

    /// Operations for throughput: two per MAC plus one per vector element.
    pub fn total_ops(&self) -> u64 {
        2 * self.macs() + self.vector_ops
    }
}

/// Bias elements added per block: one per output element of every static layer.
pub fn bias_elements_per_block(spec: &ViTModelSpec) -> u64 {
    spec.seq_len as u64 * (5 * spec.embed_dim as u64 + spec.ffn_dim as u64)
}

pub fn mac_count(spec: &ViTModelSpec) -> OpCount {
    let (n, h, l) = (spec.blocks as u64, spec.heads as u64, spec.seq_len as u64);
    let d = spec.embed_dim as u64;
    let ff = spec.ffn_dim as u64;
    let dh = spec.head_dim() as u64;
    let per_block_vector = h * l * l // softmax
        + l * d // global normalization
        + 2 * l * d // residual adds
        + 2 * l * d // layer norms
        + l * ff // GELU
        + bias_elements_per_block(spec);
    OpCount {
        static_macs: n * l * (4 * d * d + 2 * d * ff),
        dynamic_macs: 2 * n * h * l * l * dh,
        vector_ops: n * per_block_vector,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(d: u32, ff: u32, n: u32, h: u32, l: u32) -> ViTModelSpec {
        ViTModelSpec::new("tiny", d, ff, n, h, l)
    }

    #[test]
    fn vit_b_counts() {
        let g = expand_model(&ViTModelSpec::vit_b16()).unwrap();
        assert_eq!(ViTModelSpec::vit_b16().ffn_ratio(), 4);
        assert_eq!(g.static_layers().count(), 144);
        assert_eq!(g.dynamic_ops().count(), 288);
    }

    #[test]
    fn minimal_block() {
        let g = expand_model(&tiny(8, 8, 1, 2, 4)).unwrap();
        assert_eq!(g.static_layers().count(), 6);
        assert_eq!(g.dynamic_ops().count(), 4);
    }

    /// Walks every block and counts layers kind by kind.
    #[test]
    fn vit_l_counts_by_enumeration() {
        let spec = ViTModelSpec::vit_l16();
        let g = expand_model(&spec).unwrap();
        let mut counted = 0;
        for b in 0..spec.blocks {
            counted += g.static_layers().filter(|l| l.id.block == b).count();
        }
        assert_eq!(counted, 288);
        assert_eq!(g.dynamic_ops().count(), 768);
        assert!(g.static_layers().all(|l| l.rows == 1024 && l.cols == 1024));
    }

    #[test]
    fn rejects_non_divisible_ffn() {
        let err = expand_model(&tiny(6, 10, 1, 2, 4)).unwrap_err();
        assert!(err.to_string().contains("not a multiple"), "{err}");
        assert!(tiny(6, 4, 1, 2, 4).validate().is_err());
        assert!(tiny(6, 12, 1, 4, 4).validate().is_err());
        assert!(tiny(6, 12, 1, 2, 0).validate().is_err());
    }

    #[test]
    fn expansion_is_deterministic() {
        let spec = ViTModelSpec::vit_s16();
        assert_eq!(expand_model(&spec).unwrap(), expand_model(&spec).unwrap());
    }

    #[test]
    fn concurrency_matches_graph_reachability() {
        let spec = tiny(4, 8, 2, 2, 3);
        let g = expand_model(&spec).unwrap();
        let layers: Vec<_> = g.static_layers().map(|l| l.id).collect();
        for a in &layers {
            for b in &layers {
                let ia = g.index_of(a).unwrap();
                let ib = g.index_of(b).unwrap();
                let unordered = a != b && !g.reaches(ia, ib) && !g.reaches(ib, ia);
                assert_eq!(unordered, a.concurrent_with(b), "{a} vs {b}");
                assert_eq!(a.concurrent_with(b), b.concurrent_with(a));
            }
            assert!(!a.concurrent_with(a));
        }
    }

    #[test]
    fn ffn_partition_w1_columns() {
        let w1 = array![[1, 2, 3, 4], [5, 6, 7, 8]];
        let parts = ffn_partition(&w1, LayerKind::W1, 2).unwrap();
        assert_eq!(parts[0], array![[1, 2], [5, 6]]);
        assert_eq!(parts[1], array![[3, 4], [7, 8]]);
    }

    #[test]
    fn ffn_partition_w2_rows() {
        let w2 = array![[1, 2], [3, 4], [5, 6], [7, 8]];
        let parts = ffn_partition(&w2, LayerKind::W2, 2).unwrap();
        assert_eq!(parts[0], array![[1, 2], [3, 4]]);
        assert_eq!(parts[1], array![[5, 6], [7, 8]]);
    }

    #[test]
    fn ffn_partition_vit_b_shapes() {
        let w1 = Array2::<u8>::zeros((768, 3072));
        let parts = ffn_partition(&w1, LayerKind::W1, 4).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|p| p.dim() == (768, 768)));
        assert!(ffn_partition(&w1, LayerKind::W1, 5).is_err());
        assert!(ffn_partition(&w1, LayerKind::Wq, 4).is_err());
    }

    #[test]
    fn mac_count_unit_model() {
        let c = mac_count(&tiny(1, 1, 1, 1, 1));
        assert_eq!(c.static_macs, 6);
        assert_eq!(c.dynamic_macs, 2);
    }

    /// Looped summation over the graph as an independent check of the closed forms.
    fn looped_macs(spec: &ViTModelSpec) -> (u64, u64) {
        let g = expand_model(spec).unwrap();
        let mut st = 0u64;
        for l in g.static_layers() {
            for _token in 0..spec.seq_len {
                st += l.rows as u64 * l.cols as u64;
            }
        }
        let dy = g.dynamic_ops().map(|op| op.macs()).sum();
        (st, dy)
    }

    #[test]
    fn mac_count_closed_form_matches_loops() {
        let b = ViTModelSpec::vit_b16();
        assert_eq!(mac_count(&b).static_macs, 12 * 197 * 7_077_888);
        for spec in ViTModelSpec::table() {
            let c = mac_count(&spec);
            let (st, dy) = looped_macs(&spec);
            assert_eq!((c.static_macs, c.dynamic_macs), (st, dy), "{}", spec.name);
            // static/dynamic ratio agrees both ways
            assert_eq!(c.static_macs as f64 / c.dynamic_macs as f64, st as f64 / dy as f64);
        }
    }

    #[test]
    fn vector_ops_include_graph_elements_and_bias() {
        let spec = ViTModelSpec::vit_s16();
        let g = expand_model(&spec).unwrap();
        let graph_elems: u64 = g.vector_ops().map(|v| v.elements).sum();
        assert_eq!(
            mac_count(&spec).vector_ops,
            graph_elems + spec.blocks as u64 * bias_elements_per_block(&spec)
        );
    }

    #[test]
    fn presets_by_loose_name() {
        assert_eq!(ViTModelSpec::preset("vit-b").unwrap(), ViTModelSpec::vit_b16());
        assert_eq!(ViTModelSpec::preset("ViT-L/16").unwrap(), ViTModelSpec::vit_l16());
        assert_eq!(ViTModelSpec::preset("vit_s16").unwrap(), ViTModelSpec::vit_s16());
        assert!(ViTModelSpec::preset("vit-h").is_none());
    }
}
