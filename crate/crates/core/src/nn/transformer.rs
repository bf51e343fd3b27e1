use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{trunc_normal, Bound, LayerNorm, ParamId, ParamStore, INIT_STD};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Feed-forward hidden width as a multiple of the model width.
pub const FF_MULT: usize = 4;

/// Pre-norm transformer block: multi-head self-attention and a GELU MLP,
/// each wrapped in a residual connection.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub dim: usize,
    pub heads: usize,
    pub norm1: LayerNorm,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub out: ParamId,
    pub norm2: LayerNorm,
    pub ff_in: ParamId,
    pub ff_out: ParamId,
}

/// Outputs of one block plus the per-head attention probabilities.
pub struct BlockTrace {
    pub output: NodeId,
    pub attention: Vec<NodeId>,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{name}: width {dim} not divisible by {heads} heads")));
        }
        let mut w = |suffix: &str, shape: &[usize]| store.register(format!("{name}.{suffix}"), trunc_normal(rng, shape, INIT_STD));
        let query = w("attn.query", &[dim, dim]);
        let key = w("attn.key", &[dim, dim]);
        let value = w("attn.value", &[dim, dim]);
        let out = w("attn.out", &[dim, dim]);
        let ff_in = w("ff.in", &[dim, FF_MULT * dim]);
        let ff_out = w("ff.out", &[FF_MULT * dim, dim]);
        Ok(TransformerBlock {
            dim,
            heads,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            query,
            key,
            value,
            out,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ff_in,
            ff_out,
        })
    }

    /// Scalar count of one block of width `dim`.
    pub fn numel(dim: usize) -> usize {
        4 * dim * dim + 2 * FF_MULT * dim * dim + 4 * dim
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        Ok(self.forward_traced(g, b, x)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<BlockTrace> {
        let (len, d) = g.shape(x);
        if d != self.dim {
            return Err(Error::shape(format!("block of width {} fed [{len}×{d}]", self.dim)));
        }
        let h = self.norm1.forward(g, b, x)?;
        let q = g.matmul(h, b.node(self.query))?;
        let k = g.matmul(h, b.node(self.key))?;
        let v = g.matmul(h, b.node(self.value))?;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qh = g.slice_cols(q, i * hd, hd)?;
            let kh = g.slice_cols(k, i * hd, hd)?;
            let vh = g.slice_cols(v, i * hd, hd)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let probs = g.softmax_rows(scores);
            attention.push(probs);
            heads.push(g.matmul(probs, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let attn = g.matmul(joined, b.node(self.out))?;
        let x = g.add(x, attn)?;

        let h = self.norm2.forward(g, b, x)?;
        let h = g.matmul(h, b.node(self.ff_in))?;
        let h = g.gelu(h);
        let h = g.matmul(h, b.node(self.ff_out))?;
        let output = g.add(x, h)?;
        Ok(BlockTrace { output, attention })
    }

    /// Zeroes the attention and feed-forward weights; the block then passes
    /// its input through unchanged.
    pub fn zero_weights(&self, store: &mut ParamStore) {
        for id in [self.query, self.key, self.value, self.out, self.ff_in, self.ff_out] {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&shape);
        }
    }
}

/// A stack of blocks applied in sequence.
#[derive(Clone, Debug)]
pub struct Stack(pub Vec<TransformerBlock>);

impl Stack {
    pub fn new(store: &mut ParamStore, name: &str, depth: usize, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        (0..depth)
            .map(|i| TransformerBlock::new(store, &format!("{name}.{i}"), dim, heads, rng))
            .collect::<Result<Vec<_>>>()
            .map(Stack)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, mut x: NodeId) -> Result<NodeId> {
        for block in &self.0 {
            x = block.forward(g, b, x)?;
        }
        Ok(x)
    }
}
