use rand::Rng;

use crate::encoder::{position_embedding, sine_embedding_graph, Attention, Norm, StandardFfn, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::{xavier, Bound, Graph, ParamId, ParamStore, Tensor, Var};

pub const DECODER_FFN_EXPANSION: usize = 4;

/// Class head output order.
pub const OBJECT: usize = 0;
pub const BACKGROUND: usize = 1;

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub norm1: Norm,
    pub self_attn: Attention,
    pub norm2: Norm,
    pub cross_attn: Attention,
    pub norm3: Norm,
    pub ffn: StandardFfn,
}

/// Query decoder with class and box heads.
///
/// Reference points are carried as logits; the box head refines them as
/// `sigmoid(offset + reference)` for the center and `sigmoid(raw)` for size.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub dim: usize,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: Norm,
    pub class_w: ParamId,
    pub class_b: ParamId,
    pub box_w1: ParamId,
    pub box_b1: ParamId,
    pub box_w2: ParamId,
    pub box_b2: ParamId,
}

pub struct DecoderOutput {
    /// `B×Q×C` after the final norm.
    pub hidden: Var,
    /// `B×Q×2` over (object, background).
    pub logits: Var,
    /// `B×Q×4` center-format boxes in `(0, 1)`.
    pub boxes: Var,
    /// Cross-attention weights per layer, `(B·h)×Q×N`.
    pub cross_weights: Vec<Var>,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let n = format!("{name}.{i}");
            layers.push(DecoderLayer {
                norm1: Norm::new(store, &format!("{n}.norm1"), dim)?,
                self_attn: Attention::new(store, &format!("{n}.self_attn"), dim, heads, false, rng)?,
                norm2: Norm::new(store, &format!("{n}.norm2"), dim)?,
                cross_attn: Attention::new(store, &format!("{n}.cross_attn"), dim, heads, false, rng)?,
                norm3: Norm::new(store, &format!("{n}.norm3"), dim)?,
                ffn: StandardFfn::new(store, &format!("{n}.ffn"), dim, DECODER_FFN_EXPANSION, rng)?,
            });
        }
        Ok(Self {
            dim,
            layers,
            final_norm: Norm::new(store, &format!("{name}.norm"), dim)?,
            class_w: store.add(format!("{name}.class_w"), xavier(rng, &[dim, 2], dim, 2)),
            class_b: store.add(format!("{name}.class_b"), Tensor::zeros(&[2])?),
            box_w1: store.add(format!("{name}.box_w1"), xavier(rng, &[dim, dim], dim, dim)),
            box_b1: store.add(format!("{name}.box_b1"), Tensor::zeros(&[dim])?),
            box_w2: store.add(format!("{name}.box_w2"), xavier(rng, &[dim, 4], dim, 4)),
            box_b2: store.add(format!("{name}.box_b2"), Tensor::zeros(&[4])?),
        })
    }

    /// `queries[B×Q×C]` with reference logits `refs[B×Q×2]` attend into `memory`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, queries: Var, refs: Var, memory: &TokenSequence) -> Result<DecoderOutput> {
        let (b, q) = match g.shape(queries) {
            [b, q, c] if *c == self.dim => (*b, *q),
            s => return Err(Error::dim(format!("decoder queries must be B×Q×{}, got {s:?}", self.dim))),
        };
        if g.shape(refs) != [b, q, 2] {
            return Err(Error::dim(format!("reference logits {:?} do not fit [{b}, {q}, 2]", g.shape(refs))));
        }
        let centers = g.sigmoid(refs);
        let pos = sine_embedding_graph(g, centers, self.dim)?;
        // Keys carry the token positions; values stay content only.
        let mpos = position_embedding(&memory.layout)?;
        let n = mpos.numel();
        let mpos = Tensor::from_fn(g.shape(memory.data), |i| mpos.data()[i % n])?;
        let mpos = g.constant(mpos);
        let keys = g.add(memory.data, mpos)?;
        let mut t = queries;
        let mut cross_weights = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = layer.norm1.forward(g, p, t)?;
            let qk = g.add(h, pos)?;
            let a = layer.self_attn.forward(g, p, qk, qk, h)?.out;
            t = g.add(t, a)?;
            let h = layer.norm2.forward(g, p, t)?;
            let qh = g.add(h, pos)?;
            let cross = layer.cross_attn.forward(g, p, qh, keys, memory.data)?;
            cross_weights.push(cross.weights);
            t = g.add(t, cross.out)?;
            let h = layer.norm3.forward(g, p, t)?;
            let f = layer.ffn.forward(g, p, h)?;
            t = g.add(t, f)?;
        }
        let hidden = self.final_norm.forward(g, p, t)?;
        let logits = g.linear(hidden, p.var(self.class_w), Some(p.var(self.class_b)))?;
        let o = g.linear(hidden, p.var(self.box_w1), Some(p.var(self.box_b1)))?;
        let o = g.relu(o);
        let o = g.linear(o, p.var(self.box_w2), Some(p.var(self.box_b2)))?;
        let off = g.slice(o, 2, 0, 2)?;
        let size = g.slice(o, 2, 2, 2)?;
        let c = g.add(off, refs)?;
        let c = g.sigmoid(c);
        let s = g.sigmoid(size);
        let boxes = g.concat(&[c, s], 2)?;
        Ok(DecoderOutput {
            hidden,
            logits,
            boxes,
            cross_weights,
        })
    }
}

/// `ln(p / (1 − p))` with `p` clamped away from 0 and 1.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}
