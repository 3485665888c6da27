//! Multi-scale transformer encoder.
//!
//! Each layer is pre-norm self-attention over all tokens of all four scales
//! followed by a pre-norm feed-forward branch, either the butterfly/depthwise
//! spatial block or the standard expanding MLP.

mod attention;
mod ffn;
mod layout;

pub use attention::{attention_macs, Attention, AttentionOutput};
pub use ffn::{ffn_macs_comparison, FfnKind, FfnMacs, SpatialFfn, StandardFfn, DEPTHWISE_KERNEL};
pub use layout::{
    maps_to_tokens, position_embedding, sine_embedding, sine_embedding_graph, tokens_to_maps, ScaleLayout,
    TokenSequence, PYRAMID_STRIDES,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug)]
pub enum Ffn {
    Spatial(SpatialFfn),
    Standard(StandardFfn),
}

/// Learned scale and shift of a layer norm.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)?),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])?),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: crate::Var) -> Result<crate::Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn: Ffn,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: FfnKind,
        rng: &mut R,
    ) -> Result<Self> {
        if matches!(ffn, FfnKind::Spatial) && (dim < 2 || !dim.is_power_of_two()) {
            return Err(Error::Unsupported(format!(
                "spatial FFN needs a power-of-two width, got {dim}"
            )));
        }
        let norm1 = Norm::new(store, &format!("{name}.norm1"), dim)?;
        let attn = Attention::new(store, &format!("{name}.attn"), dim, heads, false, rng)?;
        let norm2 = Norm::new(store, &format!("{name}.norm2"), dim)?;
        let ffn = match ffn {
            FfnKind::Spatial => Ffn::Spatial(SpatialFfn::new(store, &format!("{name}.ffn"), dim, rng)?),
            FfnKind::Standard { expansion } => {
                Ffn::Standard(StandardFfn::new(store, &format!("{name}.ffn"), dim, expansion, rng)?)
            }
        };
        Ok(Self { norm1, attn, norm2, ffn })
    }

    /// `y = x + MHSA(LN(x))`, then `y + FFN(LN(y))`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: &TokenSequence) -> Result<TokenSequence> {
        let h = self.norm1.forward(g, p, x.data)?;
        let a = self.attn.self_attend(g, p, h)?.out;
        let y = g.add(x.data, a)?;
        let h = self.norm2.forward(g, p, y)?;
        let f = match &self.ffn {
            Ffn::Spatial(ffn) => ffn.forward(
                g,
                p,
                &TokenSequence {
                    data: h,
                    layout: x.layout,
                },
            )?,
            Ffn::Standard(ffn) => ffn.forward(g, p, h)?,
        };
        Ok(TokenSequence {
            data: g.add(y, f)?,
            layout: x.layout,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        dim: usize,
        heads: usize,
        ffn: FfnKind,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(store, &format!("{name}.{i}"), dim, heads, ffn, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Add the fixed positional embedding once, then run every layer.
    pub fn forward(&self, g: &mut Graph, p: &Bound, tokens: &TokenSequence) -> Result<TokenSequence> {
        let batch = g.shape(tokens.data)[0];
        let pos = position_embedding(&tokens.layout)?;
        let n = pos.numel();
        let tiled = Tensor::from_fn(&[batch, tokens.layout.token_count(), tokens.layout.channels], |i| {
            pos.data()[i % n]
        })?;
        let pos = g.constant(tiled);
        let mut x = TokenSequence {
            data: g.add(tokens.data, pos)?,
            layout: tokens.layout,
        };
        for layer in &self.layers {
            x = layer.forward(g, p, &x)?;
        }
        Ok(x)
    }
}
