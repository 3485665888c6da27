use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{maps_to_tokens, tokens_to_maps, ScaleLayout, TokenSequence};
use crate::butterfly::{self, butterfly_macs, INIT_NOISE_STD};
use crate::error::{Error, Result};
use crate::tensor::{xavier, Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Which feed-forward block an encoder layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FfnKind {
    /// Butterfly → depthwise 3×3 → ReLU → butterfly → square projection.
    Spatial,
    /// Linear C→e·C, ReLU, linear e·C→C.
    Standard { expansion: usize },
}

/// Two-layer MLP feed-forward block.
#[derive(Clone, Debug)]
pub struct StandardFfn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl StandardFfn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, expansion: usize, rng: &mut R) -> Result<Self> {
        if expansion == 0 {
            return Err(Error::Unsupported("FFN expansion must be >= 1".into()));
        }
        let hidden = dim * expansion;
        Ok(Self {
            w1: store.add(format!("{name}.w1"), xavier(rng, &[dim, hidden], dim, hidden)),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(&[hidden])?),
            w2: store.add(format!("{name}.w2"), xavier(rng, &[hidden, dim], hidden, dim)),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(&[dim])?),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.linear(x, p.var(self.w1), Some(p.var(self.b1)))?;
        let h = g.relu(h);
        g.linear(h, p.var(self.w2), Some(p.var(self.b2)))
    }
}

/// Spatially aware replacement for the encoder FFN.
///
/// Tokens are restored to their four feature maps; each map goes through
/// butterfly channel fusion, a 3×3 depthwise convolution (per scale, never
/// across scales), ReLU and a second butterfly. The maps are flattened back
/// and a square linear projection prepares the output for the next layer.
#[derive(Clone, Debug)]
pub struct SpatialFfn {
    pub bt1: ParamId,
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub bt2: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

pub const DEPTHWISE_KERNEL: usize = 3;

impl SpatialFfn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        let k = DEPTHWISE_KERNEL;
        let fan = k * k;
        Ok(Self {
            bt1: store.add(format!("{name}.bt1"), butterfly::init_weights(rng, dim, INIT_NOISE_STD)?),
            dw_kernel: store.add(format!("{name}.dw_kernel"), xavier(rng, &[dim, k, k], fan, fan)),
            dw_bias: store.add(format!("{name}.dw_bias"), Tensor::zeros(&[dim])?),
            bt2: store.add(format!("{name}.bt2"), butterfly::init_weights(rng, dim, INIT_NOISE_STD)?),
            proj_w: store.add(format!("{name}.proj_w"), xavier(rng, &[dim, dim], dim, dim)),
            proj_b: store.add(format!("{name}.proj_b"), Tensor::zeros(&[dim])?),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, tokens: &TokenSequence) -> Result<Var> {
        let maps = tokens_to_maps(g, tokens)?;
        let mut fused = maps;
        for (out, &m) in fused.iter_mut().zip(&maps) {
            let t = g.butterfly(m, p.var(self.bt1))?;
            let t = g.conv2d_depthwise(t, p.var(self.dw_kernel), Some(p.var(self.dw_bias)))?;
            let t = g.relu(t);
            *out = g.butterfly(t, p.var(self.bt2))?;
        }
        let flat = maps_to_tokens(g, &fused, &tokens.layout)?;
        g.linear(flat.data, p.var(self.proj_w), Some(p.var(self.proj_b)))
    }
}

/// Analytic MACs for one sample of both FFN variants over a layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfnMacs {
    pub standard: u64,
    pub spatial: u64,
    /// `spatial / standard`.
    pub ratio: f64,
}

/// standard = 2·N·C·(e·C); spatial = Σ_maps (2·2·C·log₂C + 9·C)·H·W + N·C².
pub fn ffn_macs_comparison(channels: usize, expansion: usize, layout: &ScaleLayout) -> Result<FfnMacs> {
    if channels < 2 || !channels.is_power_of_two() {
        return Err(Error::Unsupported(format!("channel count {channels} is not a power of two")));
    }
    if expansion == 0 {
        return Err(Error::Unsupported("FFN expansion must be >= 1".into()));
    }
    let n = layout.token_count() as u64;
    let c = channels as u64;
    let standard = 2 * n * c * (expansion as u64 * c);
    let k2 = (DEPTHWISE_KERNEL * DEPTHWISE_KERNEL) as u64;
    let per_map: u64 = layout
        .scales
        .iter()
        .map(|&(h, w)| 2 * butterfly_macs(channels, h, w) + k2 * c * (h * w) as u64)
        .sum();
    let spatial = per_map + n * c * c;
    Ok(FfnMacs {
        standard,
        spatial,
        ratio: spatial as f64 / standard as f64,
    })
}
