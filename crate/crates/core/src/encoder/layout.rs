use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Strides of the four pyramid levels relative to the input image.
pub const PYRAMID_STRIDES: [usize; 4] = [8, 16, 32, 64];

/// Spatial sizes of the four feature maps that a token sequence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLayout {
    pub scales: [(usize, usize); 4],
    pub channels: usize,
}

impl ScaleLayout {
    pub fn new(scales: [(usize, usize); 4], channels: usize) -> Result<Self> {
        if channels == 0 || scales.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::dim(format!("invalid layout {scales:?} with {channels} channels")));
        }
        Ok(Self { scales, channels })
    }

    /// Layout produced by a strict halving pyramid over an `h×w` image.
    pub fn for_image(h: usize, w: usize, channels: usize) -> Result<Self> {
        let mut scales = [(0, 0); 4];
        for (s, &stride) in scales.iter_mut().zip(&PYRAMID_STRIDES) {
            *s = (h.div_ceil(stride), w.div_ceil(stride));
        }
        Self::new(scales, channels)
    }

    pub fn token_count(&self) -> usize {
        self.scales.iter().map(|(h, w)| h * w).sum()
    }

    /// Start offset of each scale inside the token sequence.
    pub fn offsets(&self) -> [usize; 4] {
        let mut off = [0; 4];
        let mut acc = 0;
        for (o, (h, w)) in off.iter_mut().zip(&self.scales) {
            *o = acc;
            acc += h * w;
        }
        off
    }

    /// Normalized `(cx, cy)` of every token, in token order.
    pub fn token_centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.token_count());
        for &(h, w) in &self.scales {
            for y in 0..h {
                for x in 0..w {
                    out.push(((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64));
                }
            }
        }
        out
    }
}

/// `B×N×C` tokens plus the layout needed to restore the four maps.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    pub data: Var,
    pub layout: ScaleLayout,
}

/// Row-major flatten of each `B×C×H_i×W_i` map, concatenated in scale order.
pub fn maps_to_tokens(g: &mut Graph, maps: &[Var; 4], layout: &ScaleLayout) -> Result<TokenSequence> {
    let batch = g.shape(maps[0])[0];
    let mut parts = Vec::with_capacity(4);
    for (i, (&m, &(h, w))) in maps.iter().zip(&layout.scales).enumerate() {
        if g.shape(m) != [batch, layout.channels, h, w] {
            return Err(Error::dim(format!(
                "scale {i} map {:?} does not match layout [{batch}, {}, {h}, {w}]",
                g.shape(m),
                layout.channels
            )));
        }
        let t = g.permute(m, &[0, 2, 3, 1])?;
        parts.push(g.reshape(t, &[batch, h * w, layout.channels])?);
    }
    Ok(TokenSequence {
        data: g.concat(&parts, 1)?,
        layout: *layout,
    })
}

/// Exact inverse of [`maps_to_tokens`].
pub fn tokens_to_maps(g: &mut Graph, tokens: &TokenSequence) -> Result<[Var; 4]> {
    let layout = &tokens.layout;
    let shape = g.shape(tokens.data).to_vec();
    let n = layout.token_count();
    if shape.len() != 3 || shape[1] != n || shape[2] != layout.channels {
        return Err(Error::dim(format!(
            "tokens {shape:?} do not match layout with {n} tokens of width {}",
            layout.channels
        )));
    }
    let batch = shape[0];
    let offsets = layout.offsets();
    let mut maps = [tokens.data; 4];
    for i in 0..4 {
        let (h, w) = layout.scales[i];
        let s = g.slice(tokens.data, 1, offsets[i], h * w)?;
        let s = g.reshape(s, &[batch, h, w, layout.channels])?;
        maps[i] = g.permute(s, &[0, 3, 1, 2])?;
    }
    Ok(maps)
}

fn frequencies(channels: usize) -> Result<Vec<f64>> {
    if channels < 4 || !channels.is_multiple_of(4) {
        return Err(Error::Unsupported(format!(
            "sine embedding needs a channel count divisible by 4, got {channels}"
        )));
    }
    let n = channels / 4;
    Ok((0..n)
        .map(|k| {
            let t = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            std::f64::consts::PI * 16f64.powf(t)
        })
        .collect())
}

/// Fixed 2-D sine embedding of a normalized point.
///
/// Layout: `[sin(f·cy), sin(f·cx), cos(f·cy), cos(f·cx)]`, each block `C/4`
/// wide, with frequencies geometric from π to 16π.
pub fn sine_embedding(cx: f64, cy: f64, channels: usize) -> Result<Vec<f64>> {
    let f = frequencies(channels)?;
    let phases: Vec<f64> = f.iter().map(|v| v * cy).chain(f.iter().map(|v| v * cx)).collect();
    Ok(phases.iter().map(|p| p.sin()).chain(phases.iter().map(|p| p.cos())).collect())
}

/// Positional embedding for every token of a layout, `N×C`.
pub fn position_embedding(layout: &ScaleLayout) -> Result<Tensor> {
    let c = layout.channels;
    let mut data = Vec::with_capacity(layout.token_count() * c);
    for (cx, cy) in layout.token_centers() {
        data.extend(sine_embedding(cx, cy, c)?);
    }
    Tensor::new(vec![layout.token_count(), c], data)
}

/// Differentiable [`sine_embedding`] of `points[..., 2]` holding `(cx, cy)`.
pub fn sine_embedding_graph(g: &mut Graph, points: Var, channels: usize) -> Result<Var> {
    let f = frequencies(channels)?;
    let n = f.len();
    let shape = g.shape(points).to_vec();
    if shape.last() != Some(&2) {
        return Err(Error::dim(format!("points must end in a pair, got {shape:?}")));
    }
    // Row 0 (cx) feeds the second block, row 1 (cy) the first.
    let table = Tensor::from_fn(&[2, 2 * n], |i| {
        let (row, col) = (i / (2 * n), i % (2 * n));
        match (row, col < n) {
            (1, true) => f[col],
            (0, false) => f[col - n],
            _ => 0.0,
        }
    })?;
    let table = g.constant(table);
    // Phase construction belongs to the fixed encoding, not to a learned layer.
    let phases = g.uncounted(|g| g.linear(points, table, None))?;
    let s = g.sin(phases);
    let c = g.cos(phases);
    g.concat(&[s, c], shape.len() - 1)
}
