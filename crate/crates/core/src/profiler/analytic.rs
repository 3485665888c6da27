use std::collections::BTreeMap;

use super::graph::{LayerGraph, LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// Width and spatial size of one feature map, or of a token set (`h` tokens,
/// `w == 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl MapShape {
    pub fn positions(&self) -> usize {
        self.h * self.w
    }
}

/// Resolved shapes of one layer: its inputs, key/value sources and outputs.
/// `inputs` already include the `concat` factor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    pub inputs: Vec<MapShape>,
    pub kv: Vec<MapShape>,
    pub outputs: Vec<MapShape>,
}

/// Padding used for a `k×k` window: `(k−1)/2` for odd `k`, 0 for even.
pub fn window_pad(k: usize) -> usize {
    if k % 2 == 1 {
        (k - 1) / 2
    } else {
        0
    }
}

fn window_out(layer: &LayerSpec, n: usize, k: usize, s: usize) -> Result<usize> {
    if k == 0 || s == 0 {
        return Err(Error::Graph(format!("{}: kernel and stride must be positive", layer.name)));
    }
    if k.is_multiple_of(2) && k != s {
        return Err(Error::Graph(format!(
            "{}: even kernel {k} is only supported as a non-overlapping patch (stride {k}), got stride {s}",
            layer.name
        )));
    }
    let pad = window_pad(k);
    if n + 2 * pad < k {
        return Err(Error::Graph(format!("{}: input size {n} is smaller than kernel {k}", layer.name)));
    }
    Ok((n + 2 * pad - k) / s + 1)
}

fn expected_width(kind: &LayerKind) -> Option<usize> {
    match *kind {
        LayerKind::Conv2d { in_channels, .. } | LayerKind::PointwiseConv2d { in_channels, .. } => Some(in_channels),
        LayerKind::Linear { in_features, .. } => Some(in_features),
        LayerKind::DepthwiseConv2d { channels, .. } | LayerKind::Butterfly { channels, .. } => Some(channels),
        LayerKind::LayerNorm { dim } | LayerKind::Mhsa { dim, .. } | LayerKind::SpatialReductionAttention { dim, .. } => {
            Some(dim)
        }
        LayerKind::Embedding { .. } | LayerKind::MaxPool { .. } => None,
    }
}

/// Walk the graph over an `h×w` input and resolve every layer's shapes.
pub fn propagate(graph: &LayerGraph, h: usize, w: usize) -> Result<Vec<LayerShapes>> {
    if graph.layers.is_empty() {
        return Err(Error::Graph(format!("graph {:?} has no layers", graph.name)));
    }
    if h == 0 || w == 0 || graph.input_channels == 0 {
        return Err(Error::Graph(format!("input {}×{h}×{w} is empty", graph.input_channels)));
    }
    let mut maps: BTreeMap<usize, MapShape> = BTreeMap::new();
    maps.insert(
        1,
        MapShape {
            c: graph.input_channels,
            h,
            w,
        },
    );
    let mut token_sets: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(graph.layers.len());

    for layer in &graph.layers {
        let name = &layer.name;
        let concat = layer.concat.unwrap_or(1);
        if concat == 0 {
            return Err(Error::Graph(format!("{name}: concat factor must be positive")));
        }
        let expect = expected_width(&layer.kind);
        let is_embedding = matches!(layer.kind, LayerKind::Embedding { .. });
        let spatial = matches!(
            layer.kind,
            LayerKind::Conv2d { .. }
                | LayerKind::DepthwiseConv2d { .. }
                | LayerKind::PointwiseConv2d { .. }
                | LayerKind::MaxPool { .. }
                | LayerKind::SpatialReductionAttention { .. }
        );

        let mut inputs = Vec::new();
        match (layer.at.is_empty(), layer.tokens) {
            (false, Some(_)) => return Err(Error::Graph(format!("{name}: give either `at` or `tokens`, not both"))),
            (true, None) if !is_embedding => return Err(Error::Graph(format!("{name}: layer has no extent"))),
            (true, Some(n)) => {
                if spatial {
                    return Err(Error::Graph(format!("{name}: {} needs a feature map", layer.kind.name())));
                }
                if n == 0 {
                    return Err(Error::Graph(format!("{name}: empty token set")));
                }
                let c = match (token_sets.get(&n), expect, &layer.kind) {
                    (_, _, LayerKind::Embedding { dim, .. }) => *dim / concat,
                    (Some(&c), _, _) => c,
                    (None, Some(e), _) => e / concat,
                    (None, None, _) => return Err(Error::Graph(format!("{name}: unknown width of {n}-token set"))),
                };
                inputs.push(MapShape { c: c * concat, h: n, w: 1 });
            }
            (false, None) if is_embedding => return Err(Error::Graph(format!("{name}: an embedding cannot run over feature maps"))),
            _ => {
                for &s in &layer.at {
                    let m = maps
                        .get(&s)
                        .ok_or_else(|| Error::Graph(format!("{name}: no feature map at stride {s}")))?;
                    inputs.push(MapShape { c: m.c * concat, ..*m });
                }
            }
        }
        if let Some(e) = expect {
            if let Some(bad) = inputs.iter().find(|m| m.c != e) {
                return Err(Error::Graph(format!(
                    "{name}: expects width {e}, input has {}{}",
                    bad.c,
                    if concat > 1 { format!(" ({concat}× concat)") } else { String::new() }
                )));
            }
        }

        let mut kv = Vec::new();
        let is_attention = matches!(layer.kind, LayerKind::Mhsa { .. });
        if !layer.kv_at.is_empty() || layer.kv_tokens.is_some() {
            if !is_attention {
                return Err(Error::Graph(format!("{name}: key/value extent only applies to mhsa")));
            }
            for &s in &layer.kv_at {
                kv.push(
                    *maps
                        .get(&s)
                        .ok_or_else(|| Error::Graph(format!("{name}: no key/value map at stride {s}")))?,
                );
            }
            if let Some(n) = layer.kv_tokens {
                let c = *token_sets
                    .get(&n)
                    .ok_or_else(|| Error::Graph(format!("{name}: unknown {n}-token key/value set")))?;
                kv.push(MapShape { c, h: n, w: 1 });
            }
            if let (Some(e), Some(bad)) = (expect, kv.iter().find(|m| m.c != expect.unwrap_or(0))) {
                return Err(Error::Graph(format!("{name}: key/value width {} differs from {e}", bad.c)));
            }
        }

        let mut outputs = Vec::with_capacity(inputs.len());
        for m in &inputs {
            let o = match layer.kind {
                LayerKind::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => MapShape {
                    c: out_channels,
                    h: window_out(layer, m.h, kernel, stride)?,
                    w: window_out(layer, m.w, kernel, stride)?,
                },
                LayerKind::DepthwiseConv2d { kernel, stride, .. } => MapShape {
                    c: m.c,
                    h: window_out(layer, m.h, kernel, stride)?,
                    w: window_out(layer, m.w, kernel, stride)?,
                },
                LayerKind::MaxPool { kernel, stride } => MapShape {
                    c: m.c,
                    h: window_out(layer, m.h, kernel, stride)?,
                    w: window_out(layer, m.w, kernel, stride)?,
                },
                LayerKind::PointwiseConv2d { out_channels, .. } => MapShape { c: out_channels, ..*m },
                LayerKind::Linear { out_features, .. } => MapShape { c: out_features, ..*m },
                LayerKind::Butterfly { channels, .. } => {
                    if channels < 2 || !channels.is_power_of_two() {
                        return Err(Error::Graph(format!("{name}: butterfly width {channels} is not a power of two")));
                    }
                    *m
                }
                LayerKind::SpatialReductionAttention { ratio, pool, .. } => {
                    match (ratio, pool) {
                        (Some(r), None) if r >= 1 => {
                            if m.h / r == 0 || m.w / r == 0 {
                                return Err(Error::Graph(format!(
                                    "{name}: reduction ratio {r} exceeds map {}×{}",
                                    m.h, m.w
                                )));
                            }
                        }
                        (None, Some(p)) if p >= 1 => {
                            if p > m.h || p > m.w {
                                return Err(Error::Graph(format!("{name}: pool size {p} exceeds map {}×{}", m.h, m.w)));
                            }
                        }
                        _ => {
                            return Err(Error::Graph(format!(
                                "{name}: set exactly one positive `ratio` or `pool`"
                            )))
                        }
                    }
                    *m
                }
                LayerKind::Mhsa { dim, heads, .. } => {
                    if heads == 0 || dim % heads != 0 {
                        return Err(Error::Graph(format!("{name}: {heads} heads do not divide {dim}")));
                    }
                    *m
                }
                LayerKind::LayerNorm { .. } | LayerKind::Embedding { .. } => *m,
            };
            outputs.push(o);
        }
        if let LayerKind::SpatialReductionAttention { dim, heads, .. } = layer.kind {
            if heads == 0 || dim % heads != 0 {
                return Err(Error::Graph(format!("{name}: {heads} heads do not divide {dim}")));
            }
        }

        if !layer.branch {
            if let Some(n) = layer.tokens {
                token_sets.insert(n, outputs[0].c);
            } else {
                let step = match layer.kind {
                    LayerKind::Conv2d { stride, .. }
                    | LayerKind::DepthwiseConv2d { stride, .. }
                    | LayerKind::MaxPool { stride, .. } => stride,
                    _ => 1,
                };
                for (&s, o) in layer.at.iter().zip(&outputs) {
                    maps.insert(s * step, *o);
                }
            }
        }
        out.push(LayerShapes { inputs, kv, outputs });
    }
    Ok(out)
}

/// Closed-form `(params, MACs)` of one layer with resolved shapes.
pub fn layer_cost(layer: &LayerSpec, shapes: &LayerShapes) -> (u64, u64) {
    let sum_pos = |ms: &[MapShape]| ms.iter().map(|m| m.positions() as u64).sum::<u64>();
    let bias = |b: bool, n: usize| if b { n as u64 } else { 0 };
    match layer.kind {
        LayerKind::Conv2d {
            out_channels,
            kernel,
            bias: b,
            ..
        } => {
            let cin = shapes.inputs[0].c as u64;
            let k2 = (kernel * kernel) as u64;
            let params = k2 * cin * out_channels as u64 + bias(b, out_channels);
            (params, k2 * cin * out_channels as u64 * sum_pos(&shapes.outputs))
        }
        LayerKind::DepthwiseConv2d {
            channels,
            kernel,
            bias: b,
            ..
        } => {
            let k2 = (kernel * kernel) as u64;
            let c = channels as u64;
            (k2 * c + bias(b, channels), k2 * c * sum_pos(&shapes.outputs))
        }
        LayerKind::PointwiseConv2d {
            out_channels, bias: b, ..
        } => {
            let cin = shapes.inputs[0].c as u64;
            let co = out_channels as u64;
            (cin * co + bias(b, out_channels), cin * co * sum_pos(&shapes.inputs))
        }
        LayerKind::Linear {
            in_features,
            out_features,
            bias: b,
        } => {
            let w = (in_features * out_features) as u64;
            (w + bias(b, out_features), w * sum_pos(&shapes.inputs))
        }
        LayerKind::Mhsa { dim, qkv_bias, .. } => {
            let c = dim as u64;
            let nq = sum_pos(&shapes.inputs);
            let m = if shapes.kv.is_empty() { nq } else { sum_pos(&shapes.kv) };
            let params = 4 * c * c + c + if qkv_bias { 3 * c } else { 0 };
            (params, 2 * nq * c * c + 2 * m * c * c + 2 * nq * m * c)
        }
        LayerKind::SpatialReductionAttention {
            dim,
            ratio,
            pool,
            qkv_bias,
            ..
        } => {
            let c = dim as u64;
            let mut params = 4 * c * c + c + if qkv_bias { 3 * c } else { 0 };
            let mut macs = 0;
            let reduces = !matches!((ratio, pool), (Some(1), None));
            if reduces {
                let k = ratio.unwrap_or(1) as u64;
                params += k * k * c * c + c + 2 * c;
            }
            for m in &shapes.inputs {
                let n = m.positions() as u64;
                let (red_pos, red_macs) = match (ratio, pool) {
                    (Some(1), None) => (n, 0),
                    (Some(r), None) => {
                        let p = ((m.h / r) * (m.w / r)) as u64;
                        (p, (r * r) as u64 * c * c * p)
                    }
                    (None, Some(p)) => {
                        let p = (p * p) as u64;
                        (p, c * c * p)
                    }
                    _ => unreachable!("validated during propagation"),
                };
                macs += red_macs + 2 * n * c * c + 2 * red_pos * c * c + 2 * n * red_pos * c;
            }
            (params, macs)
        }
        LayerKind::Butterfly { channels, bias: b } => {
            let n = channels as u64;
            let stages = channels.trailing_zeros() as u64;
            (2 * n * stages + bias(b, channels), 2 * n * stages * sum_pos(&shapes.inputs))
        }
        LayerKind::LayerNorm { dim } => (2 * dim as u64, 0),
        LayerKind::Embedding { count, dim } => ((count * dim) as u64, 0),
        LayerKind::MaxPool { .. } => (0, 0),
    }
}
