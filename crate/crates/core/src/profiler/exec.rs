use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::analytic::{propagate, window_pad, LayerShapes, MapShape};
use super::graph::{LayerGraph, LayerKind, LayerSpec};
use crate::encoder::Attention;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// MACs recorded by the tape while `forward` runs.
pub fn instrumented_count(forward: impl FnOnce(&mut Graph) -> Result<()>) -> Result<u64> {
    let mut g = Graph::new();
    forward(&mut g)?;
    Ok(g.macs())
}

fn map_input(g: &mut Graph, rng: &mut ChaCha8Rng, m: &MapShape) -> Result<Var> {
    Ok(g.constant(Tensor::randn(rng, &[1, m.c, m.h, m.w], 1.0)?))
}

fn token_input(g: &mut Graph, rng: &mut ChaCha8Rng, m: &MapShape) -> Result<Var> {
    Ok(g.constant(Tensor::randn(rng, &[1, m.positions(), m.c], 1.0)?))
}

fn tokens_of(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let t = g.permute(x, &[0, 2, 3, 1])?;
    g.reshape(t, &[s[0], s[2] * s[3], s[1]])
}

/// Execute one layer with random inputs of its resolved shapes and return
/// `(parameter count, MACs)` as measured on the tape.
pub fn instrumented_layer(layer: &LayerSpec, shapes: &LayerShapes, seed: u64) -> Result<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let unsupported = |what: &str| Error::Unsupported(format!("{}: {what} cannot be executed", layer.name));
    let is_tokens = layer.tokens.is_some();
    match layer.kind {
        LayerKind::Conv2d {
            out_channels,
            kernel,
            stride,
            bias,
            ..
        } => {
            let cin = shapes.inputs[0].c;
            let w = store.add("w", Tensor::randn(&mut rng, &[out_channels, cin, kernel, kernel], 0.1)?);
            let b = bias.then(|| store.add("b", Tensor::zeros(&[out_channels]).expect("positive")));
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = map_input(&mut g, &mut rng, m)?;
                g.conv2d(x, p.var(w), b.map(|b| p.var(b)), stride, window_pad(kernel))?;
            }
        }
        LayerKind::DepthwiseConv2d {
            channels,
            kernel,
            stride,
            bias,
        } => {
            if stride != 1 || kernel % 2 == 0 {
                return Err(unsupported("strided or even depthwise convolution"));
            }
            let k = store.add("k", Tensor::randn(&mut rng, &[channels, kernel, kernel], 0.1)?);
            let b = bias.then(|| store.add("b", Tensor::zeros(&[channels]).expect("positive")));
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = map_input(&mut g, &mut rng, m)?;
                g.conv2d_depthwise(x, p.var(k), b.map(|b| p.var(b)))?;
            }
        }
        LayerKind::PointwiseConv2d { out_channels, bias, .. } => {
            let cin = shapes.inputs[0].c;
            let w = store.add("w", Tensor::randn(&mut rng, &[out_channels, cin, 1, 1], 0.1)?);
            let b = bias.then(|| store.add("b", Tensor::zeros(&[out_channels]).expect("positive")));
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = map_input(&mut g, &mut rng, m)?;
                g.conv2d(x, p.var(w), b.map(|b| p.var(b)), 1, 0)?;
            }
        }
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => {
            let w = store.add("w", Tensor::randn(&mut rng, &[in_features, out_features], 0.1)?);
            let b = bias.then(|| store.add("b", Tensor::zeros(&[out_features]).expect("positive")));
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = token_input(&mut g, &mut rng, m)?;
                g.linear(x, p.var(w), b.map(|b| p.var(b)))?;
            }
        }
        LayerKind::Mhsa { dim, heads, qkv_bias } => {
            let attn = Attention::new(&mut store, "attn", dim, heads, qkv_bias, &mut rng)?;
            let p = store.bind_frozen(&mut g);
            let joint = |g: &mut Graph, rng: &mut ChaCha8Rng, ms: &[MapShape]| -> Result<Var> {
                let n: usize = ms.iter().map(MapShape::positions).sum();
                Ok(g.constant(Tensor::randn(rng, &[1, n, dim], 1.0)?))
            };
            let q = joint(&mut g, &mut rng, &shapes.inputs)?;
            let kv = if shapes.kv.is_empty() {
                q
            } else {
                joint(&mut g, &mut rng, &shapes.kv)?
            };
            attn.forward(&mut g, &p, q, kv, kv)?;
        }
        LayerKind::SpatialReductionAttention {
            dim,
            heads,
            ratio,
            pool,
            qkv_bias,
        } => {
            let attn = Attention::new(&mut store, "attn", dim, heads, qkv_bias, &mut rng)?;
            let reduce = match (ratio, pool) {
                (Some(1), None) => None,
                (r, _) => {
                    let k = r.unwrap_or(1);
                    let w = store.add("sr.w", Tensor::randn(&mut rng, &[dim, dim, k, k], 0.1)?);
                    let b = store.add("sr.b", Tensor::zeros(&[dim])?);
                    let gamma = store.add("norm.gamma", Tensor::full(&[dim], 1.0)?);
                    let beta = store.add("norm.beta", Tensor::zeros(&[dim])?);
                    Some((k, w, b, gamma, beta))
                }
            };
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = map_input(&mut g, &mut rng, m)?;
                let q = tokens_of(&mut g, x)?;
                let kv = match reduce {
                    None => q,
                    Some((k, w, b, gamma, beta)) => {
                        let src = match pool {
                            Some(s) => g.adaptive_avg_pool2d(x, s, s)?,
                            None => x,
                        };
                        let r = g.conv2d(src, p.var(w), Some(p.var(b)), k, 0)?;
                        let r = tokens_of(&mut g, r)?;
                        g.layer_norm(r, p.var(gamma), p.var(beta))?
                    }
                };
                attn.forward(&mut g, &p, q, kv, kv)?;
            }
        }
        LayerKind::Butterfly { channels, bias } => {
            let w = store.add("w", crate::butterfly::init_weights(&mut rng, channels, 0.1)?);
            let b = bias.then(|| store.add("b", Tensor::zeros(&[channels]).expect("positive")));
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = if is_tokens {
                    g.constant(Tensor::randn(&mut rng, &[1, m.c, m.positions(), 1], 1.0)?)
                } else {
                    map_input(&mut g, &mut rng, m)?
                };
                let y = g.butterfly(x, p.var(w))?;
                if let Some(b) = b {
                    g.add_channel_bias(y, p.var(b))?;
                }
            }
        }
        LayerKind::LayerNorm { dim } => {
            let gamma = store.add("gamma", Tensor::full(&[dim], 1.0)?);
            let beta = store.add("beta", Tensor::zeros(&[dim])?);
            let p = store.bind_frozen(&mut g);
            for m in &shapes.inputs {
                let x = token_input(&mut g, &mut rng, m)?;
                g.layer_norm(x, p.var(gamma), p.var(beta))?;
            }
        }
        LayerKind::Embedding { count, dim } => {
            store.add("table", Tensor::randn(&mut rng, &[count, dim], 1.0)?);
        }
        LayerKind::MaxPool { kernel, stride } => {
            for m in &shapes.inputs {
                let x = map_input(&mut g, &mut rng, m)?;
                g.max_pool2d(x, kernel, stride, window_pad(kernel))?;
            }
        }
    }
    Ok((store.count(), g.macs()))
}

/// Instrumented `(params, MACs)` for every layer of a graph.
pub fn instrumented_profile(graph: &LayerGraph, height: usize, width: usize, seed: u64) -> Result<Vec<(u64, u64)>> {
    let shapes = propagate(graph, height, width)?;
    graph
        .layers
        .iter()
        .zip(&shapes)
        .enumerate()
        .map(|(i, (l, s))| instrumented_layer(l, s, seed.wrapping_add(i as u64)))
        .collect()
}
