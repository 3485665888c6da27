//! Layer graphs shipped with the crate.
//!
//! The full-size graphs are best-effort reconstructions from the public
//! definitions of the architectures; normalization layers that fold into
//! convolutions at inference (batch norm) are omitted. Deformable attention
//! is accounted by its projections only (value, sampling offsets, attention
//! weights, output); the bilinear sampling itself is not counted.

use super::graph::{Group, LayerGraph, LayerKind, LayerSpec};
use crate::backbone::AggregationMode;
use crate::encoder::{FfnKind, DEPTHWISE_KERNEL, PYRAMID_STRIDES};
use crate::tracker::{ModelConfig, DECODER_FFN_EXPANSION};

fn conv(cin: usize, cout: usize, k: usize, s: usize, bias: bool) -> LayerKind {
    LayerKind::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride: s,
        bias,
    }
}

fn pw(cin: usize, cout: usize, bias: bool) -> LayerKind {
    LayerKind::PointwiseConv2d {
        in_channels: cin,
        out_channels: cout,
        bias,
    }
}

fn linear(i: usize, o: usize) -> LayerKind {
    LayerKind::Linear {
        in_features: i,
        out_features: o,
        bias: true,
    }
}

fn ln(dim: usize) -> LayerKind {
    LayerKind::LayerNorm { dim }
}

fn mhsa(dim: usize, heads: usize) -> LayerKind {
    LayerKind::Mhsa {
        dim,
        heads,
        qkv_bias: false,
    }
}

/// The toy four-stage backbone.
pub fn toy_backbone(channels: usize) -> LayerGraph {
    let mut g = LayerGraph::new("toy_backbone", 3);
    let c = channels;
    let mut at = 1;
    for (i, &s) in PYRAMID_STRIDES.iter().enumerate() {
        let (cin, k) = if i == 0 { (3, s) } else { (c, 2) };
        g.push(LayerSpec::new(format!("stage{i}.patch"), Group::Backbone, conv(cin, c, k, k, true)).at(&[at]));
        g.push(LayerSpec::new(format!("stage{i}.mix"), Group::Backbone, pw(c, c, true)).at(&[s]));
        at = s;
    }
    g
}

fn toy_encoder(g: &mut LayerGraph, cfg: &ModelConfig) {
    let c = cfg.channels;
    let all = &PYRAMID_STRIDES;
    for l in 0..cfg.encoder_layers {
        let n = |s: &str| format!("encoder.{l}.{s}");
        g.push(LayerSpec::new(n("norm1"), Group::Encoder, ln(c)).at(all));
        g.push(LayerSpec::new(n("attn"), Group::Encoder, mhsa(c, cfg.heads)).at(all));
        g.push(LayerSpec::new(n("norm2"), Group::Encoder, ln(c)).at(all));
        match cfg.ffn {
            FfnKind::Spatial => {
                let bt = LayerKind::Butterfly { channels: c, bias: false };
                g.push(LayerSpec::new(n("ffn.bt1"), Group::Encoder, bt.clone()).at(all));
                g.push(
                    LayerSpec::new(
                        n("ffn.dw"),
                        Group::Encoder,
                        LayerKind::DepthwiseConv2d {
                            channels: c,
                            kernel: DEPTHWISE_KERNEL,
                            stride: 1,
                            bias: true,
                        },
                    )
                    .at(all),
                );
                g.push(LayerSpec::new(n("ffn.bt2"), Group::Encoder, bt).at(all));
                g.push(LayerSpec::new(n("ffn.proj"), Group::Encoder, linear(c, c)).at(all));
            }
            FfnKind::Standard { expansion } => {
                g.push(LayerSpec::new(n("ffn.fc1"), Group::Encoder, linear(c, expansion * c)).at(all));
                g.push(LayerSpec::new(n("ffn.fc2"), Group::Encoder, linear(expansion * c, c)).at(all));
            }
        }
    }
}

/// Detection path of the toy model: backbone, aggregation, encoder,
/// detection decoder and heads. A separate track decoder, when configured,
/// adds its parameters but no MACs here since its query count varies.
pub fn toy_model(cfg: &ModelConfig) -> LayerGraph {
    let mut g = toy_backbone(cfg.channels);
    g.name = "toy".into();
    g.description = format!(
        "toy joint detection and tracking model, C={}, {} encoder and {} decoder layers, {} queries",
        cfg.channels, cfg.encoder_layers, cfg.decoder_layers, cfg.num_queries
    );
    let c = cfg.channels;
    if cfg.aggregation == AggregationMode::ConcatFuse {
        for (i, &s) in PYRAMID_STRIDES.iter().enumerate() {
            g.push(
                LayerSpec::new(format!("aggregate.scale{i}"), Group::Aggregation, pw(2 * c, c, true))
                    .at(&[s])
                    .concat(2),
            );
        }
    }
    toy_encoder(&mut g, cfg);
    let q = cfg.num_queries;
    g.push(
        LayerSpec::new("queries.refs", Group::Decoder, LayerKind::Embedding { count: q, dim: 2 }),
    );
    g.push(LayerSpec::new("queries.embed", Group::Decoder, LayerKind::Embedding { count: q, dim: c }).tokens(q));
    let decoders: &[&str] = if cfg.share_decoders {
        &["det_decoder"]
    } else {
        &["det_decoder", "track_decoder"]
    };
    for (d, name) in decoders.iter().enumerate() {
        let mut layers = Vec::new();
        for l in 0..cfg.decoder_layers {
            let n = |s: &str| format!("{name}.{l}.{s}");
            let e = DECODER_FFN_EXPANSION;
            layers.push(LayerSpec::new(n("norm1"), Group::Decoder, ln(c)).tokens(q));
            layers.push(LayerSpec::new(n("self_attn"), Group::Decoder, mhsa(c, cfg.heads)).tokens(q));
            layers.push(LayerSpec::new(n("norm2"), Group::Decoder, ln(c)).tokens(q));
            layers.push(
                LayerSpec::new(n("cross_attn"), Group::Decoder, mhsa(c, cfg.heads))
                    .tokens(q)
                    .kv_at(&PYRAMID_STRIDES),
            );
            layers.push(LayerSpec::new(n("norm3"), Group::Decoder, ln(c)).tokens(q));
            layers.push(LayerSpec::new(n("ffn.fc1"), Group::Decoder, linear(c, e * c)).tokens(q));
            layers.push(LayerSpec::new(n("ffn.fc2"), Group::Decoder, linear(e * c, c)).tokens(q));
        }
        layers.push(LayerSpec::new(format!("{name}.norm"), Group::Decoder, ln(c)).tokens(q));
        layers.push(LayerSpec::new(format!("{name}.class"), Group::Output, linear(c, 2)).tokens(q).branch());
        layers.push(LayerSpec::new(format!("{name}.box1"), Group::Output, linear(c, c)).tokens(q).branch());
        layers.push(LayerSpec::new(format!("{name}.box2"), Group::Output, linear(c, 4)).tokens(q).branch());
        if d > 0 {
            // Parameters only: the extra decoder runs on a variable number of
            // track queries.
            for l in &mut layers {
                *l = LayerSpec::new(l.name.clone(), l.group, param_only(&l.kind));
            }
        }
        for l in layers {
            g.push(l);
        }
    }
    g
}

/// An embedding with the same parameter count as `kind`.
fn param_only(kind: &LayerKind) -> LayerKind {
    let count = match *kind {
        LayerKind::LayerNorm { dim } => 2 * dim,
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => in_features * out_features + if bias { out_features } else { 0 },
        LayerKind::Mhsa { dim, qkv_bias, .. } => 4 * dim * dim + dim + if qkv_bias { 3 * dim } else { 0 },
        _ => 0,
    };
    LayerKind::Embedding { count, dim: 1 }
}

/// ResNet-50 feature extractor (stem and four bottleneck stages, no
/// classifier). Downsampling blocks stride their first 1×1 convolution, so
/// every stage output stays available at its own stride.
pub fn resnet50() -> LayerGraph {
    let mut g = LayerGraph::new("resnet50", 3);
    g.description = "ResNet-50 backbone up to stride 32, batch norm omitted".into();
    resnet50_into(&mut g, Group::Backbone);
    g
}

fn resnet50_into(g: &mut LayerGraph, group: Group) {
    g.push(LayerSpec::new("stem.conv", group, conv(3, 64, 7, 2, false)).at(&[1]));
    g.push(LayerSpec::new("stem.pool", group, LayerKind::MaxPool { kernel: 3, stride: 2 }).at(&[2]));
    let stages = [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)];
    let (mut at, mut cin) = (4, 64);
    for (si, &(blocks, mid, stride)) in stages.iter().enumerate() {
        let out = mid * 4;
        for b in 0..blocks {
            let s = if b == 0 { stride } else { 1 };
            let n = |x: &str| format!("layer{}.{b}.{x}", si + 1);
            if b == 0 {
                g.push(LayerSpec::new(n("downsample"), group, conv(cin, out, 1, s, false)).at(&[at]).branch());
            }
            g.push(LayerSpec::new(n("conv1"), group, conv(cin, mid, 1, s, false)).at(&[at]));
            at *= s;
            g.push(LayerSpec::new(n("conv2"), group, conv(mid, mid, 3, 1, false)).at(&[at]));
            g.push(LayerSpec::new(n("conv3"), group, pw(mid, out, false)).at(&[at]));
            cin = out;
        }
    }
}

/// PVT v2-b1 embedding dims, heads, MLP ratios and reduction ratios.
const PVT_B1: [(usize, usize, usize, usize); 4] = [(64, 1, 8, 8), (128, 2, 8, 4), (320, 5, 4, 2), (512, 8, 4, 1)];
const PVT_B1_DEPTH: usize = 2;
const PVT_LINEAR_POOL: usize = 7;

/// PVT v2-b1. `linear` selects the pooled (linear-complexity) spatial
/// reduction attention; otherwise the strided-convolution reduction is used.
pub fn pvt_v2_b1(linear: bool) -> LayerGraph {
    let mut g = LayerGraph::new(if linear { "pvt_v2_b1_li" } else { "pvt_v2_b1" }, 3);
    g.description = format!(
        "PVT v2-b1 backbone, {} spatial reduction attention",
        if linear { "pooled" } else { "strided" }
    );
    pvt_into(&mut g, linear, Group::Backbone);
    g
}

fn pvt_into(g: &mut LayerGraph, linear_sra: bool, group: Group) {
    let (mut at, mut cin) = (1, 3);
    for (i, &(c, heads, mlp, sr)) in PVT_B1.iter().enumerate() {
        let (k, s) = if i == 0 { (7, 4) } else { (3, 2) };
        let n = |x: &str| format!("stage{}.{x}", i + 1);
        g.push(LayerSpec::new(n("patch_embed"), group, conv(cin, c, k, s, true)).at(&[at]));
        at *= s;
        g.push(LayerSpec::new(n("patch_norm"), group, ln(c)).at(&[at]));
        for b in 0..PVT_B1_DEPTH {
            let n = |x: &str| format!("stage{}.{b}.{x}", i + 1);
            g.push(LayerSpec::new(n("norm1"), group, ln(c)).at(&[at]));
            let (ratio, pool) = if linear_sra { (None, Some(PVT_LINEAR_POOL)) } else { (Some(sr), None) };
            g.push(
                LayerSpec::new(
                    n("attn"),
                    group,
                    LayerKind::SpatialReductionAttention {
                        dim: c,
                        heads,
                        ratio,
                        pool,
                        qkv_bias: true,
                    },
                )
                .at(&[at]),
            );
            g.push(LayerSpec::new(n("norm2"), group, ln(c)).at(&[at]));
            g.push(LayerSpec::new(n("mlp.fc1"), group, linear(c, mlp * c)).at(&[at]));
            g.push(
                LayerSpec::new(
                    n("mlp.dwconv"),
                    group,
                    LayerKind::DepthwiseConv2d {
                        channels: mlp * c,
                        kernel: 3,
                        stride: 1,
                        bias: true,
                    },
                )
                .at(&[at]),
            );
            g.push(LayerSpec::new(n("mlp.fc2"), group, linear(mlp * c, c)).at(&[at]));
        }
        g.push(LayerSpec::new(n("norm"), group, ln(c)).at(&[at]));
        cin = c;
    }
}

/// Transformer width, heads, queries, layers and deformable sampling
/// geometry (levels × points) of the full-size trackers.
const D_MODEL: usize = 256;
const D_HEADS: usize = 8;
const D_QUERIES: usize = 500;
const D_LAYERS: usize = 6;
const D_FFN: usize = 1024;
const D_LEVELS: usize = 4;
const D_POINTS: usize = 4;

/// Deformable attention as its four projections; values are projected over
/// the memory maps, the remaining ones over the queries.
fn deformable_attn(g: &mut LayerGraph, prefix: &str, group: Group, query: &LayerSpec) {
    let c = D_MODEL;
    let samples = D_HEADS * D_LEVELS * D_POINTS;
    let on_query = |name: &str, kind: LayerKind| {
        let mut l = query.clone();
        l.name = format!("{prefix}.{name}");
        l.kind = kind;
        l.group = group;
        l
    };
    g.push(
        LayerSpec::new(format!("{prefix}.value_proj"), group, linear(c, c))
            .at(&PYRAMID_STRIDES)
            .branch(),
    );
    g.push(on_query("sampling_offsets", linear(c, 2 * samples)).branch());
    g.push(on_query("attention_weights", linear(c, samples)).branch());
    g.push(on_query("output_proj", linear(c, c)));
}

/// Input projections of the stride 8/16/32 maps to the transformer width,
/// plus the extra stride-64 level computed from the stride-32 map.
fn input_projection(g: &mut LayerGraph, widths: [usize; 3]) {
    let c = D_MODEL;
    g.push(LayerSpec::new("input_proj.extra", Group::Backbone, conv(widths[2], c, 3, 2, true)).at(&[32]));
    for (s, w) in [8, 16, 32].into_iter().zip(widths) {
        g.push(LayerSpec::new(format!("input_proj.s{s}"), Group::Backbone, pw(w, c, true)).at(&[s]));
    }
}

fn full_transformer(g: &mut LayerGraph, spatial_ffn: bool) {
    let c = D_MODEL;
    for (i, &s) in PYRAMID_STRIDES.iter().enumerate() {
        g.push(
            LayerSpec::new(format!("aggregate.scale{i}"), Group::Aggregation, pw(2 * c, c, true))
                .at(&[s])
                .concat(2),
        );
    }
    let all = &PYRAMID_STRIDES;
    for l in 0..D_LAYERS {
        let n = |x: &str| format!("encoder.{l}.{x}");
        let q = LayerSpec::new("", Group::Encoder, ln(c)).at(all);
        deformable_attn(g, &n("attn"), Group::Encoder, &q);
        g.push(LayerSpec::new(n("norm1"), Group::Encoder, ln(c)).at(all));
        if spatial_ffn {
            let bt = LayerKind::Butterfly { channels: c, bias: false };
            g.push(LayerSpec::new(n("ffn.bt1"), Group::Encoder, bt.clone()).at(all));
            g.push(
                LayerSpec::new(
                    n("ffn.dw"),
                    Group::Encoder,
                    LayerKind::DepthwiseConv2d {
                        channels: c,
                        kernel: DEPTHWISE_KERNEL,
                        stride: 1,
                        bias: true,
                    },
                )
                .at(all),
            );
            g.push(LayerSpec::new(n("ffn.bt2"), Group::Encoder, bt).at(all));
            g.push(LayerSpec::new(n("ffn.proj"), Group::Encoder, linear(c, c)).at(all));
        } else {
            g.push(LayerSpec::new(n("ffn.fc1"), Group::Encoder, linear(c, D_FFN)).at(all));
            g.push(LayerSpec::new(n("ffn.fc2"), Group::Encoder, linear(D_FFN, c)).at(all));
        }
        g.push(LayerSpec::new(n("norm2"), Group::Encoder, ln(c)).at(all));
    }

    let q = D_QUERIES;
    g.push(LayerSpec::new("queries.embed", Group::Decoder, LayerKind::Embedding { count: q, dim: c }).tokens(q));
    g.push(LayerSpec::new("queries.pos", Group::Decoder, LayerKind::Embedding { count: q, dim: c }));
    g.push(LayerSpec::new("queries.ref", Group::Decoder, linear(c, 2)).tokens(q).branch());
    for dec in ["det_decoder", "track_decoder"] {
        for l in 0..D_LAYERS {
            let n = |x: &str| format!("{dec}.{l}.{x}");
            g.push(LayerSpec::new(n("self_attn"), Group::Decoder, mhsa(c, D_HEADS)).tokens(q));
            g.push(LayerSpec::new(n("norm1"), Group::Decoder, ln(c)).tokens(q));
            let query = LayerSpec::new("", Group::Decoder, ln(c)).tokens(q);
            deformable_attn(g, &n("cross_attn"), Group::Decoder, &query);
            g.push(LayerSpec::new(n("norm2"), Group::Decoder, ln(c)).tokens(q));
            g.push(LayerSpec::new(n("ffn.fc1"), Group::Decoder, linear(c, D_FFN)).tokens(q));
            g.push(LayerSpec::new(n("ffn.fc2"), Group::Decoder, linear(D_FFN, c)).tokens(q));
            g.push(LayerSpec::new(n("norm3"), Group::Decoder, ln(c)).tokens(q));
        }
        g.push(LayerSpec::new(format!("{dec}.class"), Group::Output, linear(c, 2)).tokens(q).branch());
        g.push(LayerSpec::new(format!("{dec}.box1"), Group::Output, linear(c, c)).tokens(q).branch());
        g.push(LayerSpec::new(format!("{dec}.box2"), Group::Output, linear(c, c)).tokens(q).branch());
        g.push(LayerSpec::new(format!("{dec}.box3"), Group::Output, linear(c, 4)).tokens(q).branch());
    }
}

/// Baseline full-size tracker: ResNet-50, four-level projection, feature
/// aggregation, six-layer deformable encoder with the standard FFN and two
/// six-layer decoders (detection and tracking) over 500 queries.
pub fn transtrack_like() -> LayerGraph {
    let mut g = LayerGraph::new("transtrack_like", 3);
    g.description = "baseline: ResNet-50 + deformable transformer, standard FFN".into();
    resnet50_into(&mut g, Group::Backbone);
    input_projection(&mut g, [512, 1024, 2048]);
    full_transformer(&mut g, false);
    g
}

/// Proposed full-size tracker: PVT v2-b1 (pooled reduction) backbone and the
/// butterfly/depthwise spatial FFN in every encoder layer.
pub fn proposed() -> LayerGraph {
    let mut g = LayerGraph::new("proposed", 3);
    g.description = "proposed: PVT v2-b1 + deformable transformer, spatial butterfly FFN".into();
    pvt_into(&mut g, true, Group::Backbone);
    input_projection(&mut g, [PVT_B1[1].0, PVT_B1[2].0, PVT_B1[3].0]);
    full_transformer(&mut g, true);
    g
}

/// Every bundled graph with the file name it ships under.
pub fn bundled() -> Vec<(&'static str, LayerGraph)> {
    vec![
        ("toy.toml", toy_model(&ModelConfig::default())),
        ("resnet50.toml", resnet50()),
        ("pvt_v2_b1.toml", pvt_v2_b1(true)),
        ("transtrack_like.toml", transtrack_like()),
        ("proposed.toml", proposed()),
    ]
}
