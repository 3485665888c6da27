//! Toy four-stage pyramid backbone, previous-frame cache and feature
//! aggregation.
//!
//! Stage 1 patchifies the image with an 8×8/stride-8 convolution; stages 2–4
//! halve the resolution with 2×2/stride-2 convolutions. Every stage ends in a
//! residual pointwise mixing block `x + ReLU(W·x + b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PYRAMID_STRIDES;
use crate::error::{Error, Result};
use crate::tensor::{xavier, Bound, Graph, ParamId, ParamStore, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct Stage {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub kernel: usize,
    pub mix_w: ParamId,
    pub mix_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct ToyBackbone {
    pub channels: usize,
    pub stages: Vec<Stage>,
}

impl ToyBackbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Unsupported("backbone needs at least one channel".into()));
        }
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let (cin, k) = if i == 0 { (IMAGE_CHANNELS, PYRAMID_STRIDES[0]) } else { (channels, 2) };
            let fan_in = cin * k * k;
            let patch_w = store.add(
                format!("{name}.stage{i}.patch_w"),
                xavier(rng, &[channels, cin, k, k], fan_in, channels),
            );
            let patch_b = store.add(format!("{name}.stage{i}.patch_b"), Tensor::zeros(&[channels])?);
            let mix_w = store.add(
                format!("{name}.stage{i}.mix_w"),
                xavier(rng, &[channels, channels, 1, 1], channels, channels),
            );
            let mix_b = store.add(format!("{name}.stage{i}.mix_b"), Tensor::zeros(&[channels])?);
            stages.push(Stage {
                patch_w,
                patch_b,
                kernel: k,
                mix_w,
                mix_b,
            });
        }
        Ok(Self { channels, stages })
    }

    /// Four maps at strides 8, 16, 32, 64 for `image[B×3×H×W]`.
    pub fn extract(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<[Var; 4]> {
        match g.shape(image) {
            [_, c, h, w] if *c == IMAGE_CHANNELS && h % 64 == 0 && w % 64 == 0 => {}
            s => {
                return Err(Error::dim(format!(
                    "backbone input must be B×3×H×W with H, W divisible by 64, got {s:?}"
                )))
            }
        }
        let mut x = image;
        let mut maps = [image; 4];
        for (out, st) in maps.iter_mut().zip(&self.stages) {
            let y = g.conv2d(x, p.var(st.patch_w), Some(p.var(st.patch_b)), st.kernel, 0)?;
            let m = g.conv2d(y, p.var(st.mix_w), Some(p.var(st.mix_b)), 1, 0)?;
            let m = g.relu(m);
            x = g.add(y, m)?;
            *out = x;
        }
        Ok(maps)
    }
}

/// Four feature maps of one frame, held by value.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub maps: [Tensor; 4],
    pub frame_index: u64,
}

impl FeaturePyramid {
    pub fn new(maps: [Tensor; 4], frame_index: u64) -> Result<Self> {
        let first = maps[0].shape();
        if first.len() != 4 {
            return Err(Error::dim(format!("pyramid maps must be 4-D, got {first:?}")));
        }
        for i in 1..4 {
            let (prev, cur) = (maps[i - 1].shape(), maps[i].shape());
            if cur.len() != 4
                || cur[0] != prev[0]
                || cur[1] != prev[1]
                || cur[2] != prev[2].div_ceil(2)
                || cur[3] != prev[3].div_ceil(2)
            {
                return Err(Error::dim(format!("pyramid level {i} {cur:?} does not halve {prev:?}")));
            }
        }
        Ok(Self { maps, frame_index })
    }

    pub fn from_graph(g: &Graph, maps: &[Var; 4], frame_index: u64) -> Result<Self> {
        Self::new(maps.each_ref().map(|&m| g.value(m).clone()), frame_index)
    }

    /// Put the maps on a graph as constants.
    pub fn to_graph(&self, g: &mut Graph) -> [Var; 4] {
        self.maps.each_ref().map(|t| g.constant(t.clone()))
    }
}

/// Most recent pyramid of a tracking session.
#[derive(Clone, Debug, Default)]
pub struct FrameCache {
    last: Option<FeaturePyramid>,
}

impl FrameCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> Option<&FeaturePyramid> {
        self.last.as_ref()
    }

    /// Store `pyramid`; its frame index must exceed the cached one.
    pub fn update(&mut self, pyramid: FeaturePyramid) -> Result<()> {
        if let Some(prev) = &self.last {
            if pyramid.frame_index <= prev.frame_index {
                return Err(Error::Input(format!(
                    "frame {} already processed (cache holds frame {})",
                    pyramid.frame_index, prev.frame_index
                )));
            }
        }
        self.last = Some(pyramid);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Channel concat then learned pointwise fusion 2C → C.
    #[default]
    ConcatFuse,
    /// Parameter-free average.
    Mean,
}

#[derive(Clone, Debug)]
pub struct Aggregator {
    pub mode: AggregationMode,
    /// Per-scale `(weight[C×2C×1×1], bias[C])` for [`AggregationMode::ConcatFuse`].
    pub fuse: Vec<(ParamId, ParamId)>,
}

impl Aggregator {
    /// Fusion weights start as the halved identity sum, so aggregating a
    /// pyramid with itself returns it unchanged.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, mode: AggregationMode) -> Result<Self> {
        let mut fuse = Vec::new();
        if mode == AggregationMode::ConcatFuse {
            for i in 0..4 {
                let c2 = 2 * channels;
                let w = Tensor::from_fn(&[channels, c2, 1, 1], |idx| {
                    let (o, c) = (idx / c2, idx % c2);
                    if c % channels == o {
                        0.5
                    } else {
                        0.0
                    }
                })?;
                let wid = store.add(format!("{name}.scale{i}.w"), w);
                let bid = store.add(format!("{name}.scale{i}.b"), Tensor::zeros(&[channels])?);
                fuse.push((wid, bid));
            }
        }
        Ok(Self { mode, fuse })
    }

    pub fn aggregate(&self, g: &mut Graph, p: &Bound, current: &[Var; 4], previous: &[Var; 4]) -> Result<[Var; 4]> {
        let mut out = *current;
        for i in 0..4 {
            if g.shape(current[i]) != g.shape(previous[i]) {
                return Err(Error::dim(format!(
                    "scale {i}: current {:?} and previous {:?} differ",
                    g.shape(current[i]),
                    g.shape(previous[i])
                )));
            }
            out[i] = match self.mode {
                AggregationMode::ConcatFuse => {
                    let cat = g.concat(&[current[i], previous[i]], 1)?;
                    let (w, b) = self.fuse[i];
                    g.conv2d(cat, p.var(w), Some(p.var(b)), 1, 0)?
                }
                AggregationMode::Mean => {
                    let s = g.add(current[i], previous[i])?;
                    g.scale(s, 0.5)
                }
            };
        }
        Ok(out)
    }
}
