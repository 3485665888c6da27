use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Aggregation,
    Encoder,
    Decoder,
    Output,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Backbone, Group::Aggregation, Group::Encoder, Group::Decoder, Group::Output];

    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Backbone => "backbone",
            Group::Aggregation => "aggregation",
            Group::Encoder => "encoder",
            Group::Decoder => "decoder",
            Group::Output => "output",
        }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Layer kind with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Dense convolution, padding `(k−1)/2` for odd `k`; even `k` must equal
    /// the stride (non-overlapping patches).
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    DepthwiseConv2d {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    PointwiseConv2d {
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    /// Multi-head attention; self-attention unless the layer names a
    /// key/value extent.
    Mhsa {
        dim: usize,
        heads: usize,
        #[serde(default)]
        qkv_bias: bool,
    },
    /// Attention whose keys and values come from a spatially reduced copy of
    /// the map: a `ratio×ratio` strided convolution, or adaptive average
    /// pooling to `pool×pool` followed by a pointwise convolution. Both end in
    /// a layer norm.
    SpatialReductionAttention {
        dim: usize,
        heads: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool: Option<usize>,
        #[serde(default)]
        qkv_bias: bool,
    },
    Butterfly {
        channels: usize,
        #[serde(default)]
        bias: bool,
    },
    LayerNorm {
        dim: usize,
    },
    /// Learned table, e.g. object queries.
    Embedding {
        count: usize,
        dim: usize,
    },
    /// Max pooling, padding `(k−1)/2`.
    MaxPool {
        kernel: usize,
        stride: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::DepthwiseConv2d { .. } => "depthwise_conv2d",
            LayerKind::PointwiseConv2d { .. } => "pointwise_conv2d",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Mhsa { .. } => "mhsa",
            LayerKind::SpatialReductionAttention { .. } => "spatial_reduction_attention",
            LayerKind::Butterfly { .. } => "butterfly",
            LayerKind::LayerNorm { .. } => "layer_norm",
            LayerKind::Embedding { .. } => "embedding",
            LayerKind::MaxPool { .. } => "max_pool",
        }
    }
}

/// One entry of a layer graph.
///
/// The extent says what the layer runs over: `at` lists feature-map strides
/// (1 is the input image), `tokens` a fixed token set such as decoder
/// queries. Convolutions and pooling write their result to the map at
/// `stride × at`; every other kind keeps the map size and may change its
/// width. `concat` multiplies the input width (channel concatenation of
/// that many copies) and `branch` marks a residual side path whose output
/// is not kept. `kv_at`/`kv_tokens` turn an attention layer into
/// cross-attention. Attention over several maps attends jointly over all of
/// their tokens; all other kinds treat the maps independently.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub group: Group,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub at: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kv_at: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concat: Option<usize>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub branch: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, group: Group, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            group,
            kind,
            at: Vec::new(),
            tokens: None,
            kv_at: Vec::new(),
            kv_tokens: None,
            concat: None,
            branch: false,
        }
    }

    pub fn at(mut self, strides: &[usize]) -> Self {
        self.at = strides.to_vec();
        self
    }

    pub fn tokens(mut self, n: usize) -> Self {
        self.tokens = Some(n);
        self
    }

    pub fn kv_at(mut self, strides: &[usize]) -> Self {
        self.kv_at = strides.to_vec();
        self
    }

    pub fn kv_tokens(mut self, n: usize) -> Self {
        self.kv_tokens = Some(n);
        self
    }

    pub fn concat(mut self, factor: usize) -> Self {
        self.concat = Some(factor);
        self
    }

    pub fn branch(mut self) -> Self {
        self.branch = true;
        self
    }
}

/// A named list of layers applied to a `input_channels×H×W` image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub input_channels: usize,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

impl LayerGraph {
    pub fn new(name: impl Into<String>, input_channels: usize) -> Self {
        Self {
            name: name.into(),
            description: String::new(),
            input_channels,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: LayerSpec) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("layer graph: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("layer graph: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}
