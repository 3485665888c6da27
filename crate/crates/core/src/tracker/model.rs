use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::{logit, Decoder, DecoderOutput};
use crate::backbone::{AggregationMode, Aggregator, ToyBackbone};
use crate::encoder::{maps_to_tokens, Encoder, FfnKind, ScaleLayout, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Architecture of the joint detection and tracking model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub num_queries: usize,
    pub ffn: FfnKind,
    pub aggregation: AggregationMode,
    /// Detection and track decoders use the same weights.
    pub share_decoders: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            num_queries: 20,
            ffn: FfnKind::Spatial,
            aggregation: AggregationMode::ConcatFuse,
            share_decoders: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 4 || !self.channels.is_multiple_of(4) {
            return Err(Error::Config(format!("channels must be a positive multiple of 4, got {}", self.channels)));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("{} heads do not divide {} channels", self.heads, self.channels)));
        }
        if self.num_queries == 0 {
            return Err(Error::Config("at least one object query is required".into()));
        }
        Ok(())
    }
}

/// Backbone, aggregation, encoder and the two query decoders.
#[derive(Clone, Debug)]
pub struct JdtModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: ToyBackbone,
    pub aggregator: Aggregator,
    pub encoder: Encoder,
    pub det_decoder: Decoder,
    /// `None` when the detection decoder is shared.
    pub track_decoder: Option<Decoder>,
    /// Learned object queries `[Q×C]`.
    pub query_embed: ParamId,
    /// Learned reference-point logits `[Q×2]`.
    pub query_refs: ParamId,
}

impl JdtModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let backbone = ToyBackbone::new(&mut store, "backbone", c, &mut rng)?;
        let aggregator = Aggregator::new(&mut store, "aggregate", c, config.aggregation)?;
        let encoder = Encoder::new(&mut store, "encoder", config.encoder_layers, c, config.heads, config.ffn, &mut rng)?;
        let det_decoder = Decoder::new(&mut store, "det_decoder", config.decoder_layers, c, config.heads, &mut rng)?;
        let track_decoder = if config.share_decoders {
            None
        } else {
            Some(Decoder::new(&mut store, "track_decoder", config.decoder_layers, c, config.heads, &mut rng)?)
        };
        let q = config.num_queries;
        let query_embed = store.add("queries.embed", Tensor::randn(&mut rng, &[q, c], 1.0)?);
        let side = (q as f64).sqrt().ceil() as usize;
        let refs = Tensor::from_fn(&[q, 2], |i| {
            let (k, axis) = (i / 2, i % 2);
            let cell = if axis == 0 { k % side } else { k / side };
            logit((cell as f64 + 0.5) / side as f64)
        })?;
        let query_refs = store.add("queries.refs", refs);
        Ok(Self {
            config,
            store,
            backbone,
            aggregator,
            encoder,
            det_decoder,
            track_decoder,
            query_embed,
            query_refs,
        })
    }

    pub fn track_decoder(&self) -> &Decoder {
        self.track_decoder.as_ref().unwrap_or(&self.det_decoder)
    }

    /// Aggregate the current and previous pyramids and encode them.
    pub fn encode(&self, g: &mut Graph, p: &Bound, current: &[Var; 4], previous: &[Var; 4]) -> Result<TokenSequence> {
        let fused = self.aggregator.aggregate(g, p, current, previous)?;
        let s = g.shape(fused[0]).to_vec();
        let mut scales = [(0, 0); 4];
        for (dst, m) in scales.iter_mut().zip(&fused) {
            let sh = g.shape(*m);
            *dst = (sh[2], sh[3]);
        }
        let layout = ScaleLayout::new(scales, s[1])?;
        let tokens = maps_to_tokens(g, &fused, &layout)?;
        self.encoder.forward(g, p, &tokens)
    }

    /// Detection decoder over the learned object queries.
    pub fn detect(&self, g: &mut Graph, p: &Bound, memory: &TokenSequence) -> Result<DecoderOutput> {
        let b = g.shape(memory.data)[0];
        let (q, c) = (self.config.num_queries, self.config.channels);
        let mut emb = g.reshape(p.var(self.query_embed), &[1, q, c])?;
        let mut refs = g.reshape(p.var(self.query_refs), &[1, q, 2])?;
        if b > 1 {
            emb = g.concat(&vec![emb; b], 0)?;
            refs = g.concat(&vec![refs; b], 0)?;
        }
        self.det_decoder.forward(g, p, emb, refs, memory)
    }

    /// Track decoder over previous-frame object features `[1×T×C]` with
    /// reference logits `[1×T×2]`.
    pub fn track(&self, g: &mut Graph, p: &Bound, memory: &TokenSequence, features: Var, refs: Var) -> Result<DecoderOutput> {
        self.track_decoder().forward(g, p, features, refs, memory)
    }

    pub fn param_count(&self) -> u64 {
        self.store.count()
    }
}
