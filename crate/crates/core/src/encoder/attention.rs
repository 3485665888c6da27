use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{xavier, Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Scaled dot-product multi-head attention with separate query and
/// key/value inputs. Projections are stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub dim: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    /// Query/key/value biases, present when built with `qkv_bias`.
    pub qkv_bias: Option<[ParamId; 3]>,
    pub bo: ParamId,
}

pub struct AttentionOutput {
    /// `B×Nq×C`.
    pub out: Var,
    /// Softmax weights, `(B·h)×Nq×M`.
    pub weights: Var,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        qkv_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Unsupported(format!("{heads} heads do not divide width {dim}")));
        }
        let mut proj = |store: &mut ParamStore, p: &str| store.add(format!("{name}.{p}"), xavier(rng, &[dim, dim], dim, dim));
        let wq = proj(store, "wq");
        let wk = proj(store, "wk");
        let wv = proj(store, "wv");
        let wo = proj(store, "wo");
        let qkv_bias = qkv_bias.then(|| {
            ["bq", "bk", "bv"].map(|p| store.add(format!("{name}.{p}"), Tensor::zeros(&[dim]).expect("dim > 0")))
        });
        let bo = store.add(format!("{name}.bo"), Tensor::zeros(&[dim])?);
        Ok(Self {
            dim,
            heads,
            wq,
            wk,
            wv,
            wo,
            qkv_bias,
            bo,
        })
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let [b, n, _] = dims3(g.shape(x))?;
        let d = self.dim / self.heads;
        let t = g.reshape(x, &[b, n, self.heads, d])?;
        let t = g.permute(t, &[0, 2, 1, 3])?;
        g.reshape(t, &[b * self.heads, n, d])
    }

    /// `query[B×Nq×C]` attends over `key`/`value[B×M×C]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, query: Var, key: Var, value: Var) -> Result<AttentionOutput> {
        let [b, nq, c] = dims3(g.shape(query))?;
        let [bk, _, ck] = dims3(g.shape(key))?;
        if c != self.dim || ck != self.dim || bk != b || g.shape(value) != g.shape(key) {
            return Err(Error::dim(format!(
                "attention inputs {:?}/{:?}/{:?} do not fit width {}",
                g.shape(query),
                g.shape(key),
                g.shape(value),
                self.dim
            )));
        }
        let bias = |i: usize| self.qkv_bias.map(|ids| p.var(ids[i]));
        let q = g.linear(query, p.var(self.wq), bias(0))?;
        let k = g.linear(key, p.var(self.wk), bias(1))?;
        let v = g.linear(value, p.var(self.wv), bias(2))?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let v = self.split_heads(g, v)?;
        let kt = g.transpose_last(k)?;
        let scores = g.bmm(q, kt)?;
        let d = (self.dim / self.heads) as f64;
        let scores = g.scale(scores, 1.0 / d.sqrt());
        let weights = g.softmax_rows(scores);
        let ctx = g.bmm(weights, v)?;
        let ctx = g.reshape(ctx, &[b, self.heads, nq, self.dim / self.heads])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, nq, self.dim])?;
        let out = g.linear(ctx, p.var(self.wo), Some(p.var(self.bo)))?;
        Ok(AttentionOutput { out, weights })
    }

    /// Self-attention shorthand.
    pub fn self_attend(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<AttentionOutput> {
        self.forward(g, p, x, x, x)
    }
}

pub(crate) fn dims3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [a, b, c] => Ok([*a, *b, *c]),
        s => Err(Error::dim(format!("expected B×N×C, got {s:?}"))),
    }
}

/// MACs of one attention call: 2·Nq·C² + 2·M·C² for projections plus
/// 2·Nq·M·C for scores and value aggregation.
pub fn attention_macs(nq: usize, m: usize, c: usize) -> u64 {
    (2 * nq * c * c + 2 * m * c * c + 2 * nq * m * c) as u64
}
