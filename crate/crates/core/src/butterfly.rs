//! Butterfly channel fusion.
//!
//! A 1×1 pointwise convolution over N channels is a dense N×N matrix applied
//! at every spatial position. The butterfly layer factors that matrix into
//! log₂N sparse stages with FFT wiring: at stage `s`, output channel `i` mixes
//! input channels `i` and `i ^ 2^s`. The composed map reaches every output
//! from every input with 2·N·log₂N weights instead of N².

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{butterfly_kernel, Graph, Tensor, Var};

/// Standard deviation of the noise added to identity stages at init.
pub const INIT_NOISE_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ButterflyLayer {
    channels: usize,
    /// `[stages, channels, 2]`: `[s, i, 0]` weighs input `i`, `[s, i, 1]` weighs input `i ^ 2^s`.
    weights: Tensor,
    bias: Option<Vec<f64>>,
}

fn check_channels(n: usize) -> Result<usize> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Unsupported(format!(
            "butterfly channel count must be a power of two >= 2, got {n}"
        )));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Stage weights that leave the input unchanged.
pub fn identity_weights(n: usize) -> Result<Tensor> {
    let stages = check_channels(n)?;
    Tensor::from_fn(&[stages, n, 2], |i| if i % 2 == 0 { 1.0 } else { 0.0 })
}

/// Identity stages plus N(0, σ²) noise on every weight.
pub fn init_weights<R: Rng + ?Sized>(rng: &mut R, n: usize, sigma: f64) -> Result<Tensor> {
    let mut w = identity_weights(n)?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Input(e.to_string()))?;
    w.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
    Ok(w)
}

impl ButterflyLayer {
    pub fn identity(channels: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            channels,
            weights: identity_weights(channels)?,
            bias: bias.then(|| vec![0.0; channels]),
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, channels: usize, sigma: f64) -> Result<Self> {
        Ok(Self {
            channels,
            weights: init_weights(rng, channels, sigma)?,
            bias: None,
        })
    }

    pub fn from_weights(channels: usize, weights: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        let stages = check_channels(channels)?;
        if weights.shape() != [stages, channels, 2] {
            return Err(Error::dim(format!(
                "butterfly weights {:?} != [{stages}, {channels}, 2]",
                weights.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != channels {
                return Err(Error::dim(format!("butterfly bias has {} entries, need {channels}", b.len())));
            }
        }
        Ok(Self { channels, weights, bias })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stages(&self) -> usize {
        self.channels.trailing_zeros() as usize
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    /// Apply all stages to `x[B×N×H×W]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (bsz, positions) = match x.shape() {
            [b, n, h, w] if *n == self.channels => (*b, h * w),
            [_, n, _, _] => {
                return Err(Error::dim(format!(
                    "input has {n} channels, layer expects {}",
                    self.channels
                )))
            }
            s => return Err(Error::dim(format!("butterfly input must be B×N×H×W, got {s:?}"))),
        };
        let (mut out, _) = butterfly_kernel(x.data(), self.weights.data(), bsz, self.channels, positions);
        if let Some(b) = &self.bias {
            for (row, chunk) in out.chunks_mut(positions).enumerate() {
                let bv = b[row % self.channels];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    /// Forward on a tape: weights (and optional bias) are graph variables.
    pub fn apply(g: &mut Graph, x: Var, weights: Var, bias: Option<Var>) -> Result<Var> {
        let y = g.butterfly(x, weights)?;
        match bias {
            None => Ok(y),
            Some(b) => g.add_channel_bias(y, b),
        }
    }

    /// The dense N×N matrix this layer applies, built as the product of the
    /// explicit per-stage sparse matrices (an independent route from `forward`).
    pub fn to_dense(&self) -> Tensor {
        let n = self.channels;
        let w = self.weights.data();
        let mut acc = Tensor::eye(n).expect("n >= 2");
        for s in 0..self.stages() {
            let stride = 1 << s;
            let stage = Tensor::from_fn(&[n, n], |idx| {
                let (i, j) = (idx / n, idx % n);
                if j == i {
                    w[(s * n + i) * 2]
                } else if j == i ^ stride {
                    w[(s * n + i) * 2 + 1]
                } else {
                    0.0
                }
            })
            .expect("square");
            acc = stage.matmul(&acc).expect("square");
        }
        acc
    }

    /// Multiply-accumulates for one sample at `h×w` positions.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        butterfly_macs(self.channels, h, w)
    }

    pub fn param_count(&self) -> u64 {
        butterfly_params(self.channels, self.bias.is_some())
    }
}

/// 2·N·log₂N·H·W.
pub fn butterfly_macs(n: usize, h: usize, w: usize) -> u64 {
    let log = n.trailing_zeros() as u64;
    2 * n as u64 * log * (h * w) as u64
}

pub fn butterfly_params(n: usize, bias: bool) -> u64 {
    let log = n.trailing_zeros() as u64;
    2 * n as u64 * log + if bias { n as u64 } else { 0 }
}

/// MACs of the dense pointwise convolution the butterfly replaces: N²·H·W.
pub fn dense_pointwise_macs(n: usize, h: usize, w: usize) -> u64 {
    (n * n * h * w) as u64
}
