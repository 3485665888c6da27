use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::boxes::Box;
use super::decoder::logit;
use super::loss::{set_loss, LossConfig};
use super::model::JdtModel;
use crate::error::{Error, Result};
use crate::tensor::{clip_grad_norm, AdamW, Bound, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Draw a random flip/transpose and color-channel permutation per pair.
    #[serde(default = "yes")]
    pub augment: bool,
    /// Fraction of `steps` after which the learning rate is divided by ten.
    #[serde(default = "default_lr_drop")]
    pub lr_drop: f64,
}

fn yes() -> bool {
    true
}

fn default_lr_drop() -> f64 {
    0.7
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            lr: 1e-3,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            seed: 0,
            loss: LossConfig::default(),
            augment: true,
            lr_drop: default_lr_drop(),
        }
    }
}

/// Frames `[1×3×H×W]` of one sequence with the visible normalized boxes of
/// each frame.
#[derive(Clone, Debug)]
pub struct Clip {
    pub frames: Vec<Tensor>,
    pub boxes: Vec<Vec<Box>>,
}

/// A symmetry of the square image plus a permutation of the color channels;
/// rectangles on a flat background stay valid scenes under all of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub flip_x: bool,
    pub flip_y: bool,
    /// Swap the axes; only drawn for square images.
    pub transpose: bool,
    pub channels: [usize; 3],
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        flip_x: false,
        flip_y: false,
        transpose: false,
        channels: [0, 1, 2],
    };

    pub fn random<R: Rng + ?Sized>(rng: &mut R, square: bool) -> Self {
        let mut channels = [0, 1, 2];
        for i in (1..3).rev() {
            channels.swap(i, rng.random_range(0..=i));
        }
        Self {
            flip_x: rng.random(),
            flip_y: rng.random(),
            transpose: square && rng.random(),
            channels,
        }
    }

    /// Apply to `image[1×3×H×W]`: output channel `k` is input channel
    /// `channels[k]`; flips act before the transpose.
    pub fn image(&self, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 || (self.transpose && s[2] != s[3]) {
            return Err(Error::dim(format!("cannot augment image of shape {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let src = image.data();
        let mut out = vec![0.0; src.len()];
        for (k, &c) in self.channels.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let sx = if self.flip_x { w - 1 - x } else { x };
                    let sy = if self.flip_y { h - 1 - y } else { y };
                    let (ty, tx) = if self.transpose { (x, y) } else { (y, x) };
                    out[(k * h + ty) * w + tx] = src[(c * h + sy) * w + sx];
                }
            }
        }
        Tensor::new(s.to_vec(), out)
    }

    /// Apply to unit-square boxes.
    pub fn boxes(&self, boxes: &[Box]) -> Vec<Box> {
        boxes
            .iter()
            .map(|b| {
                let cx = if self.flip_x { 1.0 - b.cx } else { b.cx };
                let cy = if self.flip_y { 1.0 - b.cy } else { b.cy };
                if self.transpose {
                    Box { cx: cy, cy: cx, w: b.h, h: b.w }
                } else {
                    Box { cx, cy, w: b.w, h: b.h }
                }
            })
            .collect()
    }
}

/// Loss of one frame pair `(t−1, t)`.
///
/// Frame `t−1` is detected with self-aggregation. The hidden states of the
/// queries matched to its ground truth become track queries for frame `t`,
/// referenced at their (detached) predicted centers. Detection and tracking
/// outputs at `t` are both supervised, and the sum is divided by the number
/// of ground-truth objects in the pair.
pub fn pair_loss(
    model: &JdtModel,
    g: &mut Graph,
    p: &Bound,
    prev: (&Tensor, &[Box]),
    cur: (&Tensor, &[Box]),
    cfg: &LossConfig,
) -> Result<Var> {
    let x0 = g.constant(prev.0.clone());
    let x1 = g.constant(cur.0.clone());
    let f0 = model.backbone.extract(g, p, x0)?;
    let f1 = model.backbone.extract(g, p, x1)?;
    let mem0 = model.encode(g, p, &f0, &f0)?;
    let mem1 = model.encode(g, p, &f1, &f0)?;

    let q = model.config.num_queries;
    let c = model.config.channels;
    let det0 = model.detect(g, p, &mem0)?;
    let l0 = g.reshape(det0.logits, &[q, 2])?;
    let b0 = g.reshape(det0.boxes, &[q, 4])?;
    let (loss0, matched) = set_loss(g, l0, b0, prev.1, cfg)?;

    let det1 = model.detect(g, p, &mem1)?;
    let l1 = g.reshape(det1.logits, &[q, 2])?;
    let b1 = g.reshape(det1.boxes, &[q, 4])?;
    let (loss1, _) = set_loss(g, l1, b1, cur.1, cfg)?;
    let mut total = g.add(loss0, loss1)?;

    if !matched.pairs.is_empty() {
        let rows: Vec<usize> = matched.pairs.iter().map(|p| p.0).collect();
        let t = rows.len();
        let hidden = g.reshape(det0.hidden, &[q, c])?;
        let feats = g.index_rows(hidden, &rows)?;
        let feats = g.detach(feats);
        let feats = g.reshape(feats, &[1, t, c])?;
        let boxes = g.value(b0).clone();
        let refs: Vec<f64> = rows
            .iter()
            .flat_map(|&r| [logit(boxes.at(&[r, 0])), logit(boxes.at(&[r, 1]))])
            .collect();
        let refs = g.constant(Tensor::new(vec![1, t, 2], refs)?);
        let tr = model.track(g, p, &mem1, feats, refs)?;
        let lt = g.reshape(tr.logits, &[t, 2])?;
        let bt = g.reshape(tr.boxes, &[t, 4])?;
        let (loss_t, _) = set_loss(g, lt, bt, cur.1, cfg)?;
        total = g.add(total, loss_t)?;
    }
    let n = (prev.1.len() + cur.1.len()).max(1);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// AdamW trainer over frame pairs.
pub struct Trainer {
    pub config: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &JdtModel, config: TrainConfig) -> Result<Self> {
        config.loss.weights.validate()?;
        if !(config.lr > 0.0) || config.steps == 0 || !(0.0..=1.0).contains(&config.lr_drop) {
            return Err(Error::Config(format!("invalid training schedule {config:?}")));
        }
        Ok(Self {
            opt: AdamW::new(&model.store, config.lr, config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    /// One optimizer step on one frame pair; returns the loss before the update.
    pub fn step(&mut self, model: &mut JdtModel, prev: (&Tensor, &[Box]), cur: (&Tensor, &[Box])) -> Result<f64> {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let loss = pair_loss(model, &mut g, &p, prev, cur, &self.config.loss)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("training loss became {value}")));
        }
        g.backward(loss)?;
        let mut grads: Vec<Option<Tensor>> = p.vars().iter().map(|&v| g.grad(v)).collect();
        clip_grad_norm(&mut grads, self.config.grad_clip);
        self.opt.step(&mut model.store, &grads);
        Ok(value)
    }

    /// Pick a random frame pair from `clips`.
    pub fn sample<'c>(&mut self, clips: &'c [Clip]) -> Result<(&'c Clip, usize)> {
        if clips.is_empty() || clips.iter().any(|c| c.frames.is_empty() || c.frames.len() != c.boxes.len()) {
            return Err(Error::Input("training needs non-empty clips with one box list per frame".into()));
        }
        let clip = &clips[self.rng.random_range(0..clips.len())];
        let t = if clip.frames.len() == 1 {
            0
        } else {
            self.rng.random_range(1..clip.frames.len())
        };
        Ok((clip, t))
    }

    /// Run the configured number of steps; `on_step(step, loss)` sees each loss.
    pub fn fit(&mut self, model: &mut JdtModel, clips: &[Clip], mut on_step: impl FnMut(usize, f64)) -> Result<Vec<f64>> {
        let mut curve = Vec::with_capacity(self.config.steps);
        let drop_at = (self.config.steps as f64 * self.config.lr_drop).round() as usize;
        for s in 0..self.config.steps {
            if s == drop_at {
                self.opt.lr = self.config.lr * 0.1;
            }
            let (clip, t) = self.sample(clips)?;
            let prev = t.saturating_sub(1);
            let loss = if self.config.augment {
                let s = clip.frames[t].shape();
                let a = Augment::random(&mut self.rng, s.len() == 4 && s[2] == s[3]);
                let (f0, f1) = (a.image(&clip.frames[prev])?, a.image(&clip.frames[t])?);
                let (b0, b1) = (a.boxes(&clip.boxes[prev]), a.boxes(&clip.boxes[t]));
                self.step(model, (&f0, &b0), (&f1, &b1))?
            } else {
                self.step(
                    model,
                    (&clip.frames[prev], &clip.boxes[prev]),
                    (&clip.frames[t], &clip.boxes[t]),
                )?
            };
            on_step(s, loss);
            curve.push(loss);
        }
        Ok(curve)
    }
}
