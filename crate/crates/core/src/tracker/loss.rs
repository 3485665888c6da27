use serde::{Deserialize, Serialize};

use super::boxes::{giou, Box};
use super::decoder::{BACKGROUND, OBJECT};
use super::hungarian::{hungarian, Assignment};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Weights of the class, L1 box and GIoU terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_class: f64,
    pub lambda_iou: f64,
    pub lambda_giou: f64,
}

impl LossWeights {
    pub fn new(lambda_class: f64, lambda_iou: f64, lambda_giou: f64) -> Result<Self> {
        let w = Self {
            lambda_class,
            lambda_iou,
            lambda_giou,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_class, self.lambda_iou, self.lambda_giou];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || all.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            lambda_class: self.lambda_class * s,
            lambda_iou: self.lambda_iou * s,
            lambda_giou: self.lambda_giou * s,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_class: 2.0,
            lambda_iou: 5.0,
            lambda_giou: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassLoss {
    /// Two-way cross-entropy, identical to binary cross-entropy on the
    /// object probability.
    CrossEntropy,
    /// Cross-entropy scaled by `(1 − p_target)^gamma`.
    Focal { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Relative weight of the background term for unmatched queries.
    pub background_weight: f64,
    pub class_loss: ClassLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            background_weight: 0.1,
            class_loss: ClassLoss::CrossEntropy,
        }
    }
}

fn softmax2(l: &[f64]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let (a, b) = ((l[0] - m).exp(), (l[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

/// Matching cost between predictions (`logits[Q×2]`, `boxes[Q×4]`) and ground
/// truth boxes: `λ_class·(−p_object) + λ_iou·L1 + λ_giou·(1 − GIoU)`.
pub fn match_cost(logits: &Tensor, boxes: &Tensor, gt: &[Box], w: &LossWeights) -> Result<Vec<Vec<f64>>> {
    let q = check_pred(logits, boxes)?;
    let mut out = Vec::with_capacity(q);
    for i in 0..q {
        let p = softmax2(&logits.data()[2 * i..2 * i + 2])[OBJECT];
        let bd = &boxes.data()[4 * i..4 * i + 4];
        let pb = Box {
            cx: bd[0],
            cy: bd[1],
            w: bd[2],
            h: bd[3],
        };
        out.push(
            gt.iter()
                .map(|g| {
                    let l1: f64 = bd.iter().zip(g.to_array()).map(|(a, b)| (a - b).abs()).sum();
                    -w.lambda_class * p + w.lambda_iou * l1 + w.lambda_giou * (1.0 - giou(&pb, g))
                })
                .collect(),
        );
    }
    Ok(out)
}

fn check_pred(logits: &Tensor, boxes: &Tensor) -> Result<usize> {
    match (logits.shape(), boxes.shape()) {
        ([q, 2], [q2, 4]) if q == q2 => Ok(*q),
        (l, b) => Err(Error::dim(format!("predictions must be Q×2 and Q×4, got {l:?} and {b:?}"))),
    }
}

/// Unnormalized set-prediction loss of one decoder output (`logits[Q×2]`,
/// `boxes[Q×4]`) against the ground truth of one frame, plus the matching.
pub fn set_loss(g: &mut Graph, logits: Var, boxes: Var, gt: &[Box], cfg: &LossConfig) -> Result<(Var, Assignment)> {
    let w = &cfg.weights;
    let q = check_pred(g.value(logits), g.value(boxes))?;
    let cost = match_cost(g.value(logits), g.value(boxes), gt, w)?;
    let assignment = if gt.is_empty() {
        Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..q).collect(),
            unmatched_cols: Vec::new(),
            total: 0.0,
        }
    } else {
        hungarian(&cost)?
    };

    let mut target = vec![BACKGROUND; q];
    let mut weight = vec![w.lambda_class * cfg.background_weight; q];
    for &(r, _) in &assignment.pairs {
        target[r] = OBJECT;
        weight[r] = w.lambda_class;
    }
    let logp = g.log_softmax_rows(logits);
    let picked = g.pick(logp, &target)?;
    let nll = match cfg.class_loss {
        ClassLoss::CrossEntropy => g.neg(picked),
        ClassLoss::Focal { gamma } => {
            let other: Vec<usize> = target.iter().map(|t| 1 - t).collect();
            let lo = g.pick(logp, &other)?;
            let lo = g.scale(lo, gamma);
            let factor = g.exp(lo);
            let f = g.mul(factor, picked)?;
            g.neg(f)
        }
    };
    let wt = g.constant(Tensor::new(vec![q], weight)?);
    let mut total = g.weighted_sum(nll, wt)?;

    if !assignment.pairs.is_empty() {
        let rows: Vec<usize> = assignment.pairs.iter().map(|p| p.0).collect();
        let matched = g.index_rows(boxes, &rows)?;
        let m = rows.len();
        let gt_data: Vec<f64> = assignment.pairs.iter().flat_map(|p| gt[p.1].to_array()).collect();
        let target = g.constant(Tensor::new(vec![m, 4], gt_data)?);
        let d = g.sub(matched, target)?;
        let d = g.abs(d);
        let l1 = g.sum(d);
        let l1 = g.scale(l1, w.lambda_iou);
        total = g.add(total, l1)?;
        let gi = giou_graph(g, matched, target)?;
        let gsum = g.sum(gi);
        // Σ(1 − GIoU) = m − ΣGIoU
        let gl = g.neg(gsum);
        let gl = g.add_scalar(gl, m as f64);
        let gl = g.scale(gl, w.lambda_giou);
        total = g.add(total, gl)?;
    }
    Ok((total, assignment))
}

/// Differentiable GIoU of row-aligned `[M×4]` center-format boxes, `[M×1]`.
pub fn giou_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let corners = |g: &mut Graph, x: Var| -> Result<[Var; 4]> {
        let c = g.slice(x, 1, 0, 2)?;
        let s = g.slice(x, 1, 2, 2)?;
        let hs = g.scale(s, 0.5);
        let lo = g.sub(c, hs)?;
        let hi = g.add(c, hs)?;
        Ok([g.slice(lo, 1, 0, 1)?, g.slice(lo, 1, 1, 1)?, g.slice(hi, 1, 0, 1)?, g.slice(hi, 1, 1, 1)?])
    };
    let [ax1, ay1, ax2, ay2] = corners(g, a)?;
    let [bx1, by1, bx2, by2] = corners(g, b)?;
    let area = |g: &mut Graph, x1, y1, x2, y2| -> Result<Var> {
        let w = g.sub(x2, x1)?;
        let h = g.sub(y2, y1)?;
        g.mul(w, h)
    };
    let ix1 = g.maximum(ax1, bx1)?;
    let iy1 = g.maximum(ay1, by1)?;
    let ix2 = g.minimum(ax2, bx2)?;
    let iy2 = g.minimum(ay2, by2)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;
    let aa = area(g, ax1, ay1, ax2, ay2)?;
    let ab = area(g, bx1, by1, bx2, by2)?;
    let union = g.add(aa, ab)?;
    let union = g.sub(union, inter)?;
    let ex1 = g.minimum(ax1, bx1)?;
    let ey1 = g.minimum(ay1, by1)?;
    let ex2 = g.maximum(ax2, bx2)?;
    let ey2 = g.maximum(ay2, by2)?;
    let enc = area(g, ex1, ey1, ex2, ey2)?;
    let iou = g.div(inter, union)?;
    let gap = g.sub(enc, union)?;
    let frac = g.div(gap, enc)?;
    g.sub(iou, frac)
}

/// Frame-pair training loss: every `(logits, boxes, gt)` term is matched and
/// summed, and the result is divided by `max(1, gt_objects)`.
pub fn training_loss(g: &mut Graph, terms: &[(Var, Var, &[Box])], gt_objects: usize, cfg: &LossConfig) -> Result<Var> {
    cfg.weights.validate()?;
    let mut total: Option<Var> = None;
    for &(logits, boxes, gt) in terms {
        let (l, _) = set_loss(g, logits, boxes, gt, cfg)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Input("training loss needs at least one decoder output".into()))?;
    Ok(g.scale(total, 1.0 / gt_objects.max(1) as f64))
}
