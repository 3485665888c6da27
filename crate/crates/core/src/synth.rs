//! Seeded synthetic sequences of moving rectangles with ground truth.
//!
//! Every object is a filled rectangle with its own RGB intensity on a black
//! background. Positions are integers and velocities integer pixels per
//! frame, so kinematics are exact. Occluded objects are not drawn but keep
//! their ground-truth rows, written with confidence 0.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moteval::MotRecord;
use crate::tensor::Tensor;
use crate::tracker::{Box, Clip};

/// Distinct object colors; objects of one sequence never share one.
pub const PALETTE: [[f64; 3]; 12] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.2, 0.2, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.2, 1.0],
    [0.2, 1.0, 1.0],
    [1.0, 0.6, 0.2],
    [0.6, 0.2, 1.0],
    [0.2, 0.6, 0.6],
    [0.9, 0.9, 0.9],
    [0.6, 0.6, 0.2],
    [0.6, 0.3, 0.5],
];

/// A hand-placed object. Hidden intervals are half-open frame ranges
/// `[start, end)`, 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedObject {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub vx: i64,
    pub vy: i64,
    #[serde(default)]
    pub hidden: Vec<(usize, usize)>,
    /// First frame in which the object exists.
    #[serde(default)]
    pub enter: usize,
    /// Frame at which the object leaves the scene for good.
    #[serde(default)]
    pub exit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: i64,
    pub max_size: i64,
    /// Largest absolute velocity component, pixels per frame.
    pub max_speed: i64,
    /// Per-frame probability that a visible object starts an occlusion.
    pub occlusion_prob: f64,
    pub max_occlusion: usize,
    /// Reflect at the borders instead of leaving the image.
    pub bounce: bool,
    pub seed: u64,
    /// Replaces the random objects when present.
    #[serde(default)]
    pub script: Option<Vec<ScriptedObject>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 50,
            min_objects: 1,
            max_objects: 5,
            min_size: 10,
            max_size: 20,
            max_speed: 1,
            occlusion_prob: 0.0,
            max_occlusion: 0,
            bounce: true,
            seed: 0,
            script: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        if !self.width.is_multiple_of(64) || !self.height.is_multiple_of(64) {
            return Err(Error::Config(format!(
                "image size {}×{} is not divisible by 64",
                self.width, self.height
            )));
        }
        if self.frames == 0 {
            return Err(Error::Config("sequence needs at least one frame".into()));
        }
        if self.script.is_none() {
            if self.min_objects > self.max_objects || self.max_objects > PALETTE.len() {
                return Err(Error::Config(format!(
                    "object count range {}..={} invalid (at most {})",
                    self.min_objects,
                    self.max_objects,
                    PALETTE.len()
                )));
            }
            let limit = self.width.min(self.height) as i64;
            if self.min_size < 1 || self.min_size > self.max_size || self.max_size > limit {
                return Err(Error::Config(format!("object size range {}..={} invalid", self.min_size, self.max_size)));
            }
            if self.max_speed < 0 || !(0.0..=1.0).contains(&self.occlusion_prob) {
                return Err(Error::Config("speed must be nonnegative and occlusion probability in [0, 1]".into()));
            }
        } else if let Some(script) = &self.script {
            if script.len() > PALETTE.len() {
                return Err(Error::Config(format!("at most {} scripted objects", PALETTE.len())));
            }
            let (iw, ih) = (self.width as i64, self.height as i64);
            if script.iter().any(|s| s.w < 1 || s.h < 1 || s.w > iw || s.h > ih) {
                return Err(Error::Config("scripted object sizes must fit the image".into()));
            }
        }
        Ok(())
    }
}

/// A generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub width: usize,
    pub height: usize,
    /// `1×3×H×W` per frame.
    pub frames: Vec<Tensor>,
    /// Ground truth, 1-based frames, ids from 1; `conf` is 1 when the object
    /// is visible and 0 when occluded.
    pub gt: Vec<MotRecord>,
}

struct Obj {
    id: i64,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    vx: i64,
    vy: i64,
    color: [f64; 3],
    hidden: Vec<(usize, usize)>,
    enter: usize,
    exit: Option<usize>,
}

pub fn generate(config: &SceneConfig) -> Result<Sequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (iw, ih) = (config.width as i64, config.height as i64);
    let mut palette: Vec<[f64; 3]> = PALETTE.to_vec();
    palette.shuffle(&mut rng);

    let mut objs: Vec<Obj> = match &config.script {
        Some(script) => script
            .iter()
            .enumerate()
            .map(|(k, s)| Obj {
                id: k as i64 + 1,
                x: s.x,
                y: s.y,
                w: s.w,
                h: s.h,
                vx: s.vx,
                vy: s.vy,
                color: palette[k],
                hidden: s.hidden.clone(),
                enter: s.enter,
                exit: s.exit,
            })
            .collect(),
        None => {
            let n = rng.random_range(config.min_objects..=config.max_objects);
            (0..n)
                .map(|k| {
                    let w = rng.random_range(config.min_size..=config.max_size);
                    let h = rng.random_range(config.min_size..=config.max_size);
                    let s = config.max_speed;
                    Obj {
                        id: k as i64 + 1,
                        x: rng.random_range(0..=iw - w),
                        y: rng.random_range(0..=ih - h),
                        w,
                        h,
                        vx: rng.random_range(-s..=s),
                        vy: rng.random_range(-s..=s),
                        color: palette[k],
                        hidden: Vec::new(),
                        enter: 0,
                        exit: None,
                    }
                })
                .collect()
        }
    };

    let plane = config.width * config.height;
    let mut frames = Vec::with_capacity(config.frames);
    let mut gt = Vec::new();
    for t in 0..config.frames {
        if config.script.is_none() && config.occlusion_prob > 0.0 && config.max_occlusion > 0 {
            for o in &mut objs {
                let busy = o.hidden.iter().any(|&(a, b)| (a..b).contains(&t));
                if !busy && rng.random_bool(config.occlusion_prob) {
                    let len = rng.random_range(1..=config.max_occlusion);
                    o.hidden.push((t, t + len));
                }
            }
        }
        let mut img = vec![0.0; 3 * plane];
        for o in &objs {
            if t < o.enter || o.exit.is_some_and(|e| t >= e) {
                continue;
            }
            let x1 = o.x.clamp(0, iw);
            let y1 = o.y.clamp(0, ih);
            let x2 = (o.x + o.w).clamp(0, iw);
            let y2 = (o.y + o.h).clamp(0, ih);
            if x2 <= x1 || y2 <= y1 {
                continue;
            }
            let visible = !o.hidden.iter().any(|&(a, b)| (a..b).contains(&t));
            if visible {
                for (c, v) in o.color.iter().enumerate() {
                    for y in y1..y2 {
                        let row = c * plane + y as usize * config.width;
                        img[row + x1 as usize..row + x2 as usize].fill(*v);
                    }
                }
            }
            gt.push(MotRecord::new(
                t as u64 + 1,
                o.id,
                x1 as f64,
                y1 as f64,
                (x2 - x1) as f64,
                (y2 - y1) as f64,
                if visible { 1.0 } else { 0.0 },
            ));
        }
        frames.push(Tensor::new(vec![1, 3, config.height, config.width], img)?);

        for o in &mut objs {
            if t < o.enter {
                continue;
            }
            o.x += o.vx;
            o.y += o.vy;
            if config.bounce {
                if o.x < 0 || o.x + o.w > iw {
                    o.vx = -o.vx;
                    o.x = o.x.clamp(0, iw - o.w);
                }
                if o.y < 0 || o.y + o.h > ih {
                    o.vy = -o.vy;
                    o.y = o.y.clamp(0, ih - o.h);
                }
            }
        }
    }
    Ok(Sequence {
        width: config.width,
        height: config.height,
        frames,
        gt,
    })
}

/// `sequences` short clips of `frames` frames each; clip `k` is generated
/// with seed `seed·1000 + k` from `scene`.
pub fn training_clips(scene: &SceneConfig, sequences: usize, frames: usize, seed: u64) -> Result<Vec<Clip>> {
    (0..sequences)
        .map(|k| {
            generate(&SceneConfig {
                frames,
                seed: seed.wrapping_mul(1000).wrapping_add(k as u64),
                ..scene.clone()
            })
            .map(|s| s.to_clip())
        })
        .collect()
}

impl Sequence {
    /// Visible ground-truth boxes of each frame, normalized to `[0, 1]`.
    pub fn normalized_boxes(&self) -> Vec<Vec<Box>> {
        let (sx, sy) = (1.0 / self.width as f64, 1.0 / self.height as f64);
        let mut out = vec![Vec::new(); self.frames.len()];
        for r in self.gt.iter().filter(|r| r.conf > 0.0) {
            out[r.frame as usize - 1].push(r.bbox().scaled(sx, sy));
        }
        out
    }

    pub fn to_clip(&self) -> Clip {
        Clip {
            frames: self.frames.clone(),
            boxes: self.normalized_boxes(),
        }
    }
}
