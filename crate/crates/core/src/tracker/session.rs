use serde::{Deserialize, Serialize};

use super::assoc::{DetBox, TrackSet, REBIRTH_WINDOW};
use super::boxes::{nms, Box};
use super::decoder::{logit, DecoderOutput, OBJECT};
use super::model::JdtModel;
use crate::backbone::{FeaturePyramid, FrameCache};
use crate::error::{Error, Result};
use crate::moteval::MotRecord;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    /// Detections overlapping a higher-scoring one above this IoU are dropped.
    #[serde(default = "default_nms")]
    pub nms_threshold: f64,
    pub rebirth_window: u32,
}

fn default_nms() -> f64 {
    0.3
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.4,
            iou_threshold: 0.5,
            nms_threshold: default_nms(),
            rebirth_window: REBIRTH_WINDOW,
        }
    }
}

/// One output row: a visible track in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackedBox {
    pub id: u64,
    pub bbox: Box,
    pub score: f64,
}

/// State of one tracking run over one sequence.
pub struct Session<'m> {
    model: &'m JdtModel,
    config: TrackerConfig,
    cache: FrameCache,
    tracks: TrackSet,
}

fn rows(t: &Tensor, width: usize) -> impl Iterator<Item = &[f64]> {
    t.data().chunks(width)
}

fn to_box(r: &[f64]) -> Box {
    Box {
        cx: r[0],
        cy: r[1],
        w: r[2].max(1e-9),
        h: r[3].max(1e-9),
    }
}

impl<'m> Session<'m> {
    pub fn new(model: &'m JdtModel, config: TrackerConfig) -> Self {
        Self {
            model,
            config,
            cache: FrameCache::new(),
            tracks: TrackSet::new(config.rebirth_window),
        }
    }

    pub fn tracks(&self) -> &TrackSet {
        &self.tracks
    }

    /// Process `image[1×3×H×W]` as frame `frame_index`.
    pub fn step(&mut self, frame_index: u64, image: &Tensor) -> Result<Vec<TrackedBox>> {
        if let Some(prev) = self.cache.get() {
            if frame_index <= prev.frame_index {
                return Err(Error::Input(format!(
                    "frame {frame_index} is not after frame {}",
                    prev.frame_index
                )));
            }
        }
        if image.shape().first() != Some(&1) {
            return Err(Error::dim(format!("tracking expects a single image, got {:?}", image.shape())));
        }
        let model = self.model;
        let mut g = Graph::new();
        let p = model.store.bind_frozen(&mut g);
        let x = g.constant(image.clone());
        let current = model.backbone.extract(&mut g, &p, x)?;
        let pyramid = FeaturePyramid::from_graph(&g, &current, frame_index)?;
        let previous = match self.cache.get() {
            Some(prev) => prev.to_graph(&mut g),
            None => current,
        };
        let memory = model.encode(&mut g, &p, &current, &previous)?;

        let det = model.detect(&mut g, &p, &memory)?;
        let dets = self.detections(&g, &det);

        // Tracks matched in the previous frame carry their query into this one.
        let live: Vec<u64> = self
            .tracks
            .alive()
            .filter(|t| t.unmatched_streak == 0)
            .map(|t| t.id)
            .collect();
        if !live.is_empty() {
            let c = model.config.channels;
            let mut feats = Vec::with_capacity(live.len() * c);
            let mut refs = Vec::with_capacity(live.len() * 2);
            for id in &live {
                let t = self.tracks.get(*id).expect("live id");
                feats.extend_from_slice(&t.query_feature);
                refs.extend([logit(t.bbox.cx), logit(t.bbox.cy)]);
            }
            let f = g.constant(Tensor::new(vec![1, live.len(), c], feats)?);
            let r = g.constant(Tensor::new(vec![1, live.len(), 2], refs)?);
            let out = model.track(&mut g, &p, &memory, f, r)?;
            for (id, row) in live.iter().zip(rows(g.value(out.boxes), 4)) {
                self.tracks.get_mut(*id).expect("live id").bbox = to_box(row);
            }
        }

        self.tracks.associate(&dets, self.config.iou_threshold)?;
        self.tracks.rebirth_step();
        self.cache.update(pyramid)?;
        Ok(self
            .tracks
            .visible()
            .into_iter()
            .map(|t| TrackedBox {
                id: t.id,
                bbox: t.bbox,
                score: t.score,
            })
            .collect())
    }

    fn detections(&self, g: &Graph, out: &DecoderOutput) -> Vec<DetBox> {
        let c = self.model.config.channels;
        let mut dets: Vec<DetBox> = rows(g.value(out.logits), 2)
            .zip(rows(g.value(out.boxes), 4))
            .zip(rows(g.value(out.hidden), c))
            .filter_map(|((l, b), h)| {
                let m = l[0].max(l[1]);
                let e = [(l[0] - m).exp(), (l[1] - m).exp()];
                let score = e[OBJECT] / (e[0] + e[1]);
                (score >= self.config.score_threshold).then(|| DetBox {
                    bbox: to_box(b),
                    score,
                    class_logits: [l[0], l[1]],
                    feature: h.to_vec(),
                })
            })
            .collect();
        let boxes: Vec<Box> = dets.iter().map(|d| d.bbox).collect();
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let keep = nms(&boxes, &scores, self.config.nms_threshold);
        let mut slots: Vec<Option<DetBox>> = dets.drain(..).map(Some).collect();
        keep.into_iter().filter_map(|i| slots[i].take()).collect()
    }
}

/// Track every frame of a sequence in order; frame indices start at 1.
pub fn track_sequence(model: &JdtModel, frames: &[Tensor], config: TrackerConfig) -> Result<Vec<Vec<TrackedBox>>> {
    let mut session = Session::new(model, config);
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| session.step(i as u64 + 1, f))
        .collect()
}

/// MOTChallenge rows for tracker output of frames `1..`, with the unit-square
/// boxes scaled to a `width×height` image.
pub fn to_mot_records(frames: &[Vec<TrackedBox>], width: usize, height: usize) -> Vec<MotRecord> {
    let (w, h) = (width as f64, height as f64);
    let mut out = Vec::new();
    for (i, boxes) in frames.iter().enumerate() {
        for t in boxes {
            let [x1, y1, x2, y2] = t.bbox.scaled(w, h).corners();
            out.push(MotRecord::new(i as u64 + 1, t.id as i64, x1, y1, x2 - x1, y2 - y1, t.score));
        }
    }
    out
}
