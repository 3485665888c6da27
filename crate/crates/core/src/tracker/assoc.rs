use super::boxes::{iou, Box};
use super::hungarian::hungarian;
use crate::error::Result;

/// Unmatched frames a track survives before it is dropped.
pub const REBIRTH_WINDOW: u32 = 32;

/// A score-filtered detection and the decoder feature that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DetBox {
    pub bbox: Box,
    /// Object-class probability.
    pub score: f64,
    pub class_logits: [f64; 2],
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub bbox: Box,
    pub score: f64,
    pub query_feature: Vec<f64>,
    pub unmatched_streak: u32,
    pub alive: bool,
}

/// Outcome of one association round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// `(detection index, track id)` for re-identified tracks.
    pub matched: Vec<(usize, u64)>,
    /// `(detection index, new track id)`.
    pub spawned: Vec<(usize, u64)>,
}

/// Tracks of one sequence and the id counter. Ids start at 1 and are never
/// reused, even after a track dies.
#[derive(Clone, Debug)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
    pub next_id: u64,
    pub rebirth_window: u32,
}

impl Default for TrackSet {
    fn default() -> Self {
        Self::new(REBIRTH_WINDOW)
    }
}

impl TrackSet {
    pub fn new(rebirth_window: u32) -> Self {
        Self {
            tracks: Vec::new(),
            next_id: 1,
            rebirth_window,
        }
    }

    pub fn alive(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.alive)
    }

    pub fn get(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Track> {
        self.tracks.iter_mut().find(|t| t.id == id)
    }

    /// Match detections to alive tracks by IoU, then spawn tracks for the
    /// remaining detections and age the remaining tracks.
    ///
    /// Pairs below `iou_threshold` are worth nothing to the solver and are
    /// rejected afterwards, so the kept pairs maximize total IoU over all
    /// assignments that respect the threshold.
    pub fn associate(&mut self, dets: &[DetBox], iou_threshold: f64) -> Result<Association> {
        let alive: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].alive).collect();
        let ious: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| alive.iter().map(|&t| iou(&d.bbox, &self.tracks[t].bbox)).collect())
            .collect();
        let cost: Vec<Vec<f64>> = ious
            .iter()
            .map(|row| row.iter().map(|&v| 1.0 - if v >= iou_threshold { v } else { 0.0 }).collect())
            .collect();
        let assignment = hungarian(&cost)?;
        let mut out = Association::default();
        let mut det_used = vec![false; dets.len()];
        let mut track_used = vec![false; alive.len()];
        for &(d, t) in &assignment.pairs {
            if ious[d][t] < iou_threshold {
                continue;
            }
            det_used[d] = true;
            track_used[t] = true;
            let track = &mut self.tracks[alive[t]];
            track.bbox = dets[d].bbox;
            track.score = dets[d].score;
            track.query_feature.clone_from(&dets[d].feature);
            track.unmatched_streak = 0;
            out.matched.push((d, track.id));
        }
        for (t, used) in alive.iter().zip(&track_used) {
            if !used {
                self.tracks[*t].unmatched_streak += 1;
            }
        }
        for (d, det) in dets.iter().enumerate().filter(|(d, _)| !det_used[*d]) {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                bbox: det.bbox,
                score: det.score,
                query_feature: det.feature.clone(),
                unmatched_streak: 0,
                alive: true,
            });
            out.spawned.push((d, id));
        }
        Ok(out)
    }

    /// Kill tracks whose unmatched streak exceeds the rebirth window; dead
    /// tracks are dropped and their ids retired.
    pub fn rebirth_step(&mut self) {
        for t in &mut self.tracks {
            t.alive = t.unmatched_streak <= self.rebirth_window;
        }
        self.tracks.retain(|t| t.alive);
    }

    /// Tracks matched or spawned in the latest round, by id.
    pub fn visible(&self) -> Vec<&Track> {
        let mut v: Vec<&Track> = self.alive().filter(|t| t.unmatched_streak == 0).collect();
        v.sort_by_key(|t| t.id);
        v
    }
}
