//! MOTChallenge files, CLEAR-MOT accounting and MOTA.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tracker::{hungarian, iou, Box};

/// One row `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotRecord {
    pub frame: u64,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotRecord {
    pub fn new(frame: u64, id: i64, left: f64, top: f64, width: f64, height: f64, conf: f64) -> Self {
        Self {
            frame,
            id,
            left,
            top,
            width,
            height,
            conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }

    /// `(x1, y1, x2, y2)` in pixels.
    pub fn corners(&self) -> [f64; 4] {
        [self.left, self.top, self.left + self.width, self.top + self.height]
    }

    pub fn bbox(&self) -> Box {
        Box {
            cx: self.left + self.width / 2.0,
            cy: self.top + self.height / 2.0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.frame, self.id, self.left, self.top, self.width, self.height, self.conf, self.x, self.y, self.z
        )
    }
}

/// Records grouped by frame.
pub type MotFrames = BTreeMap<u64, Vec<MotRecord>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Drop rows whose confidence is `<= 0` (ignore regions in ground truth).
    pub ignore_zero_conf: bool,
}

/// Parse MOTChallenge CSV text. `origin` only labels errors.
pub fn parse_mot_str(text: &str, origin: &Path, opts: ParseOptions) -> Result<MotFrames> {
    let mut frames = MotFrames::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 {
            return Err(err(format!("expected at least 6 fields, found {}", fields.len())));
        }
        let num = |k: usize, default: f64| -> Result<f64> {
            match fields.get(k) {
                None => Ok(default),
                Some(s) => s
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("field {} is not a finite number: {s:?}", k + 1))),
            }
        };
        let frame = fields[0]
            .parse::<u64>()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| err(format!("frame must be an integer >= 1, got {:?}", fields[0])))?;
        let id = fields[1]
            .parse::<i64>()
            .map_err(|_| err(format!("id must be an integer, got {:?}", fields[1])))?;
        let rec = MotRecord {
            frame,
            id,
            left: num(2, 0.0)?,
            top: num(3, 0.0)?,
            width: num(4, 0.0)?,
            height: num(5, 0.0)?,
            conf: num(6, 1.0)?,
            x: num(7, -1.0)?,
            y: num(8, -1.0)?,
            z: num(9, -1.0)?,
        };
        if rec.width <= 0.0 || rec.height <= 0.0 {
            return Err(err(format!("box size must be positive, got {}×{}", rec.width, rec.height)));
        }
        if opts.ignore_zero_conf && rec.conf <= 0.0 {
            continue;
        }
        frames.entry(frame).or_default().push(rec);
    }
    Ok(frames)
}

pub fn parse_mot_file(path: &Path, opts: ParseOptions) -> Result<MotFrames> {
    let text = std::fs::read_to_string(path)?;
    parse_mot_str(&text, path, opts)
}

pub fn group_by_frame(records: impl IntoIterator<Item = MotRecord>) -> MotFrames {
    let mut frames = MotFrames::new();
    for r in records {
        frames.entry(r.frame).or_default().push(r);
    }
    frames
}

/// Write records one per line, numbers in shortest round-trip form.
pub fn write_mot<'a, W: Write>(mut out: W, records: impl IntoIterator<Item = &'a MotRecord>) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    Ok(())
}

/// CLEAR-MOT counts of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub frame: u64,
    pub gt: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    pub matches: u64,
}

fn unique_ids(recs: &[MotRecord], what: &str, frame: u64) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in recs {
        if !seen.insert(r.id) {
            return Err(Error::Input(format!("{what} id {} appears twice in frame {frame}", r.id)));
        }
    }
    Ok(())
}

/// Frame-by-frame CLEAR-MOT matching.
///
/// A ground-truth object keeps the prediction id it was last matched to while
/// their IoU stays at or above `iou_threshold`. Remaining objects are matched
/// by maximum total IoU over pairs above the threshold. A match to an id other
/// than the object's last matched id is an identity switch, also after gaps.
pub fn clear_mot(gt: &MotFrames, pred: &MotFrames, iou_threshold: f64) -> Result<Vec<FrameCounts>> {
    let frames: BTreeSet<u64> = gt.keys().chain(pred.keys()).copied().collect();
    let empty = Vec::new();
    let mut last: HashMap<i64, i64> = HashMap::new();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let g = gt.get(&f).unwrap_or(&empty);
        let p = pred.get(&f).unwrap_or(&empty);
        unique_ids(g, "ground-truth", f)?;
        unique_ids(p, "predicted", f)?;
        let ious: Vec<Vec<f64>> = g.iter().map(|a| p.iter().map(|b| iou(&a.bbox(), &b.bbox())).collect()).collect();
        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut pairs = Vec::new();

        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by_key(|&i| g[i].id);
        for i in order {
            let Some(&pid) = last.get(&g[i].id) else { continue };
            if let Some(j) = p.iter().position(|r| r.id == pid) {
                if !p_used[j] && ious[i][j] >= iou_threshold {
                    g_used[i] = true;
                    p_used[j] = true;
                    pairs.push((i, j));
                }
            }
        }

        let rows: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let cols: Vec<usize> = (0..p.len()).filter(|&j| !p_used[j]).collect();
        let cost: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| {
                cols.iter()
                    .map(|&j| 1.0 - if ious[i][j] >= iou_threshold { ious[i][j] } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut ids = 0;
        for (r, c) in hungarian(&cost)?.pairs {
            let (i, j) = (rows[r], cols[c]);
            if ious[i][j] < iou_threshold {
                continue;
            }
            if last.get(&g[i].id).is_some_and(|&prev| prev != p[j].id) {
                ids += 1;
            }
            pairs.push((i, j));
        }
        for &(i, j) in &pairs {
            last.insert(g[i].id, p[j].id);
        }
        let m = pairs.len() as u64;
        out.push(FrameCounts {
            frame: f,
            gt: g.len() as u64,
            fp: p.len() as u64 - m,
            fn_: g.len() as u64 - m,
            ids,
            matches: m,
        });
    }
    Ok(out)
}

/// Summed CLEAR-MOT counts with the resulting MOTA.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MotaReport {
    pub mota: f64,
    pub gt: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    /// Per-sequence `(name, counts, mota)`; empty for a single unnamed run.
    pub sequences: Vec<(String, Totals, Option<f64>)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub gt: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
}

impl Totals {
    pub fn of(counts: &[FrameCounts]) -> Self {
        counts.iter().fold(Self::default(), |t, c| Self {
            gt: t.gt + c.gt,
            fp: t.fp + c.fp,
            fn_: t.fn_ + c.fn_,
            ids: t.ids + c.ids,
        })
    }

    /// `1 − (FN + FP + IDS) / GT`.
    pub fn mota(&self) -> Result<f64> {
        if self.gt == 0 {
            return Err(Error::UndefinedMetric("MOTA needs at least one ground-truth box".into()));
        }
        Ok(1.0 - (self.fn_ + self.fp + self.ids) as f64 / self.gt as f64)
    }
}

pub fn mota(counts: &[FrameCounts]) -> Result<MotaReport> {
    let t = Totals::of(counts);
    Ok(MotaReport {
        mota: t.mota()?,
        gt: t.gt,
        fp: t.fp,
        fn_: t.fn_,
        ids: t.ids,
        sequences: Vec::new(),
    })
}

/// MOTA over several named sequences, pooled by summing counts.
pub fn mota_sequences(named: &[(String, Vec<FrameCounts>)]) -> Result<MotaReport> {
    let all: Vec<FrameCounts> = named.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    let mut report = mota(&all)?;
    report.sequences = named
        .iter()
        .map(|(n, c)| {
            let t = Totals::of(c);
            (n.clone(), t, t.mota().ok())
        })
        .collect();
    Ok(report)
}

impl MotaReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sequence,gt,fp,fn,ids,mota\n");
        for (name, t, m) in &self.sequences {
            let m = m.map_or(String::from("nan"), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{name},{},{},{},{},{m}", t.gt, t.fp, t.fn_, t.ids);
        }
        let _ = writeln!(s, "OVERALL,{},{},{},{},{:.6}", self.gt, self.fp, self.fn_, self.ids, self.mota);
        s
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 6]> = vec![["sequence", "GT", "FP", "FN", "IDS", "MOTA%"].map(String::from)];
        for (name, t, m) in &self.sequences {
            rows.push([
                name.clone(),
                t.gt.to_string(),
                t.fp.to_string(),
                t.fn_.to_string(),
                t.ids.to_string(),
                m.map_or(String::from("n/a"), |v| format!("{:.2}", 100.0 * v)),
            ]);
        }
        rows.push([
            "OVERALL".into(),
            self.gt.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
            self.ids.to_string(),
            format!("{:.2}", 100.0 * self.mota),
        ]);
        let widths: Vec<usize> = (0..6).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }
}
