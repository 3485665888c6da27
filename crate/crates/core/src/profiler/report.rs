use std::fmt::Write as _;

use super::analytic::{layer_cost, propagate};
use super::graph::{Group, LayerGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerProfile {
    pub name: String,
    pub group: Group,
    pub kind: &'static str,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupProfile {
    pub group: Group,
    pub params: u64,
    pub macs: u64,
}

/// Per-layer and per-group parameters and MACs of one graph at one input size.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub graph: String,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerProfile>,
    /// Every group, in [`Group::ALL`] order, including empty ones.
    pub groups: Vec<GroupProfile>,
    pub total_params: u64,
    pub total_macs: u64,
}

fn pct(part: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

impl ProfileReport {
    pub fn from_layers(graph: &str, height: usize, width: usize, layers: Vec<LayerProfile>) -> Self {
        let groups: Vec<GroupProfile> = Group::ALL
            .iter()
            .map(|&group| GroupProfile {
                group,
                params: layers.iter().filter(|l| l.group == group).map(|l| l.params).sum(),
                macs: layers.iter().filter(|l| l.group == group).map(|l| l.macs).sum(),
            })
            .collect();
        Self {
            graph: graph.to_string(),
            height,
            width,
            total_params: layers.iter().map(|l| l.params).sum(),
            total_macs: layers.iter().map(|l| l.macs).sum(),
            layers,
            groups,
        }
    }

    pub fn group(&self, group: Group) -> GroupProfile {
        self.groups.iter().copied().find(|g| g.group == group).expect("all groups present")
    }

    pub fn params_pct(&self, params: u64) -> f64 {
        pct(params, self.total_params)
    }

    pub fn macs_pct(&self, macs: u64) -> f64 {
        pct(macs, self.total_macs)
    }

    /// `layer,group,params,macs,params_pct,macs_pct`, one row per layer.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,group,params,macs,params_pct,macs_pct\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.4},{:.4}",
                l.name,
                l.group.as_str(),
                l.params,
                l.macs,
                self.params_pct(l.params),
                self.macs_pct(l.macs)
            );
        }
        s
    }

    /// Aligned table: layers, then group subtotals and the total.
    pub fn to_table(&self) -> String {
        let head = ["layer", "group", "kind", "params", "macs", "params%", "macs%"].map(String::from);
        let mut rows = vec![head];
        let row = |name: &str, group: &str, kind: &str, p: u64, m: u64| {
            [
                name.to_string(),
                group.to_string(),
                kind.to_string(),
                p.to_string(),
                m.to_string(),
                format!("{:.2}", pct(p, self.total_params)),
                format!("{:.2}", pct(m, self.total_macs)),
            ]
        };
        for l in &self.layers {
            rows.push(row(&l.name, l.group.as_str(), l.kind, l.params, l.macs));
        }
        let sep = rows.len();
        for g in self.groups.iter().filter(|g| g.params > 0 || g.macs > 0) {
            rows.push(row(&format!("[{}]", g.group.as_str()), g.group.as_str(), "", g.params, g.macs));
        }
        rows.push(row("TOTAL", "", "", self.total_params, self.total_macs));
        let widths: Vec<usize> = (0..7)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = format!("{} @ {}×{}\n", self.graph, self.height, self.width);
        for (i, r) in rows.iter().enumerate() {
            if i == sep {
                let total: usize = widths.iter().sum::<usize>() + 2 * 6;
                let _ = writeln!(s, "{}", "-".repeat(total));
            }
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, &w))| {
                    let pad = w - v.chars().count();
                    if c < 3 {
                        format!("{v}{}", " ".repeat(pad))
                    } else {
                        format!("{}{v}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join("  ").trim_end());
        }
        s
    }
}

/// Closed-form profile of `graph` on an `height×width` input.
pub fn analytic_profile(graph: &LayerGraph, height: usize, width: usize) -> Result<ProfileReport> {
    let shapes = propagate(graph, height, width)?;
    let layers = graph
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| {
            let (params, macs) = layer_cost(l, s);
            LayerProfile {
                name: l.name.clone(),
                group: l.group,
                kind: l.kind.name(),
                params,
                macs,
            }
        })
        .collect();
    Ok(ProfileReport::from_layers(&graph.name, height, width, layers))
}

/// `100·(1 − proposed/baseline)`.
pub fn reduction_pct(baseline: f64, proposed: f64) -> Result<f64> {
    if !(baseline.is_finite() && proposed.is_finite()) || baseline == 0.0 {
        return Err(Error::Input(format!("cannot reduce from baseline {baseline}")));
    }
    Ok(100.0 * (1.0 - proposed / baseline))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub params_pct: f64,
    pub macs_pct: f64,
    /// `(group, params %, MACs %)`; `None` where the baseline group is empty.
    pub groups: Vec<(Group, Option<f64>, Option<f64>)>,
}

pub fn reduction_report(baseline: &ProfileReport, proposed: &ProfileReport) -> Result<Reduction> {
    let params_pct = reduction_pct(baseline.total_params as f64, proposed.total_params as f64)?;
    let macs_pct = reduction_pct(baseline.total_macs as f64, proposed.total_macs as f64)?;
    let groups = Group::ALL
        .iter()
        .map(|&g| {
            let (b, p) = (baseline.group(g), proposed.group(g));
            (
                g,
                reduction_pct(b.params as f64, p.params as f64).ok(),
                reduction_pct(b.macs as f64, p.macs as f64).ok(),
            )
        })
        .collect();
    Ok(Reduction {
        params_pct,
        macs_pct,
        groups,
    })
}

impl Reduction {
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::from("n/a"), |v| format!("{v:.2}"));
        let mut s = String::from("scope        params%  macs%\n");
        let _ = writeln!(s, "{:<12} {:>7}  {:>6}", "total", f(Some(self.params_pct)), f(Some(self.macs_pct)));
        for (g, p, m) in &self.groups {
            let _ = writeln!(s, "{:<12} {:>7}  {:>6}", g.as_str(), f(*p), f(*m));
        }
        s
    }
}

/// Input sizes of the resolution ablation, `(height, width)`.
pub const ABLATION_RESOLUTIONS: [(usize, usize); 7] = [
    (400, 666),
    (480, 799),
    (520, 866),
    (600, 999),
    (680, 1133),
    (760, 1266),
    (800, 1333),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepPoint {
    pub height: usize,
    pub width: usize,
    pub params: u64,
    pub macs: u64,
}

pub fn resolution_sweep(graph: &LayerGraph, resolutions: &[(usize, usize)]) -> Result<Vec<SweepPoint>> {
    resolutions
        .iter()
        .map(|&(h, w)| {
            let r = analytic_profile(graph, h, w)?;
            Ok(SweepPoint {
                height: h,
                width: w,
                params: r.total_params,
                macs: r.total_macs,
            })
        })
        .collect()
}

/// `height,width,macs` rows.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("height,width,macs\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.height, p.width, p.macs);
    }
    s
}

/// Line chart of MACs (G) against pixel count, one polyline per series.
pub fn sweep_svg(series: &[(String, Vec<SweepPoint>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let px = |p: &SweepPoint| (p.height * p.width) as f64;
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, 0.0f64, 0.0f64);
    for p in pts {
        x0 = x0.min(px(p));
        x1 = x1.max(px(p));
        y1 = y1.max(p.macs as f64 / 1e9);
    }
    if !x0.is_finite() {
        x0 = 0.0;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - y / y1 * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" font-size=\"12\" text-anchor=\"middle\">input pixels (H×W)</text>\n\
         <text x=\"14\" y=\"{cy}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {cy})\">GMACs</text>\n\
         <text x=\"{lx}\" y=\"{b2}\" font-size=\"10\" text-anchor=\"end\">0</text>\n\
         <text x=\"{lx}\" y=\"{m2}\" font-size=\"10\" text-anchor=\"end\">{y1:.1}</text>\n",
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        ty = H - 15.0,
        cy = H / 2.0,
        lx = M - 4.0,
        b2 = H - M + 4.0,
        m2 = M + 4.0,
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let poly: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(px(p)), sy(p.macs as f64 / 1e9)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            poly.join(" ")
        );
        for p in points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                sx(px(p)),
                sy(p.macs as f64 / 1e9)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            M + 10.0,
            M + 16.0 * (i as f64 + 1.0),
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
