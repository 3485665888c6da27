//! `bttrack`: profiling, resolution sweeps, synthetic data, toy training,
//! tracking and CLEAR-MOT evaluation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors (unreadable
//! or malformed inputs, invalid graphs, failed training).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bttrack_core::io::{load_tensor, save_tensor, Checkpoint};
use bttrack_core::moteval::{clear_mot, mota_sequences, parse_mot_file, write_mot, ParseOptions};
use bttrack_core::profiler::{
    analytic_profile, instrumented_profile, resolution_sweep, sweep_svg, zoo, LayerGraph, ProfileReport, SweepPoint,
    ABLATION_RESOLUTIONS,
};
use bttrack_core::synth::{generate, training_clips, SceneConfig};
use bttrack_core::tracker::{
    to_mot_records, track_sequence, JdtModel, ModelConfig, TrainConfig, Trainer, TrackerConfig,
};
use bttrack_core::Tensor;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bttrack", version, about = "Joint detection and tracking toolkit with a layer-wise MAC profiler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct Seed {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer parameters and MACs of a layer graph.
    Profile(ProfileArgs),
    /// Total MACs of one or more graphs over a list of input resolutions.
    Sweep(SweepArgs),
    /// Write a bundled layer graph (or all of them) as TOML.
    ExportGraph(ExportArgs),
    /// Generate synthetic sequences: raw frame tensors plus MOTChallenge ground truth.
    Synth(SynthArgs),
    /// Train the toy tracker on synthetic sequences.
    Train(TrainArgs),
    /// Track a directory of raw frame tensors with a checkpoint.
    Track(TrackArgs),
    /// CLEAR-MOT accounting and MOTA of results against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Layer-graph TOML file, or the name of a bundled graph (toy, resnet50,
    /// pvt_v2_b1, transtrack_like, proposed).
    graph: String,
    #[arg(long, default_value_t = 800)]
    height: usize,
    #[arg(long, default_value_t = 1333)]
    width: usize,
    /// Write the per-layer CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the aligned table here (it is always printed).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Also execute every layer on the tape and require the counted MACs
    /// and parameters to equal the closed forms.
    #[arg(long)]
    instrumented: bool,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Graph files or bundled graph names; the first one is the reference
    /// for the ratio column.
    #[arg(required = true)]
    graphs: Vec<String>,
    /// Input size as HEIGHTxWIDTH; repeatable. Defaults to the seven
    /// ablation resolutions from 400x666 to 800x1333.
    #[arg(long = "resolution", value_parser = parse_resolution)]
    resolutions: Vec<(usize, usize)>,
    /// CSV output (printed when omitted).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// SVG line chart of GMACs against pixel count.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Bundled graph name; omit with --all.
    name: Option<String>,
    /// Export every bundled graph into --out (a directory).
    #[arg(long)]
    all: bool,
    /// Output file (or directory with --all); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene config TOML; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of sequences; sequence k uses seed `seed + k`.
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    max_speed: Option<i64>,
    #[arg(long)]
    occlusion_prob: Option<f64>,
    /// Output directory; one `seqNNN/` per sequence with `frames/*.bttn`,
    /// `gt.txt` and `scene.toml`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Scene config TOML for the training sequences.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Model config TOML.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of synthetic training sequences.
    #[arg(long, default_value_t = 40)]
    sequences: usize,
    /// Frames per training sequence.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Passes over all training frame pairs.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Exact step count; overrides --epochs.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Fraction of the steps after which the learning rate drops tenfold.
    #[arg(long, default_value_t = TrainConfig::default().lr_drop)]
    lr_drop: f64,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV (`step,loss`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of raw tensor frames, processed in file-name order.
    #[arg(long)]
    frames: PathBuf,
    /// MOTChallenge result file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrackerConfig::default().score_threshold)]
    score_threshold: f64,
    #[arg(long, default_value_t = TrackerConfig::default().iou_threshold)]
    iou_threshold: f64,
    /// IoU above which a lower-scoring detection is suppressed.
    #[arg(long, default_value_t = TrackerConfig::default().nms_threshold)]
    nms_threshold: f64,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ground-truth file; repeat together with --result for several sequences.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Result file matching each --gt.
    #[arg(long, required = true)]
    result: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Skip ground-truth rows with conf 0 (occluded or ignored objects).
    #[arg(long)]
    ignore_zero_conf: bool,
    /// Write the report as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("resolution must be nonzero".into());
    }
    Ok((h, w))
}

/// Error carrying its exit code.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<bttrack_core::Error> for Failure {
    fn from(e: bttrack_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn load_graph(spec: &str) -> anyhow::Result<LayerGraph> {
    let path = Path::new(spec);
    if path.exists() {
        return Ok(LayerGraph::load(path)?);
    }
    let key = spec.trim_end_matches(".toml");
    zoo::bundled()
        .into_iter()
        .find(|(file, _)| file.trim_end_matches(".toml") == key)
        .map(|(_, g)| g)
        .with_context(|| format!("{spec}: no such file or bundled graph"))
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn profile(a: ProfileArgs) -> Outcome {
    let graph = load_graph(&a.graph)?;
    let report = analytic_profile(&graph, a.height, a.width)?;
    if a.instrumented {
        let counted = instrumented_profile(&graph, a.height, a.width, a.seed.seed)?;
        for (l, &(p, m)) in report.layers.iter().zip(&counted) {
            if (l.params, l.macs) != (p, m) {
                return Err(anyhow::anyhow!(
                    "{}: closed form ({}, {}) differs from counted ({p}, {m})",
                    l.name,
                    l.params,
                    l.macs
                )
                .into());
            }
        }
        eprintln!("instrumented counts agree on all {} layers", counted.len());
    }
    print!("{}", report.to_table());
    print_shares(&report);
    if let Some(p) = &a.csv {
        write_or_print(Some(p), &report.to_csv())?;
    }
    if let Some(p) = &a.table {
        write_or_print(Some(p), &report.to_table())?;
    }
    Ok(())
}

fn print_shares(r: &ProfileReport) {
    println!(
        "total: {:.2}M params, {:.2}G MACs",
        r.total_params as f64 / 1e6,
        r.total_macs as f64 / 1e9
    );
    for g in r.groups.iter().filter(|g| g.params > 0 || g.macs > 0) {
        println!(
            "  {:<12} {:6.2}% params  {:6.2}% MACs",
            g.group.as_str(),
            r.params_pct(g.params),
            r.macs_pct(g.macs)
        );
    }
}

fn sweep(a: SweepArgs) -> Outcome {
    let resolutions = if a.resolutions.is_empty() {
        ABLATION_RESOLUTIONS.to_vec()
    } else {
        a.resolutions.clone()
    };
    let mut series: Vec<(String, Vec<SweepPoint>)> = Vec::new();
    for spec in &a.graphs {
        let g = load_graph(spec)?;
        series.push((g.name.clone(), resolution_sweep(&g, &resolutions)?));
    }
    let mut csv = String::from("graph,height,width,pixels,macs,ratio\n");
    for (name, points) in &series {
        for (p, base) in points.iter().zip(&series[0].1) {
            let _ = writeln!(
                csv,
                "{name},{},{},{},{},{:.6}",
                p.height,
                p.width,
                p.height * p.width,
                p.macs,
                p.macs as f64 / base.macs as f64
            );
        }
    }
    write_or_print(a.csv.as_deref(), &csv)?;
    if let Some(p) = &a.svg {
        write_or_print(Some(p), &sweep_svg(&series))?;
    }
    Ok(())
}

fn export_graph(a: ExportArgs) -> Outcome {
    if a.all {
        let dir = a
            .out
            .ok_or_else(|| Failure::Usage("--all needs --out DIR".into()))?;
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (file, g) in zoo::bundled() {
            g.save(&dir.join(file))?;
        }
        return Ok(());
    }
    let name = a
        .name
        .ok_or_else(|| Failure::Usage("name a bundled graph or pass --all".into()))?;
    let graph = load_graph(&name)?;
    write_or_print(a.out.as_deref(), &graph.to_toml_string()?)?;
    Ok(())
}

fn scene_config(path: Option<&Path>) -> anyhow::Result<SceneConfig> {
    match path {
        Some(p) => read_toml(p),
        None => Ok(SceneConfig::default()),
    }
}

fn synth(a: SynthArgs) -> Outcome {
    if a.sequences == 0 {
        return Err(Failure::Usage("--sequences must be at least 1".into()));
    }
    let mut base = scene_config(a.config.as_deref())?;
    if let Some(f) = a.frames {
        base.frames = f;
    }
    if let Some(s) = a.size {
        base.width = s;
        base.height = s;
    }
    if let Some(v) = a.max_speed {
        base.max_speed = v;
    }
    if let Some(p) = a.occlusion_prob {
        base.occlusion_prob = p;
    }
    for k in 0..a.sequences {
        let cfg = SceneConfig {
            seed: a.seed.seed + k as u64,
            ..base.clone()
        };
        let seq = generate(&cfg)?;
        let dir = a.out.join(format!("seq{k:03}"));
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).with_context(|| format!("creating {}", frames.display()))?;
        for (i, f) in seq.frames.iter().enumerate() {
            save_tensor(&frames.join(format!("{:06}.bttn", i + 1)), f)?;
        }
        let mut gt = Vec::new();
        write_mot(&mut gt, &seq.gt)?;
        write_or_print(Some(&dir.join("gt.txt")), &String::from_utf8_lossy(&gt))?;
        write_or_print(Some(&dir.join("scene.toml")), &toml::to_string(&cfg).context("serializing scene")?)?;
    }
    eprintln!("wrote {} sequence(s) to {}", a.sequences, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    if a.sequences == 0 || a.frames < 2 {
        return Err(Failure::Usage("training needs --sequences ≥ 1 and --frames ≥ 2".into()));
    }
    let scene = scene_config(a.scene.as_deref())?;
    let model_cfg: ModelConfig = match &a.model {
        Some(p) => read_toml(p)?,
        None => ModelConfig::default(),
    };
    let clips = training_clips(&scene, a.sequences, a.frames, a.seed.seed)?;
    let pairs = a.sequences * (a.frames - 1);
    let steps = a.steps.unwrap_or(a.epochs * pairs);
    let mut model = JdtModel::new(model_cfg, a.seed.seed)?;
    let config = TrainConfig {
        steps,
        lr: a.lr,
        lr_drop: a.lr_drop,
        seed: a.seed.seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, config)?;
    let every = (steps / 20).max(1);
    let mut window = 0.0;
    let curve = trainer.fit(&mut model, &clips, |s, l| {
        window += l;
        if (s + 1) % every == 0 {
            eprintln!("step {:>6}/{steps}  loss {:.4}", s + 1, window / every as f64);
            window = 0.0;
        }
    })?;
    Checkpoint::of(&model, a.seed.seed).save(&a.out)?;
    if let Some(p) = &a.loss_csv {
        let mut csv = String::from("step,loss\n");
        for (i, l) in curve.iter().enumerate() {
            let _ = writeln!(csv, "{},{l}", i + 1);
        }
        write_or_print(Some(p), &csv)?;
    }
    eprintln!("saved {} ({} parameters)", a.out.display(), model.param_count());
    Ok(())
}

fn frame_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "bttn"));
    files.sort();
    if files.is_empty() {
        bail!("{}: no .bttn frames", dir.display());
    }
    Ok(files)
}

fn track(a: TrackArgs) -> Outcome {
    let model = Checkpoint::load(&a.checkpoint)?.to_model()?;
    let frames: Vec<Tensor> = frame_files(&a.frames)?
        .iter()
        .map(|p| load_tensor(p))
        .collect::<Result<_, _>>()?;
    let shape = frames[0].shape().to_vec();
    if shape.len() != 4 {
        return Err(anyhow::anyhow!("frames must be 1×3×H×W, got {shape:?}").into());
    }
    let config = TrackerConfig {
        score_threshold: a.score_threshold,
        iou_threshold: a.iou_threshold,
        nms_threshold: a.nms_threshold,
        ..TrackerConfig::default()
    };
    let out = track_sequence(&model, &frames, config)?;
    let records = to_mot_records(&out, shape[3], shape[2]);
    let mut text = Vec::new();
    write_mot(&mut text, &records)?;
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("tracked {} frames, {} boxes", frames.len(), records.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    if a.gt.len() != a.result.len() {
        return Err(Failure::Usage(format!(
            "{} --gt files but {} --result files",
            a.gt.len(),
            a.result.len()
        )));
    }
    let gt_opts = ParseOptions {
        ignore_zero_conf: a.ignore_zero_conf,
    };
    let mut named = Vec::new();
    for (g, r) in a.gt.iter().zip(&a.result) {
        let gt = parse_mot_file(g, gt_opts)?;
        let pred = parse_mot_file(r, ParseOptions::default())?;
        named.push((g.display().to_string(), clear_mot(&gt, &pred, a.iou_threshold)?));
    }
    let report = mota_sequences(&named)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.csv {
        write_or_print(Some(p), &report.to_csv())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Profile(a) => profile(a),
        Command::Sweep(a) => sweep(a),
        Command::ExportGraph(a) => export_graph(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
