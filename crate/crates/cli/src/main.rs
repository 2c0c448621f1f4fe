//! `guardscan`: generate synthetic facades, train detectors, run the
//! three-stage pipeline, and evaluate it.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.
//! Verbosity follows `GUARDSCAN_LOG` (e.g. `GUARDSCAN_LOG=info`).

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use guardscan_core::classifiers::WindowClassifier;
use guardscan_core::config::PipelineConfig;
use guardscan_core::detector::{detect, keyframe_indices};
use guardscan_core::eval::{parse_report_csv, render_overlay, report_csv, report_jsonl, report_text, ClassifierKind, StageSet};
use guardscan_core::floors::{detect_floors, FloorLine};
use guardscan_core::geometry::Detection;
use guardscan_core::image::{load_image, to_grayscale};
use guardscan_core::io::{write_atomic, write_json, write_jsonl};
use guardscan_core::pipeline::{
    evaluate_pipeline, fit_spacing_model, load_split, run_stages, train_cascade_detector, train_svm_detector,
};
use guardscan_core::spacing::{spacing_histogram_csv, SpacingModel};
use guardscan_core::synthgen::{make_dataset, Dataset, Split};

#[derive(Parser)]
#[command(name = "guardscan", version, about = "Guardrail-post detection on building facades")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON); flags override it, it overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    echo_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic facade dataset.
    Synth(SynthArgs),
    /// Train the linear SVM detector on a dataset's training split.
    TrainSvm(TrainArgs),
    /// Train the cascade detector on a dataset's training split.
    TrainCascade(TrainArgs),
    /// Sliding-window detection on images.
    Detect(DetectArgs),
    /// Floor-line detection on images.
    Floors(FloorsArgs),
    /// detect → floor filter → spacing selection on images.
    Pipeline(PipelineArgs),
    /// Evaluate stage combinations on a dataset's test split.
    Eval(EvalArgs),
    /// Fit and export the spacing model, or render an evaluation CSV as a table.
    Report(ReportArgs),
    /// Print keyframe indices for a clip.
    Keyframes(KeyframeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    train: usize,
    #[arg(long, default_value_t = 10)]
    test: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    missing_prob: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    tilt_deg: Option<f64>,
    #[arg(long)]
    posts_per_floor: Option<usize>,
}

#[derive(Args)]
struct ScanFlags {
    /// Minimum window score kept as a detection.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    nms_iou: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training summary (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// SVM only: comma-separated C values.
    #[arg(long, value_delimiter = ',')]
    c_grid: Option<Vec<f64>>,
    /// SVM only: cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Cascade only: maximum number of stages.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scan: ScanFlags,
}

#[derive(Args)]
struct FloorsArgs {
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of floors to keep.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    model: PathBuf,
    /// Spacing model JSON (from `report`); otherwise fitted from --data.
    #[arg(long)]
    spacing_model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_dist: Option<f64>,
    #[command(flatten)]
    scan: ScanFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    svm_model: Option<PathBuf>,
    #[arg(long)]
    cascade_model: Option<PathBuf>,
    /// `all`, or a comma list of classifier, floor, spacing.
    #[arg(long, default_value = "all")]
    stages: String,
    /// Spacing model JSON; otherwise fitted from the training split.
    #[arg(long)]
    spacing_model: Option<PathBuf>,
    /// Directory for report.csv, report.txt, per_image.jsonl and overlays.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    max_dist: Option<f64>,
    #[command(flatten)]
    scan: ScanFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Dataset whose training split the spacing model is fitted to.
    #[arg(long, required_unless_present = "eval_csv")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "eval_csv")]
    out: Option<PathBuf>,
    /// Render an evaluation CSV as an aligned table instead.
    #[arg(long, conflicts_with_all = ["data", "out"])]
    eval_csv: Option<PathBuf>,
    /// Fixed ubiquity penalty τ (default: fraction of the peak density).
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct KeyframeArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    fps: f64,
    /// Seconds skipped at both ends.
    #[arg(long)]
    skip: f64,
    #[arg(long)]
    stride: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GUARDSCAN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    match &g.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_scan(cfg: &mut PipelineConfig, s: &ScanFlags) {
    if let Some(t) = s.threshold {
        cfg.scan.score_threshold = t;
    }
    if let Some(st) = s.stride {
        cfg.scan.stride_x = st;
        cfg.scan.stride_y = st;
    }
    if let Some(n) = s.nms_iou {
        cfg.scan.nms_iou = n;
    }
}

/// Fold command-line flags into the configuration (flags win).
fn apply_flags(cfg: &mut PipelineConfig, cmd: &Command) {
    match cmd {
        Command::Synth(a) => {
            if let Some(s) = a.seed {
                cfg.synth.seed = s;
            }
            if let Some(p) = a.missing_prob {
                cfg.synth.missing_prob = p;
            }
            if let Some(n) = a.noise_sigma {
                cfg.synth.noise_sigma = n;
            }
            if let Some(t) = a.tilt_deg {
                cfg.synth.tilt_deg = t;
            }
            if let Some(n) = a.posts_per_floor {
                cfg.synth.posts_per_floor = n;
            }
        }
        Command::TrainSvm(a) | Command::TrainCascade(a) => {
            if let Some(c) = &a.c_grid {
                cfg.svm.c_grid = c.clone();
            }
            if let Some(f) = a.folds {
                cfg.svm.folds = f;
            }
            if let Some(s) = a.stages {
                cfg.cascade.train.stages_max = s;
            }
            if let Some(s) = a.seed {
                cfg.sampling.seed = s;
                cfg.svm.train.seed = s;
                cfg.cascade.train.seed = s;
            }
        }
        Command::Detect(a) => apply_scan(cfg, &a.scan),
        Command::Floors(a) => {
            if let Some(k) = a.k {
                cfg.floors.k = k;
            }
        }
        Command::Pipeline(a) => {
            apply_scan(cfg, &a.scan);
            if let Some(d) = a.max_dist {
                cfg.floors.max_dist = d;
            }
        }
        Command::Eval(a) => {
            apply_scan(cfg, &a.scan);
            if let Some(t) = a.iou_threshold {
                cfg.eval.iou_threshold = t;
            }
            if let Some(d) = a.max_dist {
                cfg.floors.max_dist = d;
            }
        }
        Command::Report(a) => {
            if let Some(t) = a.tau {
                cfg.spacing.ubiquity.tau = Some(t);
            }
        }
        Command::Keyframes(_) => {}
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    apply_flags(&mut cfg, &cli.command);
    cfg.validate().context("invalid configuration")?;
    if cli.global.echo_config {
        print!("{}", cfg.to_json()?);
        return Ok(());
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::TrainSvm(a) => cmd_train(&cfg, a, ClassifierKind::Svm),
        Command::TrainCascade(a) => cmd_train(&cfg, a, ClassifierKind::Cascade),
        Command::Detect(a) => cmd_detect(&cfg, a),
        Command::Floors(a) => cmd_floors(&cfg, a),
        Command::Pipeline(a) => cmd_pipeline(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Report(a) => cmd_report(&cfg, a),
        Command::Keyframes(a) => {
            let idx = keyframe_indices(a.frames, a.fps, a.skip, a.stride)?;
            let mut out = std::io::stdout().lock();
            for i in idx {
                writeln!(out, "{i}")?;
            }
            Ok(())
        }
    }
}

fn cmd_synth(cfg: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    let m = make_dataset(&cfg.synth, a.train, a.test, &a.out)?;
    eprintln!("wrote {} train / {} test images to {}", m.train.len(), m.test.len(), a.out.display());
    Ok(())
}

fn load_dataset(p: &Path) -> Result<Dataset> {
    Dataset::load(p).with_context(|| format!("loading dataset {}", p.display()))
}

fn cmd_train(cfg: &PipelineConfig, a: &TrainArgs, kind: ClassifierKind) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let train = load_split(&ds, Split::Train)?;
    if train.is_empty() {
        bail!("dataset {} has no training images", a.data.display());
    }
    let (model, summary) = match kind {
        ClassifierKind::Svm => {
            let (m, s) = train_svm_detector(&train, cfg)?;
            (m, serde_json::to_value(s)?)
        }
        ClassifierKind::Cascade => {
            let (m, s) = train_cascade_detector(&train, cfg)?;
            (m, serde_json::to_value(s)?)
        }
    };
    model.save(&a.out)?;
    if let Some(r) = &a.report {
        write_json(r, &summary)?;
    }
    eprintln!("wrote {} model to {}", model.kind(), a.out.display());
    Ok(())
}

fn load_model(p: &Path) -> Result<WindowClassifier> {
    WindowClassifier::load(p).with_context(|| format!("loading model {}", p.display()))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    floors: Option<&'a [FloorLine]>,
    detections: &'a [Detection],
}

fn cmd_detect(cfg: &PipelineConfig, a: &DetectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut lines = Vec::new();
    for p in &a.image {
        let img = load_image(p)?;
        let dets = detect(&img, &model, &cfg.scan)?;
        render_overlay(&img, &dets, &[], &[]).save_png(&a.out.join("overlays").join(format!("{}.png", stem(p))))?;
        lines.push(serde_json::to_string(&DetectionRecord { image: p.display().to_string(), floors: None, detections: &dets })?);
    }
    write_lines(&a.out.join("detections.jsonl"), &lines)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct FloorsRecord<'a> {
    image: String,
    floors: &'a [FloorLine],
}

fn cmd_floors(cfg: &PipelineConfig, a: &FloorsArgs) -> Result<()> {
    let mut lines = Vec::new();
    for p in &a.image {
        let img = load_image(p)?;
        let floors = detect_floors(&to_grayscale(&img), &cfg.floors);
        render_overlay(&img, &[], &[], &floors).save_png(&a.out.join("overlays").join(format!("{}.png", stem(p))))?;
        lines.push(serde_json::to_string(&FloorsRecord { image: p.display().to_string(), floors: &floors })?);
    }
    write_lines(&a.out.join("floors.jsonl"), &lines)
}

fn spacing_model(cfg: &PipelineConfig, path: Option<&Path>, data: Option<&Path>) -> Result<SpacingModel> {
    match (path, data) {
        (Some(p), _) => SpacingModel::load(p).with_context(|| format!("loading spacing model {}", p.display())),
        (None, Some(d)) => {
            let ds = load_dataset(d)?;
            let train = load_split(&ds, Split::Train)?;
            Ok(fit_spacing_model(&ds, &train, cfg)?.model)
        }
        (None, None) => bail!("a spacing model is required: pass --spacing-model or --data"),
    }
}

fn cmd_pipeline(cfg: &PipelineConfig, a: &PipelineArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let spacing = spacing_model(cfg, a.spacing_model.as_deref(), a.data.as_deref())?;
    let mut lines = Vec::new();
    for p in &a.image {
        let img = load_image(p)?;
        let gray = to_grayscale(&img);
        let floors = detect_floors(&gray, &cfg.floors);
        let out = run_stages(&gray, &model, &floors, cfg, &spacing)?;
        render_overlay(&img, &out.spacing, &[], &floors)
            .save_png(&a.out.join("overlays").join(format!("{}.png", stem(p))))?;
        lines.push(serde_json::to_string(&DetectionRecord {
            image: p.display().to_string(),
            floors: Some(&floors),
            detections: &out.spacing,
        })?);
    }
    write_lines(&a.out.join("detections.jsonl"), &lines)
}

fn parse_stages(s: &str) -> Result<Vec<StageSet>> {
    if s == "all" {
        return Ok(StageSet::ALL.to_vec());
    }
    let mut v: Vec<StageSet> = s.split(',').map(|x| StageSet::parse(x.trim())).collect::<Result<_, _>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

fn cmd_eval(cfg: &PipelineConfig, a: &EvalArgs) -> Result<()> {
    let stages = parse_stages(&a.stages)?;
    let ds = load_dataset(&a.data)?;
    let mut loaded = Vec::new();
    if let Some(p) = &a.cascade_model {
        loaded.push((ClassifierKind::Cascade, load_model(p)?));
    }
    if let Some(p) = &a.svm_model {
        loaded.push((ClassifierKind::Svm, load_model(p)?));
    }
    if loaded.is_empty() {
        bail!("pass --svm-model and/or --cascade-model");
    }
    let spacing = spacing_model(cfg, a.spacing_model.as_deref(), Some(&a.data))?;
    let models: Vec<(ClassifierKind, &WindowClassifier)> = loaded.iter().map(|(k, m)| (*k, m)).collect();
    let ev = evaluate_pipeline(&ds, &models, &stages, cfg, &spacing)?;
    let csv = report_csv(&ev.rows);
    if let Some(out) = &a.out {
        write_atomic(&out.join("report.csv"), csv.as_bytes())?;
        write_atomic(&out.join("report.txt"), report_text(&ev.rows).as_bytes())?;
        write_atomic(&out.join("per_image.jsonl"), report_jsonl(&ev.rows)?.as_bytes())?;
        for r in &ev.images {
            let img = load_image(&ds.root.join(&r.name))?;
            for (kind, outs) in &r.outputs {
                let name = format!("{}_{}.png", stem(Path::new(&r.name)), kind_name(*kind));
                let last = *stages.last().unwrap();
                render_overlay(&img, outs.get(last), &r.ground_truth, &r.floors)
                    .save_png(&out.join("overlays").join(name))?;
            }
        }
    }
    print!("{csv}");
    Ok(())
}

fn kind_name(k: ClassifierKind) -> &'static str {
    match k {
        ClassifierKind::Cascade => "cascade",
        ClassifierKind::Svm => "svm",
    }
}

#[derive(Serialize)]
struct BicLine {
    k: usize,
    log_likelihood: f64,
    bic: f64,
    selected: bool,
}

fn cmd_report(cfg: &PipelineConfig, a: &ReportArgs) -> Result<()> {
    if let Some(p) = &a.eval_csv {
        let text = guardscan_core::io::read_to_string(p)?;
        let rows = parse_report_csv(&text).with_context(|| format!("parsing {}", p.display()))?;
        let width = rows.iter().map(|r| r.0.len()).chain(["Method".len()]).max().unwrap();
        let mut out = std::io::stdout().lock();
        writeln!(out, "{:<width$}  {:>9}  {:>9}", "Method", "Precision", "Recall")?;
        for (label, p, r, _) in rows {
            writeln!(out, "{label:<width$}  {p:>9.4}  {r:>9.4}")?;
        }
        return Ok(());
    }
    let (data, out) = (a.data.as_ref().unwrap(), a.out.as_ref().unwrap());
    let ds = load_dataset(data)?;
    let train = load_split(&ds, Split::Train)?;
    let fit = fit_spacing_model(&ds, &train, cfg)?;
    fit.model.save(&out.join("spacing_model.json"))?;
    let u = &cfg.spacing.ubiquity;
    let csv = spacing_histogram_csv(&fit.samples, &fit.model.gmm, u.bins, u.s_max);
    write_atomic(&out.join("spacing_histogram.csv"), csv.as_bytes())?;
    let bic: Vec<BicLine> = fit
        .selection
        .table
        .iter()
        .map(|r| BicLine { k: r.k, log_likelihood: r.log_likelihood, bic: r.bic, selected: r.k == fit.selection.k })
        .collect();
    write_jsonl(&out.join("bic.jsonl"), &bic)?;
    eprintln!("spacing model: k={} from {} samples", fit.selection.k, fit.samples.len());
    Ok(())
}
