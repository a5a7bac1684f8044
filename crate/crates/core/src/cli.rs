//! The `yotor` command line.
//!
//! Every subcommand writes its files plus a `manifest.json` (resolved
//! arguments, model config where one is involved, crate version and the list
//! of outputs) into the output directory. Exit codes: 0 success, 1 usage
//! error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bench::{self, BenchConfig, ScatterPoint};
use crate::detect::{DetectConfig, Detector, Image};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig};
use crate::model::{ModelConfig, ModelSummary, YotoR};
use crate::nn::Module;
use crate::tensor::io as weights;
use crate::train::{self, ToyRunConfig};

#[derive(Debug, Parser)]
#[command(name = "yotor", version, about = "Swin backbone + YoloR head detector toolkit", arg_required_else_help = true)]
pub struct Cli {
    /// Directory for outputs and manifest.json.
    #[arg(long, global = true, env = "YOTOR_OUT_DIR", default_value = "yotor-out")]
    pub out_dir: PathBuf,

    /// Seed for weight init and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Per-module parameter and FLOPs table.
    Summary(SummaryArgs),
    /// Detect objects in one image.
    Infer(InferArgs),
    /// COCO box evaluation of a results file.
    Eval(EvalArgs),
    /// Time forward passes and emit the speed/accuracy scatter.
    Bench(BenchArgs),
    /// Overfit the toy model on synthetic rectangles.
    TrainToy(TrainToyArgs),
    /// Render a scatter CSV (name,ms,ap) as SVG.
    Plot(PlotArgs),
    /// Finite-difference check of every op and component.
    Gradcheck(GradcheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Summary(_) => "summary",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
            Command::TrainToy(_) => "train-toy",
            Command::Plot(_) => "plot",
            Command::Gradcheck(_) => "gradcheck",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Variant name (TP4, TP5, BP4, BB4), optionally with a `-toy` suffix.
    #[arg(long, default_value = "TP5", conflicts_with = "config")]
    pub model: String,

    /// TOML model config; overrides --model.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Number of classes (ignored with --config).
    #[arg(long, default_value_t = 80)]
    pub nc: usize,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        match &self.config {
            Some(p) => ModelConfig::load(p),
            None => ModelConfig::named(&self.model, self.nc),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Input resolution; defaults to the config's.
    #[arg(long)]
    pub res: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Weight container; random init from --seed when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    /// PNG or PPM input.
    #[arg(long)]
    pub image: PathBuf,

    #[arg(long)]
    pub res: Option<usize>,

    #[arg(long, default_value_t = 0.25)]
    pub score_thresh: f64,

    #[arg(long, default_value_t = 0.65)]
    pub iou_thresh: f64,

    #[arg(long, default_value_t = 300)]
    pub max_det: usize,

    /// image_id written into the results records.
    #[arg(long, default_value_t = 1)]
    pub image_id: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// COCO ground-truth JSON.
    #[arg(long)]
    pub gt: PathBuf,

    /// COCO results JSON.
    #[arg(long)]
    pub dets: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Model to time; repeatable. Names as for `summary`.
    #[arg(long = "model", default_values_t = ["TP5-toy".to_string()])]
    pub models: Vec<String>,

    #[arg(long, default_value_t = 80)]
    pub nc: usize,

    #[arg(long, default_value_t = 1280)]
    pub res: usize,

    #[arg(long, default_value_t = 10)]
    pub warmup: usize,

    #[arg(long, default_value_t = 3)]
    pub runs: usize,

    /// Accuracy per model, in --model order; enables scatter.csv and scatter.svg.
    #[arg(long = "ap", num_args = 1..)]
    pub ap: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 500)]
    pub steps: usize,

    #[arg(long, default_value_t = 8)]
    pub images: usize,

    #[arg(long, default_value_t = 2)]
    pub nc: usize,

    #[arg(long)]
    pub lr0: Option<f64>,

    /// Gradient-norm clip; 0 disables.
    #[arg(long)]
    pub clip: Option<f64>,

    /// Train the backbone too.
    #[arg(long)]
    pub unfreeze: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// CSV with header name,ms,ap.
    #[arg(long)]
    pub input: PathBuf,

    /// Output file name inside --out-dir.
    #[arg(long, default_value = "scatter.svg")]
    pub output: String,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,

    /// Only cases whose name contains this.
    #[arg(long)]
    pub filter: Option<String>,
}

/// Collected outputs of one run.
struct Run<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
    extra: serde_json::Map<String, Value>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    fn record(&mut self, key: &str, v: impl Serialize) -> Result<()> {
        self.extra.insert(key.to_string(), serde_json::to_value(v)?);
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Runs a parsed command. `Ok(false)` means it finished but reported failure.
pub fn execute(cli: &Cli) -> Result<bool> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    let mut run = Run { dir: &cli.out_dir, outputs: Vec::new(), extra: Default::default() };
    let ok = match &cli.command {
        Command::Summary(a) => summary(a, &mut run)?,
        Command::Infer(a) => infer(a, cli.seed, &mut run)?,
        Command::Eval(a) => eval_cmd(a, &mut run)?,
        Command::Bench(a) => bench_cmd(a, cli.seed, &mut run)?,
        Command::TrainToy(a) => train_toy(a, cli.seed, &mut run)?,
        Command::Plot(a) => plot(a, &mut run)?,
        Command::Gradcheck(a) => gradcheck(a, &mut run)?,
    };
    let mut manifest = json!({
        "tool": "yotor",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "seed": cli.seed,
        "args": serde_json::to_value(&cli.command)?,
        "outputs": run.outputs,
    });
    manifest.as_object_mut().expect("object").extend(run.extra);
    let path = cli.out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(ok)
}

fn summary(a: &SummaryArgs, run: &mut Run) -> Result<bool> {
    let cfg = a.model.resolve()?;
    let res = a.res.unwrap_or(cfg.resolution);
    let s = ModelSummary::of(&cfg, res)?;
    print!("{}", s.to_table());
    run.write("summary.csv", s.to_csv()?)?;
    run.record("model", &cfg)?;
    run.record("resolution", res)?;
    Ok(true)
}

fn infer(a: &InferArgs, seed: u64, run: &mut Run) -> Result<bool> {
    let mut cfg = a.model.resolve()?;
    if let Some(r) = a.res {
        cfg.resolution = r;
    }
    let mut model = YotoR::<f32>::build(&cfg, seed)?;
    if let Some(w) = &a.weights {
        model.load_weights(&weights::load(w)?)?;
    }
    let dc = DetectConfig {
        score_thresh: a.score_thresh,
        iou_thresh: a.iou_thresh,
        max_det: a.max_det,
        ..DetectConfig::demo(cfg.resolution)
    };
    let mut image = Image::load(&a.image)?;
    let dets = Detector::new(&model, dc.clone()).detect(&image)?;
    let cats: Vec<u64> = (1..=cfg.head.nc as u64).collect();
    let records = dets.iter().map(|d| d.to_coco(a.image_id, &cats)).collect::<Result<Vec<_>>>()?;
    for d in &dets {
        println!("class {:>3}  score {:.3}  box [{:.1}, {:.1}, {:.1}, {:.1}]", d.class, d.score, d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]);
        image.draw_box(d.bbox, palette(d.class));
    }
    println!("{} detections", dets.len());
    run.write("detections.json", serde_json::to_string_pretty(&records)? + "\n")?;
    image.save(&run.dir.join("annotated.png"))?;
    run.outputs.push("annotated.png".into());
    run.record("model", &cfg)?;
    run.record("detect", &dc)?;
    Ok(true)
}

fn palette(class: usize) -> [f32; 3] {
    const COLORS: [[f32; 3]; 6] = [[1.0, 0.2, 0.2], [0.2, 0.9, 0.2], [0.2, 0.4, 1.0], [1.0, 0.8, 0.1], [0.9, 0.2, 0.9], [0.1, 0.9, 0.9]];
    COLORS[class % COLORS.len()]
}

fn eval_cmd(a: &EvalArgs, run: &mut Run) -> Result<bool> {
    let (gt, dets) = eval::load_coco_files(&a.gt, &a.dets)?;
    let cfg = EvalConfig::default();
    let report = eval::evaluate(&gt, &dets, &cfg)?;
    print!("{}", report.to_table());
    run.write("eval.csv", report.to_csv()?)?;
    run.record("ap", report.ap())?;
    Ok(true)
}

fn bench_cmd(a: &BenchArgs, seed: u64, run: &mut Run) -> Result<bool> {
    if !a.ap.is_empty() && a.ap.len() != a.models.len() {
        return Err(Error::Config(format!("{} --ap values for {} models", a.ap.len(), a.models.len())));
    }
    let bc = BenchConfig { resolution: a.res, warmup: a.warmup, runs: a.runs };
    let mut results = Vec::new();
    for name in &a.models {
        let cfg = ModelConfig::named(name, a.nc)?;
        let model = YotoR::<f32>::build(&cfg, seed)?;
        let r = bench::bench(&model, &bc)?;
        println!("{:<10} {:>10.2} ms  {:>8.2} fps", r.name, r.mean_ms, r.fps);
        results.push(r);
    }
    run.write("timing.csv", bench::timing_csv(&results)?)?;
    if !a.ap.is_empty() {
        let points: Vec<ScatterPoint> =
            results.iter().zip(&a.ap).map(|(r, &ap)| ScatterPoint { name: r.name.clone(), ms: r.mean_ms, ap }).collect();
        run.write("scatter.csv", bench::scatter_csv(&points)?)?;
        run.write("scatter.svg", bench::scatter_svg(&points))?;
    }
    run.record("bench", bc)?;
    Ok(true)
}

fn train_toy(a: &TrainToyArgs, seed: u64, run: &mut Run) -> Result<bool> {
    let mut tc = ToyRunConfig::toy_train_config();
    if let Some(lr) = a.lr0 {
        tc.lr0 = lr;
    }
    if let Some(c) = a.clip {
        tc.clip_grad_norm = (c > 0.0).then_some(c);
    }
    tc.freeze_backbone = !a.unfreeze;
    let cfg = ToyRunConfig { images: a.images, nc: a.nc, steps: a.steps, seed, train: tc };
    let out = train::run_toy(&cfg, |r| {
        if r.step % 50 == 0 {
            println!("step {:>5}  loss {:.4}", r.step, r.loss.total);
        }
    })?;
    println!(
        "loss {:.4} -> {:.4} ({:.1}%), recovered {}/{} boxes",
        out.initial_loss,
        out.final_loss,
        100.0 * out.loss_ratio(),
        out.recovered,
        out.boxes
    );

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "total", "box", "obj", "cls", "lr"])?;
    for r in &out.history.steps {
        let l = &r.loss;
        let row = [l.total, l.box_loss, l.obj, l.cls, r.settings.lr_decay].map(|v| v.to_string());
        w.write_record(std::iter::once(r.step.to_string()).chain(row))?;
    }
    run.write("losses.csv", w.into_inner().map_err(|e| Error::Config(e.to_string()))?)?;
    let wpath = run.dir.join("weights.ywt");
    weights::save(&wpath, &out.model.named_params())?;
    run.outputs.push("weights.ywt".into());
    run.write("model.toml", out.model.config.to_toml_string()?)?;
    let ds = train::save_dataset(&run.dir.join("dataset"), &out.data, a.nc)?;
    run.outputs.push("dataset/annotations.json".into());

    let det = Detector::new(&out.model, DetectConfig::eval(out.model.config.resolution));
    let cats: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
    let mut records = Vec::new();
    for (s, info) in out.data.iter().zip(&ds.images) {
        for d in det.detect(&s.image)? {
            records.push(d.to_coco(info.id, &cats)?);
        }
    }
    run.write("detections.json", serde_json::to_string_pretty(&records)? + "\n")?;
    let gt = eval::GroundTruth::from_dataset(&ds)?;
    let ap = eval::evaluate(&gt, &records, &EvalConfig::default())?.ap();
    if let Some(ap) = ap {
        println!("training-set AP {ap:.4}");
    }
    run.record("train", &cfg)?;
    run.record(
        "result",
        json!({
            "initial_loss": out.initial_loss,
            "final_loss": out.final_loss,
            "recovered": out.recovered,
            "boxes": out.boxes,
            "ap": ap,
        }),
    )?;
    Ok(true)
}

fn plot(a: &PlotArgs, run: &mut Run) -> Result<bool> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let points = bench::parse_scatter_csv(&text)?;
    run.write(&a.output, bench::scatter_svg(&points))?;
    Ok(true)
}

fn gradcheck(a: &GradcheckArgs, run: &mut Run) -> Result<bool> {
    let results = crate::gradsuite::run(a.seeds, a.filter.as_deref())?;
    for r in &results {
        println!("{:<18} {:>6} coords  max rel {:.2e}  {}", r.name, r.checked, r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} cases, {failed} failed", results.len());
    run.write("gradcheck.csv", crate::gradsuite::to_csv(&results)?)?;
    run.record("failed", failed)?;
    Ok(failed == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(dir: &Path, rest: &[&str]) -> Vec<String> {
        let mut v = vec!["yotor".to_string(), "--out-dir".into(), dir.display().to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["yotor"]), 1);
        assert_eq!(run(["yotor", "--help"]), 0);
        assert_eq!(run(["yotor", "--version"]), 0);
        assert_eq!(run(["yotor", "frobnicate"]), 1);
        assert_eq!(run(["yotor", "summary", "--bogus"]), 1);
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(argv(dir.path(), &["summary", "--model", "XX9"])), 2);
        assert_eq!(run(argv(dir.path(), &["eval", "--gt", "/nonexistent.json", "--dets", "/nonexistent.json"])), 2);
    }

    #[test]
    fn summary_writes_csv_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(argv(dir.path(), &["summary", "--model", "TP5", "--res", "1280"])), 0);
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(csv.lines().count() > 5);
        let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["subcommand"], "summary");
        assert_eq!(m["resolution"], 1280);
        assert_eq!(m["model"]["name"], "TP5");
        assert_eq!(m["outputs"][0], "summary.csv");
    }

    #[test]
    fn infer_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("in.png");
        let mut im = Image::filled(96, 80, 0.3);
        im.draw_box([10.0, 10.0, 50.0, 40.0], [0.9, 0.1, 0.1]);
        im.save(&img).unwrap();
        let args = |out: &Path| argv(out, &["infer", "--model", "TP5-toy", "--nc", "2", "--image", img.to_str().unwrap(), "--score-thresh", "0.01"]);
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        assert_eq!(run(args(&a)), 0);
        assert_eq!(run(args(&b)), 0);
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(&a, "detections.json"), read(&b, "detections.json"));
        assert!(a.join("annotated.png").exists());
    }

    #[test]
    fn plot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![ScatterPoint { name: "a".into(), ms: 10.0, ap: 0.4 }, ScatterPoint { name: "b".into(), ms: 30.0, ap: 0.5 }];
        let input = dir.path().join("pts.csv");
        std::fs::write(&input, bench::scatter_csv(&pts).unwrap()).unwrap();
        assert_eq!(run(argv(dir.path(), &["plot", "--input", input.to_str().unwrap()])), 0);
        assert!(std::fs::read_to_string(dir.path().join("scatter.svg")).unwrap().contains("<svg"));
    }
}
