//! Command-line surface. Exit codes: 0 success, 1 runtime or validation
//! failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtjrd_core::codec::{self, rasterize_qfmap, Bitstream, QfMap};
use mtjrd_core::evaluation::{bd_metric, bd_rate, ApParams, RateAccuracyCurve};
use mtjrd_core::predictor::{
    decode_checkpoint, encode_checkpoint, grad_check, toy_dataset, train, Model, ModelConfig, PredictMode, Sample,
};
use mtjrd_core::vcm::{region_target_psnr, search_qf, InternalReference, ReferenceSource};
use mtjrd_core::{annotation::dataset_stats, BoundingBox, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::curves::{read_curve, svg_plot, write_curve};
use crate::error::{Error, Result};
use crate::image_io::{read_image, write_bytes, write_image};
use crate::manifest::Manifest;
use crate::pipeline::{
    build_samples, ladder_curve, predict_annotations, prediction_errors, quality_delta, run_vcm, FileReference, References,
    VcmSettings,
};
use crate::responses::{
    annotate_all, load_ladders, read_annotations, read_json, sweep_means, write_annotations, write_json,
};
use mtjrd_core::annotation::SWEEP_THRESHOLDS;

#[derive(Debug, Parser)]
#[command(name = "mtjrd", version, about = "Multi-task JRD annotation, prediction and JRD-driven JPEG coding")]
pub struct Cli {
    /// JSON config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed of every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build JRD annotations from a response directory.
    Annotate(AnnotateArgs),
    /// Dataset statistics of an annotation file.
    Stats(StatsArgs),
    /// Encode an image with a uniform QF or a QF map.
    Encode(EncodeArgs),
    /// Decode a bitstream to PPM/PNG.
    Decode(DecodeArgs),
    /// Search the QF whose region PSNR best matches a target.
    QfSearch(QfSearchArgs),
    /// JRD-driven encoding of annotated images.
    VcmEncode(VcmArgs),
    /// Train the JRD predictor.
    Train(TrainArgs),
    /// Predict per-task JRDs of annotated objects.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Rate-accuracy curves, prediction errors and quality deltas.
    Evaluate(EvaluateArgs),
    /// BD-mAP between two rate-accuracy curves.
    BdMetric(BdArgs),
    /// Summary table and SVG plot over several curves.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Od,
    Is,
    Kpd,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Od => Task::Od,
            TaskArg::Is => Task::Is,
            TaskArg::Kpd => Task::Kpd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JrdSource {
    Gt,
    Predicted,
    File,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Argmax,
    Expectation,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub min_keypoint_area: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Response directory for the threshold sweep.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, conflicts_with = "qfmap")]
    pub qf: Option<u8>,
    /// QF map JSON: `{"blocks_w", "blocks_h", "qf"}` or `{"regions": [{"box", "qf"}]}`.
    #[arg(long)]
    pub qfmap: Option<PathBuf>,
    #[arg(long)]
    pub background_qf: Option<u8>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct QfSearchArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// `x,y,w,h` in pixels.
    #[arg(long, value_parser = parse_box)]
    pub bbox: BoundingBox,
    #[arg(long, conflicts_with = "jrd", required_unless_present = "jrd")]
    pub target_psnr: Option<f64>,
    /// JRD level; the target PSNR is read off its reference.
    #[arg(long)]
    pub jrd: Option<u8>,
    /// External reconstructions `qpNN.ppm|png` of this image.
    #[arg(long)]
    pub reference_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "od")]
    pub task: TaskArg,
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<u8>>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VcmArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gt")]
    pub jrd_source: JrdSource,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Annotation-format file of JRDs for `--jrd-source file`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub delta_qf: Option<Vec<i32>>,
    #[arg(long)]
    pub background_qf: Option<u8>,
    /// Directory of `<image_id>/qpNN.{ppm,png}` or `internal`.
    #[arg(long)]
    pub reference_dir: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<u8>>,
    /// Output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Train on the built-in toy set instead of annotations.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Start the three branches from identical weights.
    #[arg(long)]
    pub shared_init: bool,
    /// Checkpoint path.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Check a saved model instead of a fresh one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the small configuration whose every weight is checked.
    #[arg(long)]
    pub tiny: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Entries per parameter group (default: all).
    #[arg(long)]
    pub max_per_group: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ladder files; one curve each.
    #[arg(long)]
    pub ladder: Vec<PathBuf>,
    /// Ground-truth annotations.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Predicted JRDs in annotation format.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// With `--predictions`: compare reconstructions driven by both.
    #[arg(long, requires = "predictions")]
    pub quality: bool,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "od")]
    pub task: TaskArg,
    /// Single AP threshold instead of the 0.50:0.95 sweep.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BdArgs {
    pub reference: PathBuf,
    pub test: PathBuf,
    /// Task of CSV curves.
    #[arg(long, value_enum, default_value = "od")]
    pub task: TaskArg,
    /// Also print the rate difference at equal accuracy.
    #[arg(long)]
    pub rate: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub curves: Vec<PathBuf>,
    /// Label of the anchor curve (default: the first).
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long, value_enum, default_value = "od")]
    pub task: TaskArg,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn parse_box(s: &str) -> std::result::Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [x, y, w, h] = v[..] else {
        return Err("expected x,y,w,h".into());
    };
    BoundingBox::new(x, y, w, h).map_err(|e| e.to_string())
}

/// Layers the config file and this invocation's flags over the defaults.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    let p = &mut c.paths;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
        (opt $dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = Some(v);
            }
        };
    }
    match &cli.command {
        Some(Command::Annotate(a)) => {
            set!(opt p.responses, a.responses);
            set!(opt p.output, a.output);
            set!(c.threshold, a.threshold);
            set!(c.window, a.window);
            set!(c.min_keypoint_area, a.min_keypoint_area);
        }
        Some(Command::Stats(a)) => {
            set!(opt p.annotations, a.annotations);
            set!(opt p.responses, a.responses);
            set!(opt p.output, a.output);
        }
        Some(Command::Encode(a)) => {
            set!(opt p.output, Some(a.output.clone()));
            set!(c.background_qf, a.background_qf);
        }
        Some(Command::Decode(a)) => set!(opt p.output, Some(a.output.clone())),
        Some(Command::QfSearch(a)) => {
            set!(opt p.references, a.reference_dir);
            set!(opt c.candidates, a.candidates);
            set!(opt p.output, a.output);
        }
        Some(Command::VcmEncode(a)) => {
            set!(opt p.annotations, a.annotations);
            set!(opt p.images, a.images);
            set!(opt p.checkpoint, a.checkpoint);
            set!(opt p.predictions, a.predictions);
            set!(c.delta_qf, a.delta_qf);
            set!(c.background_qf, a.background_qf);
            set!(opt c.candidates, a.candidates);
            set!(opt p.output, a.output);
            match a.reference_dir.as_deref() {
                Some("internal") => p.references = None,
                Some(d) => p.references = Some(d.into()),
                None => {}
            }
        }
        Some(Command::Train(a)) => {
            set!(opt p.annotations, a.annotations);
            set!(opt p.images, a.images);
            set!(c.train.epochs, a.epochs);
            set!(c.train.lr, a.lr);
            set!(c.train.batch_size, a.batch_size);
            set!(c.sigma, a.sigma);
            set!(opt p.output, a.output);
            if a.shared_init {
                c.model.shared_init = true;
            }
        }
        Some(Command::Predict(a)) => {
            set!(opt p.checkpoint, a.checkpoint);
            set!(opt p.annotations, a.annotations);
            set!(opt p.images, a.images);
            set!(opt p.output, a.output);
            if let Some(m) = a.mode {
                c.predict_mode = match m {
                    ModeArg::Argmax => PredictMode::Argmax,
                    ModeArg::Expectation => PredictMode::Expectation,
                };
            }
        }
        Some(Command::GradCheck(a)) => {
            set!(opt p.checkpoint, a.checkpoint);
            set!(opt p.output, a.output);
        }
        Some(Command::Evaluate(a)) => {
            set!(opt p.annotations, a.annotations);
            set!(opt p.predictions, a.predictions);
            set!(opt p.images, a.images);
            set!(opt p.output, a.output);
        }
        Some(Command::BdMetric(_)) => {}
        Some(Command::Report(a)) => set!(opt p.output, Some(a.output.clone())),
        None => {}
    }
    let c = c.finish();
    c.validate()?;
    Ok(c)
}

/// Parses, runs and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if cli.print_config {
        print_json(&cfg);
        return Ok(());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::validation("threads", "must be at least 1"));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let Some(cmd) = &cli.command else {
        return Err(Error::validation("command", "no subcommand given; see --help"));
    };
    match cmd {
        Command::Annotate(_) => annotate(&cfg),
        Command::Stats(_) => stats(&cfg),
        Command::Encode(a) => encode(&cfg, a),
        Command::Decode(a) => decode(&cfg, a),
        Command::QfSearch(a) => qf_search(&cfg, a),
        Command::VcmEncode(a) => vcm(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Predict(_) => predict_cmd(&cfg),
        Command::GradCheck(a) => grad_check_cmd(&cfg, a),
        Command::Evaluate(a) => evaluate(&cfg, a),
        Command::BdMetric(a) => bd(a),
        Command::Report(a) => report(&cfg, a),
    }
}

/// Writes one line to stdout; a closed pipe is not an error.
fn print_line(s: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

fn print_json<T: Serialize>(value: &T) {
    print_line(&serde_json::to_string_pretty(value).expect("value serializes"));
}

fn manifest(command: &str, cfg: &PipelineConfig, inputs: &[&Path], outputs: &[&Path], primary: &Path) -> Result<()> {
    let ins: Vec<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
    let outs: Vec<PathBuf> = outputs.iter().map(|p| p.to_path_buf()).collect();
    let path = Manifest::new(command, cfg, &ins, &outs)?.write(primary)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

fn annotate(cfg: &PipelineConfig) -> Result<()> {
    let responses = cfg.require("paths.responses", &cfg.paths.responses)?;
    let output = cfg.require("paths.output", &cfg.paths.output)?;
    let images = load_ladders(responses)?;
    let anns = annotate_all(&images, &cfg.annotation_params())?;
    log::info!("{} objects annotated over {} images", anns.len(), images.len());
    write_annotations(output, &anns)?;
    manifest("annotate", cfg, &[responses], &[output], output)
}

fn stats(cfg: &PipelineConfig) -> Result<()> {
    let ann_path = cfg.require("paths.annotations", &cfg.paths.annotations)?;
    let anns = read_annotations(ann_path)?;
    let mut inputs = vec![ann_path];
    let sweep = match &cfg.paths.responses {
        Some(r) => {
            inputs.push(r);
            Some(sweep_means(&load_ladders(r)?, &SWEEP_THRESHOLDS, &cfg.annotation_params())?)
        }
        None => None,
    };
    let s = dataset_stats(&anns, sweep);
    match &cfg.paths.output {
        Some(out) => {
            write_json(out, &s)?;
            manifest("stats", cfg, &inputs, &[out], out)
        }
        None => {
            print_json(&s);
            Ok(())
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QfMapFile {
    Grid { blocks_w: usize, blocks_h: usize, qf: Vec<u8> },
    Regions { regions: Vec<Region>, background_qf: Option<u8> },
}

#[derive(Deserialize)]
struct Region {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    qf: u8,
}

fn encode(cfg: &PipelineConfig, a: &EncodeArgs) -> Result<()> {
    let image = read_image(&a.input)?;
    let (w, h) = (image.width(), image.height());
    let map = match (a.qf, &a.qfmap) {
        (Some(q), None) => QfMap::uniform(w, h, q).map_err(|e| Error::validation("qf", e.to_string()))?,
        (None, Some(p)) => match read_json::<QfMapFile>(p)? {
            QfMapFile::Grid { blocks_w, blocks_h, qf } => {
                let m = QfMap::new(blocks_w, blocks_h, qf).map_err(|e| Error::format(p, e.to_string()))?;
                if !m.matches_image(w, h) {
                    return Err(Error::format(p, format!("grid {blocks_w}x{blocks_h} does not fit a {w}x{h} image")));
                }
                m
            }
            QfMapFile::Regions { regions, background_qf } => {
                let rs = regions
                    .iter()
                    .map(|r| Ok((BoundingBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3])?, r.qf)))
                    .collect::<mtjrd_core::Result<Vec<_>>>()
                    .map_err(|e| Error::format(p, e.to_string()))?;
                let bg = a.background_qf.or(background_qf).unwrap_or(cfg.background_qf);
                rasterize_qfmap(&rs, bg, w, h).map_err(|e| Error::format(p, e.to_string()))?
            }
        },
        _ => return Err(Error::validation("qf", "give exactly one of --qf and --qfmap")),
    };
    let bits = codec::encode(&image, &map)?;
    std::fs::write(&a.output, bits.bytes()).map_err(|e| Error::io(&a.output, e))?;
    log::info!("{} bytes, {:.4} bpp", bits.len(), codec::measure_rate(bits.len(), w, h));
    let mut inputs = vec![a.input.as_path()];
    if let Some(p) = &a.qfmap {
        inputs.push(p);
    }
    manifest("encode", cfg, &inputs, &[&a.output], &a.output)
}

fn decode(cfg: &PipelineConfig, a: &DecodeArgs) -> Result<()> {
    let bytes = std::fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let image = codec::decode(&Bitstream::from_bytes(bytes)).map_err(|e| Error::format(&a.input, e.to_string()))?;
    write_image(&a.output, &image)?;
    manifest("decode", cfg, &[&a.input], &[&a.output], &a.output)
}

#[derive(Serialize)]
struct QfSearchOutput {
    qf: u8,
    target_psnr: f64,
    psnr: f64,
    probes: usize,
    exhaustive: bool,
}

fn qf_search(cfg: &PipelineConfig, a: &QfSearchArgs) -> Result<()> {
    let image = read_image(&a.image)?;
    let target = match (a.target_psnr, a.jrd) {
        (Some(t), _) => t,
        (None, Some(j)) => {
            let reference = match &cfg.paths.references {
                Some(d) => FileReference { dir: d.clone() }.reference(&image, &a.bbox, j)?,
                None => InternalReference::default().reference(&image, &a.bbox, j)?,
            };
            region_target_psnr(&image, &reference, &a.bbox)?
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let candidates = cfg.candidates_for(a.task.into())?;
    let r = search_qf(&image, &a.bbox, target, &candidates)?;
    let out = QfSearchOutput {
        qf: r.qf,
        target_psnr: target,
        psnr: r.psnr,
        probes: r.probes,
        exhaustive: r.exhaustive,
    };
    match &cfg.paths.output {
        Some(p) => {
            write_json(p, &out)?;
            manifest("qf-search", cfg, &[&a.image], &[p], p)
        }
        None => {
            print_json(&out);
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn vcm(cfg: &PipelineConfig, a: &VcmArgs) -> Result<()> {
    let ann_path = cfg.require("paths.annotations", &cfg.paths.annotations)?;
    let images = cfg.require("paths.images", &cfg.paths.images)?;
    let out = cfg.require("paths.output", &cfg.paths.output)?;
    let truth = read_annotations(ann_path)?;
    let mut inputs = vec![ann_path, images];
    let anns = match a.jrd_source {
        JrdSource::Gt => truth,
        JrdSource::Predicted => {
            let ck = cfg.require("paths.checkpoint", &cfg.paths.checkpoint)?;
            inputs.push(ck);
            predict_annotations(&load_model(ck)?, &truth, images, cfg.predict_mode)?
        }
        JrdSource::File => {
            let p = cfg.require("paths.predictions", &cfg.paths.predictions)?;
            inputs.push(p);
            read_annotations(p)?
        }
    };
    let references = match &cfg.paths.references {
        Some(d) => {
            inputs.push(d);
            References::Directory(d.clone())
        }
        None => References::Internal,
    };
    let task: Task = a.task.into();
    let candidates = cfg.candidates_for(task)?;
    let settings = VcmSettings {
        task,
        deltas: &cfg.delta_qf,
        background_qf: cfg.background_qf,
        candidates: &candidates,
        references: &references,
    };
    let records = run_vcm(&anns, images, &settings, out)?;
    let summary = out.join("summary.json");
    write_json(&summary, &records)?;
    let mut outputs: Vec<PathBuf> = records.iter().map(|r| out.join(&r.bitstream)).collect();
    outputs.push(summary);
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    manifest("vcm-encode", cfg, &inputs, &outs, out)
}

#[derive(Serialize)]
struct TrainSummary {
    samples: usize,
    epochs: usize,
    epoch_loss: Vec<f64>,
}

fn train_cmd(cfg: &PipelineConfig, a: &TrainArgs) -> Result<()> {
    let out = cfg.require("paths.output", &cfg.paths.output)?;
    let mut inputs: Vec<&Path> = Vec::new();
    let data: Vec<Sample> = if a.toy {
        toy_dataset(cfg.model.input_size, cfg.seed)?
    } else {
        let ann = cfg.require("paths.annotations", &cfg.paths.annotations)?;
        let images = cfg.require("paths.images", &cfg.paths.images)?;
        inputs.extend([ann, images]);
        build_samples(&read_annotations(ann)?, images, cfg.model.input_size)?
    };
    if data.is_empty() {
        return Err(Error::validation("paths.annotations", "no labelled objects to train on"));
    }
    let model = Model::init(cfg.model)?;
    let (model, report) = train(model, &data, &cfg.train)?;
    if let Some(l) = report.epoch_loss.last() {
        log::info!("final mean loss {l:.5} over {} samples", data.len());
    }
    write_bytes(out, &encode_checkpoint(&model))?;
    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".train.json");
    let log_path = PathBuf::from(log_path);
    write_json(
        &log_path,
        &TrainSummary {
            samples: data.len(),
            epochs: cfg.train.epochs,
            epoch_loss: report.epoch_loss,
        },
    )?;
    manifest("train", cfg, &inputs, &[out, &log_path], out)
}

fn predict_cmd(cfg: &PipelineConfig) -> Result<()> {
    let ck = cfg.require("paths.checkpoint", &cfg.paths.checkpoint)?;
    let ann = cfg.require("paths.annotations", &cfg.paths.annotations)?;
    let images = cfg.require("paths.images", &cfg.paths.images)?;
    let out = cfg.require("paths.output", &cfg.paths.output)?;
    let preds = predict_annotations(&load_model(ck)?, &read_annotations(ann)?, images, cfg.predict_mode)?;
    write_annotations(out, &preds)?;
    manifest("predict", cfg, &[ck, ann, images], &[out], out)
}

#[derive(Serialize)]
struct GradCheckOutput {
    max_relative_error: f64,
    tolerance: f64,
    groups: Vec<GroupError>,
}

#[derive(Serialize)]
struct GroupError {
    name: String,
    relative_error: f64,
    entries: usize,
}

fn grad_check_cmd(cfg: &PipelineConfig, a: &GradCheckArgs) -> Result<()> {
    let model = match &cfg.paths.checkpoint {
        Some(p) => load_model(p)?,
        None if a.tiny => Model::init(ModelConfig::tiny(cfg.seed))?,
        None => Model::init(cfg.model)?,
    };
    let c = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sample = Sample {
        input: (0..c.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect(),
        attrs: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
        jrd: [0; 3].map(|_| Some(rng.random_range(0..64u8))),
    };
    let r = grad_check(&model, &sample, cfg.sigma, a.step, a.max_per_group)?;
    let out = GradCheckOutput {
        max_relative_error: r.max_relative_error,
        tolerance: a.tolerance,
        groups: r
            .groups
            .into_iter()
            .map(|(name, relative_error, entries)| GroupError {
                name,
                relative_error,
                entries,
            })
            .collect(),
    };
    match &cfg.paths.output {
        Some(p) => {
            write_json(p, &out)?;
            let inputs: Vec<&Path> = cfg.paths.checkpoint.iter().map(|p| p.as_path()).collect();
            manifest("grad-check", cfg, &inputs, &[p], p)?;
        }
        None => print_json(&out),
    }
    if !(out.max_relative_error <= a.tolerance) {
        return Err(Error::validation(
            "tolerance",
            format!("max relative error {:.3e} exceeds {:.3e}", out.max_relative_error, a.tolerance),
        ));
    }
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, a: &EvaluateArgs) -> Result<()> {
    let out = cfg.require("paths.output", &cfg.paths.output)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut inputs: Vec<PathBuf> = Vec::new();
    let mut outputs: Vec<PathBuf> = Vec::new();
    let params = match a.iou {
        Some(t) => ApParams::single(t),
        None => ApParams {
            kappas: cfg.kappas,
            ..ApParams::default()
        },
    };
    for l in &a.ladder {
        let (curve, ins) = ladder_curve(l, &params)?;
        inputs.extend(ins);
        for ext in ["csv", "json"] {
            let p = out.join(format!("{}.{ext}", curve.label));
            write_curve(&p, &curve)?;
            outputs.push(p);
        }
    }
    if let Some(pred_path) = &cfg.paths.predictions {
        let ann = cfg.require("paths.annotations", &cfg.paths.annotations)?;
        let truth = read_annotations(ann)?;
        let preds = read_annotations(pred_path)?;
        inputs.extend([ann.to_path_buf(), pred_path.clone()]);
        let errors: BTreeMap<Task, _> = prediction_errors(&truth, &preds)?;
        let p = out.join("prediction_errors.json");
        write_json(&p, &errors)?;
        outputs.push(p);
        if a.quality {
            let images = cfg.require("paths.images", &cfg.paths.images)?;
            inputs.push(images.to_path_buf());
            let task: Task = a.task.into();
            let candidates = cfg.candidates_for(task)?;
            let references = match &cfg.paths.references {
                Some(d) => References::Directory(d.clone()),
                None => References::Internal,
            };
            let s = VcmSettings {
                task,
                deltas: &[0],
                background_qf: cfg.background_qf,
                candidates: &candidates,
                references: &references,
            };
            let q = quality_delta(&truth, &preds, images, &s)?;
            let p = out.join(format!("quality_{task}.json"));
            write_json(&p, &q)?;
            outputs.push(p);
        }
    } else if a.quality {
        return Err(Error::validation("paths.predictions", "required for --quality"));
    }
    if outputs.is_empty() {
        return Err(Error::validation("evaluate", "nothing to evaluate; give --ladder or --predictions"));
    }
    let ins: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    manifest("evaluate", cfg, &ins, &outs, out)
}

fn bd(a: &BdArgs) -> Result<()> {
    let task: Task = a.task.into();
    let r = read_curve(&a.reference, task)?;
    let t = read_curve(&a.test, task)?;
    print_line(&format!("{:.2}", bd_metric(&r, &t)?));
    if a.rate {
        print_line(&format!("{:.2}", bd_rate(&r, &t)?));
    }
    Ok(())
}

fn report(cfg: &PipelineConfig, a: &ReportArgs) -> Result<()> {
    let task: Task = a.task.into();
    let curves: Vec<RateAccuracyCurve> = a.curves.iter().map(|p| read_curve(p, task)).collect::<Result<_>>()?;
    let anchor = match &a.reference {
        Some(l) => curves
            .iter()
            .find(|c| &c.label == l)
            .ok_or_else(|| Error::validation("reference", format!("no curve labelled {l}")))?,
        None => &curves[0],
    };
    std::fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| Error::format(&a.output, e.to_string());
    w.write_record(["label", "task", "points", "bd_map", "bd_rate"]).map_err(row_err)?;
    for c in &curves {
        let m = bd_metric(anchor, c).map(|v| format!("{v:.4}")).unwrap_or_default();
        let r = bd_rate(anchor, c).map(|v| format!("{v:.4}")).unwrap_or_default();
        w.write_record([c.label.clone(), c.task.to_string(), c.points().len().to_string(), m, r])
            .map_err(row_err)?;
    }
    let table = a.output.join("summary.csv");
    write_bytes(&table, &w.into_inner().map_err(|e| Error::format(&a.output, e.to_string()))?)?;
    let plot = a.output.join("rate_accuracy.svg");
    write_bytes(&plot, svg_plot(&format!("Rate-accuracy ({task})"), &curves).as_bytes())?;
    let ins: Vec<&Path> = a.curves.iter().map(|p| p.as_path()).collect();
    manifest("report", cfg, &ins, &[&table, &plot], &a.output)
}
