//! Command-line front end shared by the `zonalseg` binary.
//!
//! Every subcommand reads an optional JSON config; flags override its leaf
//! keys. Exit status is 0 on success, 1 on validation or runtime failure and
//! 2 on usage errors.

use std::fs::{self, File};
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::architectures::{build_model, load_checkpoint, ModelSpec, Variant};
use crate::dataset::{
    generate_phantoms, load_dataset, load_dataset_with_manifest, read_image_png, read_label_png, read_mask_png, save_dataset,
    write_mask_png, InstitutionProfile, PhantomConfig,
};
use crate::error::{Error, Result};
use crate::experiments::{default_workers, evaluate_patient, run_matrix, MatrixPlan, Summary};
use crate::gradcheck::layer_suite;
use crate::metrics::{aggregate_patient, write_metrics_csv, MetricsRecord, MetricsRow, Region};
use crate::postprocess::{derive_pz, postprocess_prediction, Provenance};
use crate::stats::{cd_svg, compare, ComparisonReport};
use crate::training::{train_to_dir, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "zonalseg", version, about = "Two-zone segmentation with U-Net and SE variants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate three synthetic institutions in the PNG dataset layout.
    GeneratePhantom(GenerateArgs),
    /// Train one model on a dataset directory.
    Train(TrainArgs),
    /// Score predicted masks or a checkpoint against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the 21-condition cross-dataset matrix.
    Matrix(MatrixArgs),
    /// Friedman and Bonferroni-Dunn comparison.
    Stats(StatsArgs),
    /// Finite-difference gradient checks of every layer.
    Gradcheck(GradcheckArgs),
    /// Threshold and clean a CG probability map, then derive PZ.
    Postprocess(PostprocessArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON phantom config; defaults to the three standard profiles.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub slices: Option<usize>,
}

/// Config file of `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub data: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub canvas: (usize, usize),
    #[serde(default)]
    pub model_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds both initialisation and training.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted label masks in the dataset layout.
    #[arg(long, requires = "truth", conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// Ground-truth dataset root.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Model checkpoint evaluated on `--truth`.
    #[arg(long, requires = "truth")]
    pub checkpoint: Option<PathBuf>,
    /// Canvas `H,W` for checkpoint evaluation.
    #[arg(long, value_parser = parse_pair, default_value = "36,36")]
    pub canvas: (usize, usize),
    /// Network input `H,W` for checkpoint evaluation.
    #[arg(long, value_parser = parse_pair, default_value = "32,32")]
    pub crop: (usize, usize),
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value = "-")]
    pub condition: String,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "ZONALSEG_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Matrix output directory (reads `summary.json`).
    #[arg(long, conflicts_with = "scores")]
    pub results: Option<PathBuf>,
    /// CSV with a header of method names and one row per block.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Also report the Iman-Davenport F refinement.
    #[arg(long)]
    pub iman_davenport: bool,
    /// Report JSON destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for critical-difference SVGs.
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// CG probability map as a 16-bit grayscale PNG.
    #[arg(long)]
    pub prob: PathBuf,
    /// Whole-gland mask PNG (non-zero = gland).
    #[arg(long)]
    pub wg: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output directory for `cg.png` and `pz.png`.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected H,W, got `{s}`"))?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Parses `std::env::args` and runs; the binary's whole `main`.
pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GeneratePhantom(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Matrix(a) => matrix(a),
        Command::Stats(a) => stats(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Postprocess(a) => postprocess(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => PhantomConfig::new(InstitutionProfile::standard(), 8, 6, 0),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.patients {
        cfg.patients_per_set = p;
    }
    if let Some(s) = a.slices {
        cfg.slices_per_patient = s;
    }
    let sets = generate_phantoms(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("phantom.json"), &cfg)?;
    for ds in &sets {
        save_dataset(ds, &a.out.join(ds.tag()))?;
        println!("{}: {} patients, {} slices", ds.tag(), ds.patients.len(), ds.slice_count());
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainRunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainRunConfig {
            data: PathBuf::new(),
            model: ModelSpec::desk(Variant::EncDecUse),
            train: TrainConfig::default(),
            canvas: (64, 64),
            model_seed: 0,
        },
    };
    if let Some(d) = a.data {
        cfg.data = d;
    }
    if let Some(v) = &a.variant {
        cfg.model.variant = Variant::parse(v)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
        cfg.train.decay_epochs.retain(|&d| d < e);
    }
    if let Some(l) = a.lr0 {
        cfg.train.lr0 = l;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        cfg.model_seed = s;
    }
    if cfg.data.as_os_str().is_empty() {
        return Err(Error::InvalidConfig("no dataset given (--data or `data` in the config)".into()));
    }
    let patients = load_dataset(&cfg.data)?;
    let slices: Vec<_> = patients.iter().flat_map(|p| crate::dataset::preprocess_patient(p, cfg.canvas)).collect();
    let model = build_model(&cfg.model, cfg.model_seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("run.json"), &cfg)?;
    let outcome = train_to_dir(model, &slices, &cfg.train, &a.out)?;
    if let Some(last) = outcome.losses.last() {
        println!("epoch {} loss {:.6}", last.epoch, last.loss);
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let truth_root = a.truth.as_ref().ok_or_else(|| Error::InvalidArgument("--truth is required".into()))?;
    let truth = load_dataset_with_manifest(truth_root).or_else(|_| {
        load_dataset(truth_root).map(|patients| crate::dataset::Dataset {
            descriptor: crate::dataset::DatasetDescriptor {
                tag: truth_root.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
                patient_count: patients.len(),
                canvas: (0, 0),
                spacing_mm: 1.0,
                profile: None,
            },
            patients,
        })
    })?;
    let tag = truth.tag().to_string();
    let mut rows = Vec::new();
    match (&a.pred, &a.checkpoint) {
        (Some(pred_root), None) => {
            for p in &truth.patients {
                let mut cg = Vec::new();
                let mut pz = Vec::new();
                for s in &p.slices {
                    let path = pred_root.join(&p.id).join(format!("slice_{:03}_mask.png", s.index));
                    let (pwg, pcg) = read_label_png(&path)?;
                    if pwg.dims() != s.wg.dims() {
                        return Err(Error::ShapeMismatch {
                            op: "evaluate",
                            left: vec![pwg.dims().0, pwg.dims().1],
                            right: vec![s.wg.dims().0, s.wg.dims().1],
                        });
                    }
                    let pcg = pcg.with_provenance(Provenance::Predicted);
                    cg.push(MetricsRecord::slice(Region::Cg, &pcg, &s.cg));
                    pz.push(MetricsRecord::slice(Region::Pz, &derive_pz(&pwg, &pcg), &s.pz()));
                }
                for rec in [aggregate_patient(&cg), aggregate_patient(&pz)].into_iter().flatten() {
                    rows.push(MetricsRow::new(&tag, &a.condition, 0, &p.id, &rec));
                }
            }
        }
        (None, Some(ckpt)) => {
            let model = load_checkpoint(ckpt)?;
            for p in &truth.patients {
                if let Some(recs) = evaluate_patient(&model, p, a.canvas, a.crop, a.threshold)? {
                    for rec in &recs {
                        rows.push(MetricsRow::new(&tag, &a.condition, 0, &p.id, rec));
                    }
                }
            }
        }
        _ => return Err(Error::InvalidArgument("give exactly one of --pred or --checkpoint".into())),
    }
    match &a.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            write_metrics_csv(file, &rows)
        }
        None => write_metrics_csv(io::stdout().lock(), &rows),
    }
}

fn matrix(a: MatrixArgs) -> Result<()> {
    let mut plan: MatrixPlan = read_json(&a.config)?;
    if let Some(s) = a.seed {
        plan.seed = s;
    }
    if let Some(e) = a.epochs {
        plan.train.epochs = e;
        plan.train.decay_epochs.retain(|&d| d < e);
    }
    let workers = a.workers.unwrap_or_else(default_workers);
    let outcome = run_matrix(&plan, &a.out, workers)?;
    for cell in &outcome.summary.cells {
        let fmt = |r: Region| {
            cell.region(r)
                .and_then(|g| g.dsc)
                .map_or_else(|| "n/a".to_string(), |d| format!("{:.1} ± {:.1}", d.mean, d.sd))
        };
        println!("{:<12} {:>5} {:<40} CG {:<14} PZ {}", cell.method.name(), cell.id, cell.label, fmt(Region::Cg), fmt(Region::Pz));
    }
    for f in &outcome.failures {
        eprintln!("failed: {} {}: {}", f.method.name(), f.condition, f.error);
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{} condition(s) failed", outcome.failures.len())))
    }
}

fn stats(a: StatsArgs) -> Result<()> {
    let reports: Vec<ComparisonReport> = match (&a.results, &a.scores) {
        (Some(dir), None) => {
            let summary: Summary = read_json(&dir.join("summary.json"))?;
            if summary.stats.is_empty() {
                return Err(Error::InvalidArgument("summary has no complete comparison blocks (need at least two methods)".into()));
            }
            summary
                .stats
                .iter()
                .map(|r| {
                    let scores = rebuild_scores(&summary, r)?;
                    compare(&r.label, &r.methods, &scores, a.alpha, a.iman_davenport)
                })
                .collect::<Result<_>>()?
        }
        (None, Some(path)) => {
            let mut rdr = csv::Reader::from_path(path)?;
            let methods: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            let scores = rdr
                .records()
                .map(|r| {
                    let r = r?;
                    r.iter()
                        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("score `{v}`: {e}"))))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            vec![compare("scores", &methods, &scores, a.alpha, a.iman_davenport)?]
        }
        _ => return Err(Error::InvalidArgument("give exactly one of --results or --scores".into())),
    };
    match &a.out {
        Some(p) => write_json(p, &reports)?,
        None => println!("{}", serde_json::to_string_pretty(&reports)?),
    }
    if let Some(dir) = &a.svg_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &reports {
            let path = dir.join(format!("cd_{}.svg", r.label.replace('/', "_")));
            fs::write(&path, cd_svg(r)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn rebuild_scores(summary: &Summary, report: &ComparisonReport) -> Result<Vec<Vec<f64>>> {
    let region = if report.label.starts_with("pz") { Region::Pz } else { Region::Cg };
    let n = summary.conditions.len();
    let spokes = if report.label.ends_with("three-dataset") { n.saturating_sub(2)..=n } else { 1..=n };
    let methods: Vec<Variant> = report.methods.iter().map(|m| Variant::parse(m)).collect::<Result<_>>()?;
    let mut blocks = Vec::new();
    for spoke in spokes {
        let cols: Vec<&Vec<f64>> = methods
            .iter()
            .map(|&m| {
                summary
                    .cell(m, spoke)
                    .and_then(|c| c.region(region))
                    .map(|g| &g.round_dsc)
                    .ok_or_else(|| Error::InvalidArgument(format!("summary lacks {} spoke {spoke}", m.name())))
            })
            .collect::<Result<_>>()?;
        for round in 0..cols[0].len() {
            blocks.push(cols.iter().map(|c| c[round]).collect());
        }
    }
    Ok(blocks)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let checks = layer_suite(a.seed, a.eps)?;
    let mut worst = 0.0f64;
    for c in &checks {
        println!("{:<20} max rel error {:.3e}  ({} coords, {} kink-crossing excluded)", c.layer, c.max_rel_error, c.coordinates, c.kink_crossings);
        worst = worst.max(c.max_rel_error);
    }
    if worst < a.tolerance {
        println!("all layers below {:e}", a.tolerance);
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("max relative error {worst:e} exceeds {:e}", a.tolerance)))
    }
}

fn postprocess(a: PostprocessArgs) -> Result<()> {
    let prob = read_image_png(&a.prob)?;
    let wg = read_mask_png(&a.wg, Provenance::Truth)?;
    if prob.dims() != wg.dims() {
        return Err(Error::ShapeMismatch {
            op: "postprocess",
            left: vec![prob.height(), prob.width()],
            right: vec![wg.dims().0, wg.dims().1],
        });
    }
    let masks = postprocess_prediction(&prob, &wg, a.threshold);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_mask_png(&a.out.join("cg.png"), &masks.cg)?;
    write_mask_png(&a.out.join("pz.png"), &masks.pz)?;
    println!("CG {} px, PZ {} px", masks.cg.count(), masks.pz.count());
    Ok(())
}
