//! Command-line harness: synthetic dataset generation, registration runs,
//! metric evaluation and mode-comparison sweeps.
//!
//! Exit codes: 0 success, 1 I/O or data problems, 2 divergence, 3 degenerate
//! input, 64 usage. Every command writes a manifest that embeds the fully
//! resolved configuration, so any run can be reproduced from its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::energy::{LossConfig, Similarity};
use crate::grid::{
    load_image, load_labels, save_field, save_image, save_labels, Dims, Image,
    ImageFormat, LabelMap,
};
use crate::metrics::{self, MetricsReport};
use crate::pipeline::{run_pipeline, AdamConfig, Mode, PipelineConfig};
use crate::sampler::{warp_image, warp_labels};
use crate::synth::{make_pair, phantom, PhantomKind, SynthConfig};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "antiblur",
    about = "Multi-stage deformable image registration with a single-interpolation guarantee",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic registration pair from a phantom image.
    Synth(SynthArgs),
    /// Register a source image onto a target.
    Register(RegisterArgs),
    /// Evaluate metrics between two images (and optional label maps).
    Metrics(MetricsArgs),
    /// Sweep stage counts and modes over a dataset of synthetic pairs.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Grid extents, e.g. 64x64 or 32x32x32.
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian smoothing std in voxels.
    #[arg(long)]
    sigma: Option<f64>,
    /// Displacement scale.
    #[arg(long)]
    alpha: Option<f64>,
    /// Use the desk-scale calibration instead of sigma=18, alpha=800.
    #[arg(long)]
    preset_desk: bool,
    /// Phantom pattern: checkerboard, disk or shapes.
    #[arg(long, default_value = "checkerboard")]
    phantom: String,
    /// Checkerboard cell edge in voxels.
    #[arg(long)]
    cell: Option<usize>,
    /// Disk radius in voxels.
    #[arg(long)]
    radius: Option<f64>,
    /// JSON config file; its `synth` section seeds the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON config file mirroring the pipeline/loss field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// abn, crn or single.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// mse, ncc_global or ncc_windowed.
    #[arg(long)]
    similarity: Option<String>,
    /// Window for ncc_windowed.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    labels_a: Option<PathBuf>,
    #[arg(long)]
    labels_b: Option<PathBuf>,
    /// Interior crop margin for the sharpness scores.
    #[arg(long, default_value_t = 2)]
    crop: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset directory with one subdirectory per pair (as written by
    /// `synth`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sweep stage counts 1..=N.
    #[arg(long, default_value_t = 10)]
    max_stages: usize,
    /// Comma-separated modes to sweep.
    #[arg(long, default_value = "abn,crn")]
    modes: String,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parallel worker cap.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Leave the seconds column empty for byte-reproducible reports.
    #[arg(long)]
    omit_seconds: bool,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Register(a) => cmd_register(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let parts: std::result::Result<Vec<usize>, _> =
        s.split('x').map(|p| p.parse::<usize>()).collect();
    parts.map_err(|_| Error::Parameter(format!("cannot parse dims {:?}", s)))
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "abn" => Ok(Mode::Abn),
        "crn" => Ok(Mode::Crn),
        "single" => Ok(Mode::Single),
        other => Err(Error::Parameter(format!("unknown mode {:?}", other))),
    }
}

fn parse_similarity(s: &str, window: Option<usize>) -> Result<Similarity> {
    match s {
        "mse" => Ok(Similarity::Mse),
        "ncc_global" => Ok(Similarity::NccGlobal),
        "ncc_windowed" => Ok(Similarity::NccWindowed {
            window: window.unwrap_or(9),
        }),
        other => Err(Error::Parameter(format!("unknown similarity {:?}", other))),
    }
}

/// Optional JSON config file, overridden field-by-field by explicit flags.
#[derive(Debug, Default, serde::Deserialize)]
struct FileConfig {
    pipeline: Option<PipelineConfig>,
    loss: Option<LossConfig>,
    synth: Option<SynthConfig>,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
    }
}

fn resolve_pipeline_config(
    file: &FileConfig,
    mode: Option<&str>,
    stages: Option<usize>,
    inner_iters: Option<usize>,
    lambda: Option<f64>,
    similarity: Option<&str>,
    window: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
) -> Result<PipelineConfig> {
    let mut cfg = file.pipeline.clone().unwrap_or_default();
    if let Some(loss) = file.loss {
        cfg.loss = loss;
    }
    if let Some(m) = mode {
        cfg.mode = parse_mode(m)?;
    }
    if let Some(s) = stages {
        cfg.stages = s;
    }
    if let Some(i) = inner_iters {
        cfg.inner_iters = i;
    }
    if let Some(l) = lambda {
        cfg.loss.lambda = l;
    }
    if let Some(s) = similarity {
        cfg.loss.similarity = parse_similarity(s, window)?;
    }
    if let Some(lr) = lr {
        cfg.optimizer = AdamConfig {
            learning_rate: lr,
            ..cfg.optimizer
        };
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct StageLossRow {
    stage: usize,
    similarity: f64,
    regularizer: f64,
    total: f64,
}

/// Snapshot of one run: resolved config, paths and headline numbers. All
/// seeds are embedded, so the manifest determines a reproducible rerun.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pipeline: Option<PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<SynthConfig>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage_losses: Option<Vec<StageLossRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pair_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    single_interpolation_invariant: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let dims_vec = parse_dims(&args.dims)?;
    let dims = Dims::new(&dims_vec)?;
    let file = load_file_config(args.config.as_ref())?;
    let mut cfg = if args.preset_desk {
        SynthConfig::desk(&dims_vec, args.seed)
    } else {
        SynthConfig::reference(&dims_vec, args.seed)
    };
    if let Some(fc) = file.synth {
        cfg = SynthConfig {
            dims: dims_vec.clone(),
            seed: args.seed,
            ..fc
        };
    }
    if let Some(s) = args.sigma {
        cfg.sigma = s;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    cfg.validate()?;

    let min_extent = *dims_vec.iter().min().unwrap();
    let (raw, labels) = match args.phantom.as_str() {
        "checkerboard" => phantom(
            PhantomKind::Checkerboard {
                cell: args.cell.unwrap_or_else(|| (min_extent / 8).max(1)),
            },
            &dims,
        )?,
        "disk" => phantom(
            PhantomKind::Disk {
                radius: args.radius.unwrap_or(min_extent as f64 / 3.0),
            },
            &dims,
        )?,
        "shapes" => phantom(PhantomKind::LabeledShapes, &dims)?,
        other => return Err(Error::Parameter(format!("unknown phantom {:?}", other))),
    };

    std::fs::create_dir_all(&args.out)?;
    let (source, target, field) = make_pair(&raw, &cfg)?;

    let source_path = args.out.join("source.rawvol");
    let target_path = args.out.join("target.rawvol");
    let field_path = args.out.join("true_field.rawvol");
    save_image(&source, &source_path, ImageFormat::RawVol)?;
    save_image(&target, &target_path, ImageFormat::RawVol)?;
    save_field(&field, &field_path)?;

    let mut outputs = BTreeMap::new();
    outputs.insert("source".into(), path_str(&source_path));
    outputs.insert("target".into(), path_str(&target_path));
    outputs.insert("true_field".into(), path_str(&field_path));

    if let Some(labels) = labels {
        let warped = warp_labels(&labels, &field)?;
        let la = args.out.join("labels_source.rawvol");
        let lb = args.out.join("labels_target.rawvol");
        save_labels(&labels, &la)?;
        save_labels(&warped, &lb)?;
        outputs.insert("labels_source".into(), path_str(&la));
        outputs.insert("labels_target".into(), path_str(&lb));
    }

    let manifest = RunManifest {
        command: "synth".into(),
        pipeline: None,
        synth: Some(cfg),
        inputs: BTreeMap::new(),
        outputs,
        stage_losses: None,
        metrics: None,
        pair_mse: Some(crate::energy::mse(&source, &target)?),
        single_interpolation_invariant: None,
        seconds: Some(start.elapsed().as_secs_f64()),
    };
    write_manifest(&args.out, &manifest)
}

fn load_any_image(path: &Path) -> Result<Image> {
    load_image(path, ImageFormat::from_path(path))
}

fn cmd_register(args: &RegisterArgs) -> Result<()> {
    let start = Instant::now();
    let file = load_file_config(args.config.as_ref())?;
    let cfg = resolve_pipeline_config(
        &file,
        args.mode.as_deref(),
        args.stages,
        args.inner_iters,
        args.lambda,
        args.similarity.as_deref(),
        args.window,
        args.lr,
        args.seed,
    )?;

    let source = load_any_image(&args.source)?;
    let target = load_any_image(&args.target)?;
    let result = run_pipeline(&source, &target, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    let warped_path = args.out.join("warped.rawvol");
    let field_path = args.out.join("field.rawvol");
    let trace_path = args.out.join("trace.csv");
    save_image(&result.final_warped, &warped_path, ImageFormat::RawVol)?;
    save_field(&result.final_field, &field_path)?;

    let mut csv = String::from("stage,similarity,regularizer,total\n");
    let mut stage_losses = Vec::new();
    for t in &result.traces {
        let total = t.loss_similarity + cfg.loss.lambda * t.loss_regularizer;
        csv.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e}\n",
            t.stage_index, t.loss_similarity, t.loss_regularizer, total
        ));
        stage_losses.push(StageLossRow {
            stage: t.stage_index,
            similarity: t.loss_similarity,
            regularizer: t.loss_regularizer,
            total,
        });
    }
    std::fs::write(&trace_path, csv)?;

    let invariant = match cfg.mode {
        Mode::Abn | Mode::Single => {
            Some(result.final_warped == warp_image(&source, &result.final_field)?)
        }
        Mode::Crn => None,
    };

    let mut inputs = BTreeMap::new();
    inputs.insert("source".into(), path_str(&args.source));
    inputs.insert("target".into(), path_str(&args.target));
    let mut outputs = BTreeMap::new();
    outputs.insert("warped".into(), path_str(&warped_path));
    outputs.insert("field".into(), path_str(&field_path));
    outputs.insert("trace".into(), path_str(&trace_path));

    let manifest = RunManifest {
        command: "register".into(),
        pipeline: Some(cfg),
        synth: None,
        inputs,
        outputs,
        stage_losses: Some(stage_losses),
        metrics: Some(metrics::report(&result.final_warped, &target, None, 2)?),
        pair_mse: None,
        single_interpolation_invariant: invariant,
        seconds: Some(start.elapsed().as_secs_f64()),
    };
    write_manifest(&args.out, &manifest)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let a = load_any_image(&args.a)?;
    let b = load_any_image(&args.b)?;
    let labels = match (&args.labels_a, &args.labels_b) {
        (Some(pa), Some(pb)) => Some((load_labels(pa)?, load_labels(pb)?)),
        (None, None) => None,
        _ => {
            return Err(Error::Parameter(
                "labels-a and labels-b must be given together".into(),
            ))
        }
    };
    let report = metrics::report(
        &a,
        &b,
        labels.as_ref().map(|(x, y)| (x, y)),
        args.crop,
    )?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    print!("{}", text);
    if let Some(out) = &args.out {
        std::fs::write(out, text)?;
    }
    Ok(())
}

struct Pair {
    id: String,
    source: Image,
    target: Image,
    labels: Option<(LabelMap, LabelMap)>,
}

fn load_dataset(dir: &Path) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for sub in entries {
        let src = sub.join("source.rawvol");
        let tgt = sub.join("target.rawvol");
        if !src.exists() || !tgt.exists() {
            continue;
        }
        let la = sub.join("labels_source.rawvol");
        let lb = sub.join("labels_target.rawvol");
        let labels = if la.exists() && lb.exists() {
            Some((load_labels(&la)?, load_labels(&lb)?))
        } else {
            None
        };
        pairs.push(Pair {
            id: sub
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            source: load_image(&src, ImageFormat::RawVol)?,
            target: load_image(&tgt, ImageFormat::RawVol)?,
            labels,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Parameter(format!(
            "no synthetic pairs found under {:?}",
            dir
        )));
    }
    Ok(pairs)
}

fn format_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.6}", v),
        None => String::new(),
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    if args.max_stages < 1 {
        return Err(Error::Parameter("max-stages must be >= 1".into()));
    }
    let modes: Vec<Mode> = args
        .modes
        .split(',')
        .map(|m| parse_mode(m.trim()))
        .collect::<Result<_>>()?;
    if modes.is_empty() {
        return Err(Error::Parameter("no modes given".into()));
    }
    let file = load_file_config(args.config.as_ref())?;
    let base = resolve_pipeline_config(
        &file,
        None,
        None,
        args.inner_iters,
        args.lambda,
        args.similarity.as_deref(),
        args.window,
        args.lr,
        None,
    )?;
    let pairs = load_dataset(&args.data)?;

    struct Cell {
        pair: usize,
        mode: Mode,
        stages: usize,
    }
    let mut cells = Vec::new();
    for (pi, _) in pairs.iter().enumerate() {
        for &mode in &modes {
            for stages in 1..=args.max_stages {
                cells.push(Cell {
                    pair: pi,
                    mode,
                    stages,
                });
            }
        }
    }

    let eval_cell = |cell: &Cell| -> Result<String> {
        let start = Instant::now();
        let pair = &pairs[cell.pair];
        let mut cfg = base.clone();
        cfg.mode = cell.mode;
        cfg.stages = cell.stages;
        let result = run_pipeline(&pair.source, &pair.target, &cfg)?;
        let warped_labels = match &pair.labels {
            Some((ls, _)) => Some(warp_labels(ls, &result.final_field)?),
            None => None,
        };
        let labels_pair = match (&warped_labels, &pair.labels) {
            (Some(w), Some((_, lt))) => Some((w, lt)),
            _ => None,
        };
        let report = metrics::report(&result.final_warped, &pair.target, labels_pair, 2)?;
        let final_loss =
            crate::pipeline::result_total_loss(&result, &pair.target, &cfg.loss)?.total;
        let seconds = if args.omit_seconds {
            None
        } else {
            Some(start.elapsed().as_secs_f64())
        };
        Ok(format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            pair.id,
            cell.mode,
            cell.stages,
            format_cell(report.ssim),
            format_cell(report.cc),
            format_cell(report.dice),
            format_cell(report.jaccard),
            format_cell(report.smd),
            format_cell(report.tenengrad),
            format_args!("{:.6e}", final_loss),
            format_cell(seconds),
        ))
    };

    let rows: Vec<Result<String>> = if args.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot build thread pool: {}", e)))?;
        pool.install(|| cells.par_iter().map(eval_cell).collect())
    } else {
        cells.iter().map(eval_cell).collect()
    };

    let mut csv =
        String::from("pair_id,mode,stages,ssim,cc,dice,jaccard,smd,tenengrad,final_loss,seconds\n");
    for row in rows {
        csv.push_str(&row?);
    }
    // atomic replace so partial sweeps never surface
    let tmp = args.out.with_extension("csv.tmp");
    std::fs::write(&tmp, &csv)?;
    std::fs::rename(&tmp, &args.out)?;
    Ok(())
}
