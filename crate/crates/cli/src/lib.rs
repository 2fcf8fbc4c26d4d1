//! `autoseg` command surface.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use autoseg::annotate::{
    run_pipeline, Adapter, AdapterEndpoint, AdapterRequest, Adapters, FileAdapter, PipelineConfig, TimingRecord,
    TimingSource,
};
use autoseg::formats::{
    read_label_dir, read_predictions, write_pr_curves, write_report, DatasetManifest, LabelFile, PredictionSet,
    ReportFormat,
};
use autoseg::geometry::ImageSize;
use autoseg::metrics::{
    aggregate, dataset_summary, evaluate_detections, evaluate_records, Averages, ClassCurve, DatasetReport,
    EvalImage, EvalInstance, MatchKind,
};
use autoseg::synth::{write_dataset, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "autoseg", version, about = "Auto-annotation and instance-segmentation evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn adapter detections and masks into polygon label files.
    Annotate(AnnotateArgs),
    /// Compare two label directories (e.g. automatic vs manual).
    EvalLabels(EvalLabelsArgs),
    /// Score a prediction document against ground-truth labels.
    EvalPreds(EvalPredsArgs),
    /// Generate synthetic scenes, ground truth and noisy predictions.
    Synth(SynthArgs),
    /// Serve a prediction document over the adapter line protocol on stdio.
    #[command(hide = true)]
    ServePredictions {
        #[arg(long)]
        predictions: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    #[default]
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Confidence threshold; 0.3 unless set here or in the config.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Detector (and, by default, segmenter) command line.
    #[arg(long, conflicts_with = "adapter_file")]
    pub adapter_cmd: Option<String>,
    /// Prediction document answering detect and segment requests.
    #[arg(long)]
    pub adapter_file: Option<PathBuf>,
    #[arg(long, conflicts_with = "segment_file")]
    pub segment_cmd: Option<String>,
    #[arg(long)]
    pub segment_file: Option<PathBuf>,
    /// Per-request adapter timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Accepted for interface symmetry; the pipeline draws no random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest giving ground-truth labels, class names and frame sizes.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou_thr: f64,
    /// Report printed to stdout; both formats are always written.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Accepted for interface symmetry; evaluation is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalLabelsArgs {
    #[command(flatten)]
    pub common: EvalArgs,
    /// Label directory to score against the manifest's labels.
    #[arg(long)]
    pub pred_labels: PathBuf,
    /// Reference labels; defaults to the manifest's labels directory.
    #[arg(long)]
    pub gt_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPredsArgs {
    #[command(flatten)]
    pub common: EvalArgs,
    /// Prediction document; defaults to the manifest's `predictions`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synth config (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides both the scene and the noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scenes: Option<usize>,
}

/// Run a parsed command and map the outcome to an exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Annotate(a) => cmd_annotate(&a),
        Command::EvalLabels(a) => cmd_eval_labels(&a).map(|_| EXIT_OK),
        Command::EvalPreds(a) => cmd_eval_preds(&a).map(|_| EXIT_OK),
        Command::Synth(a) => cmd_synth(&a).map(|_| EXIT_OK),
        Command::ServePredictions { predictions } => serve_predictions(&predictions).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        bail!("manifest not found: {}", path.display());
    }
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn pipeline_config(a: &AnnotateArgs, manifest: &DatasetManifest) -> Result<PipelineConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let base = p.parent().unwrap_or(Path::new("."));
            PipelineConfig::from_toml(&text, base).with_context(|| format!("in {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(t) = a.threshold {
        c.confidence_threshold = t;
    }
    if let Some(j) = a.jobs {
        c.jobs = j;
    }
    if let Some(t) = a.timeout {
        if !(t.is_finite() && t > 0.0) {
            bail!("--timeout must be a positive number of seconds");
        }
        c.timeout = Duration::from_secs_f64(t);
    }
    let endpoint = |cmd: &Option<String>, file: &Option<PathBuf>| match (cmd, file) {
        (Some(c), _) => Some(AdapterEndpoint::Command(c.clone())),
        (_, Some(f)) => Some(AdapterEndpoint::File(f.clone())),
        _ => None,
    };
    if let Some(e) = endpoint(&a.adapter_cmd, &a.adapter_file) {
        c.adapter_detect = Some(e);
    }
    if let Some(e) = endpoint(&a.segment_cmd, &a.segment_file) {
        c.adapter_segment = Some(e);
    }
    if c.adapter_detect.is_none() {
        c.adapter_detect = manifest.predictions_path.clone().map(AdapterEndpoint::File);
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_annotate(a: &AnnotateArgs) -> Result<i32> {
    let manifest = load_manifest(&a.manifest)?;
    let config = pipeline_config(a, &manifest)?;
    let Some(detect) = &config.adapter_detect else {
        bail!("no adapter given: use --adapter-cmd or --adapter-file");
    };
    let adapters = Adapters {
        detect: detect.open(config.timeout)?,
        segment: config.adapter_segment.as_ref().map(|e| e.open(config.timeout)).transpose()?,
    };
    create_out(&a.out)?;
    let run = run_pipeline(&manifest, &config, adapters, &a.out)?;
    let s = &run.summary;
    info!(
        "annotated {}/{} images, {} instances, n_d {:.3}",
        s.succeeded, s.n_images, s.n_annotations, s.n_d
    );
    for f in &s.failures {
        eprintln!("failed: {}: {}", f.image_id, f.error);
    }
    Ok(if s.failed == 0 {
        EXIT_OK
    } else if s.succeeded > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_FAILURE
    })
}

fn frame(manifest: &DatasetManifest, image_id: &str) -> Result<ImageSize> {
    manifest
        .size_of(image_id)
        .with_context(|| format!("no image size for `{image_id}` in manifest"))
}

fn check_classes(manifest: &DatasetManifest, lf: &LabelFile) -> Result<()> {
    for a in &lf.annotations {
        manifest
            .check_class(a.class_id)
            .with_context(|| format!("label file for `{}`", lf.image_id))?;
    }
    Ok(())
}

fn instances(lf: Option<&LabelFile>, size: ImageSize) -> Vec<EvalInstance> {
    lf.map(|lf| lf.annotations.iter().map(|a| EvalInstance::from_annotation(a, size)).collect())
        .unwrap_or_default()
}

/// Stems on both sides, plus the one-sided stems of each.
fn split_stems<'a>(
    gt: impl IntoIterator<Item = &'a String>,
    pred: impl IntoIterator<Item = &'a String>,
) -> (BTreeSet<String>, Vec<String>, Vec<String>) {
    let gt: BTreeSet<String> = gt.into_iter().cloned().collect();
    let pred: BTreeSet<String> = pred.into_iter().cloned().collect();
    let only_gt = gt.difference(&pred).cloned().collect();
    let only_pred = pred.difference(&gt).cloned().collect();
    (gt.union(&pred).cloned().collect(), only_gt, only_pred)
}

fn averages_or_empty(records: &[autoseg::metrics::ImageEvalRecord]) -> Averages {
    aggregate(records).unwrap_or_default()
}

/// Score `pred_dir` against `gt_dir` with per-image macro averages.
pub fn eval_label_dirs(
    manifest: &DatasetManifest,
    gt_dir: &Path,
    pred_dir: &Path,
    iou_thr: f64,
) -> Result<DatasetReport> {
    let gt = read_label_dir(gt_dir)?;
    let pred = read_label_dir(pred_dir)?;
    for lf in gt.values().chain(pred.values()) {
        check_classes(manifest, lf)?;
    }
    let (stems, only_gt, only_pred) = split_stems(gt.keys(), pred.keys());
    let mut images = Vec::with_capacity(stems.len());
    for id in &stems {
        let size = frame(manifest, id)?;
        images.push(EvalImage {
            image_id: id.clone(),
            size,
            gts: instances(gt.get(id), size),
            preds: instances(pred.get(id), size),
        });
    }
    let records = evaluate_records(&images, iou_thr)?;
    let counts: Vec<Vec<f64>> = stems
        .iter()
        .map(|id| {
            pred.get(id)
                .map(|lf| lf.annotations.iter().map(|a| a.score.unwrap_or(1.0)).collect())
                .unwrap_or_default()
        })
        .collect();
    let mut summary = dataset_summary(&counts);
    if pred.values().flat_map(|lf| &lf.annotations).all(|a| a.score.is_none()) {
        summary.c_avg = None;
    }
    let mut report = DatasetReport::new(iou_thr, records.clone(), averages_or_empty(&records), summary);
    report.only_ground_truth = only_gt;
    report.only_predicted = only_pred;
    Ok(report)
}

/// Write `report.csv` and `report.json` under `out`, print one to stdout.
fn emit_report(report: &DatasetReport, out: &Path, format: FormatArg) -> Result<()> {
    create_out(out)?;
    let csv = write_report(report, ReportFormat::Csv);
    let json = write_report(report, ReportFormat::Json);
    write_file(&out.join("report.csv"), &csv)?;
    write_file(&out.join("report.json"), &json)?;
    let shown = match format {
        FormatArg::Csv => csv,
        FormatArg::Json => json,
    };
    io::stdout().write_all(shown.as_bytes())?;
    Ok(())
}

pub fn cmd_eval_labels(a: &EvalLabelsArgs) -> Result<DatasetReport> {
    let manifest = load_manifest(&a.common.manifest)?;
    let gt_dir = a.gt_labels.clone().unwrap_or_else(|| manifest.labels_dir.clone());
    if !a.pred_labels.is_dir() {
        bail!("label directory not found: {}", a.pred_labels.display());
    }
    let report = eval_label_dirs(&manifest, &gt_dir, &a.pred_labels, a.common.iou_thr)?;
    emit_report(&report, &a.common.out, a.common.format)?;
    Ok(report)
}

/// Box and mask metrics of `preds` against the manifest's labels.
pub fn eval_prediction_sets(
    manifest: &DatasetManifest,
    preds: &[PredictionSet],
    iou_thr: f64,
) -> Result<(DatasetReport, Vec<ClassCurve>)> {
    let gt = read_label_dir(&manifest.labels_dir)?;
    for lf in gt.values() {
        check_classes(manifest, lf)?;
    }
    let mut by_id: BTreeMap<&str, &PredictionSet> = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.image_id.as_str(), p).is_some() {
            bail!("image `{}` appears twice in the prediction document", p.image_id);
        }
        for d in &p.detections {
            manifest
                .check_class(d.class_id)
                .with_context(|| format!("predictions for `{}`", p.image_id))?;
        }
    }
    let pred_ids: Vec<String> = by_id.keys().map(|s| s.to_string()).collect();
    let (stems, only_gt, only_pred) = split_stems(gt.keys(), &pred_ids);
    let with_masks = preds.iter().all(|p| p.masks.is_some());

    let mut images = Vec::with_capacity(stems.len());
    for id in &stems {
        let p = by_id.get(id.as_str());
        let size = match (manifest.size_of(id), p) {
            (Some(m), Some(p)) if m != p.image_size => {
                bail!("`{id}`: prediction frame {} differs from manifest frame {m}", p.image_size)
            }
            (Some(s), _) => s,
            (None, Some(p)) => p.image_size,
            (None, None) => unreachable!("stem comes from one side"),
        };
        let preds = match p {
            None => Vec::new(),
            Some(p) => {
                let masks = if with_masks { p.bitmasks().transpose()? } else { None };
                p.pixel_detections()
                    .into_iter()
                    .enumerate()
                    .map(|(i, d)| EvalInstance {
                        class_id: d.class_id,
                        score: Some(d.score),
                        bbox: d.bbox,
                        mask: masks.as_ref().map(|m| m[i].clone()),
                    })
                    .collect()
            }
        };
        images.push(EvalImage {
            image_id: id.clone(),
            size,
            gts: instances(gt.get(id), size),
            preds,
        });
    }

    let (box_metrics, mut curves) = evaluate_detections(&images, MatchKind::Box, iou_thr)?;
    let (records, mask_metrics) = if with_masks {
        let (m, c) = evaluate_detections(&images, MatchKind::Mask, iou_thr)?;
        curves.extend(c);
        (evaluate_records(&images, iou_thr)?, Some(m))
    } else {
        (Vec::new(), None)
    };
    let scores: Vec<Vec<f64>> = stems
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|p| p.detections.iter().map(|d| d.score).collect())
                .unwrap_or_default()
        })
        .collect();
    let mut report = DatasetReport::new(iou_thr, records.clone(), averages_or_empty(&records), dataset_summary(&scores));
    report.n_images = stems.len();
    report.box_metrics = Some(box_metrics);
    report.mask_metrics = mask_metrics;
    let timed: Vec<&TimingRecord> = preds.iter().filter_map(|p| p.timings.as_ref()).collect();
    report.timings = TimingRecord::mean(timed.iter().copied());
    report.timing_source = (!timed.is_empty()).then_some(TimingSource::Adapter);
    report.only_ground_truth = only_gt;
    report.only_predicted = only_pred;
    Ok((report, curves))
}

pub fn cmd_eval_preds(a: &EvalPredsArgs) -> Result<DatasetReport> {
    let manifest = load_manifest(&a.common.manifest)?;
    let path = a
        .predictions
        .clone()
        .or_else(|| manifest.predictions_path.clone())
        .context("no prediction document: pass --predictions or set `predictions` in the manifest")?;
    let preds = read_predictions(&path)?;
    let (report, curves) = eval_prediction_sets(&manifest, &preds, a.common.iou_thr)?;
    emit_report(&report, &a.common.out, a.common.format)?;
    write_file(&a.common.out.join("pr_curve.csv"), &write_pr_curves(&curves))?;
    Ok(report)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            SynthConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        config.scene.seed = s;
        config.noise.seed = s;
    }
    if let Some(n) = a.scenes {
        config.scenes = n;
    }
    let ds = write_dataset(&config, &a.out)?;
    info!("wrote {} scenes to {}", ds.scenes.len(), a.out.display());
    Ok(())
}

/// Answer line-protocol requests on stdin from a prediction document.
pub fn serve_predictions(path: &Path) -> Result<()> {
    let mut adapter = FileAdapter::open(path)?;
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: AdapterRequest = serde_json::from_str(&line).context("malformed request")?;
        let response = adapter.call(&request)?;
        serde_json::to_writer(&mut stdout, &response)?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
    }
    Ok(())
}
