use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::{
    clip_to_box, filter_detections, mask_to_annotation, Adapter, AdapterError, AdapterOp, AdapterRequest,
    AdapterResponse, AnnotateError, ImageTiming, PipelineConfig, TimingRecord, TimingSource, PROMPT_MARGIN_PX,
};
use crate::formats::{
    detections_from_records, masks_from_records, save_label_file, write_timings, BoxRecord, DatasetManifest,
    FormatError, LabelFile,
};
use crate::geometry::ImageSize;
use crate::metrics::{dataset_summary, Detection};

/// Detector plus an optional separate segmenter; without one, the detector
/// endpoint also answers `segment` requests.
pub struct Adapters {
    pub detect: Box<dyn Adapter>,
    pub segment: Option<Box<dyn Adapter>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_images: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub confidence_threshold: f64,
    /// Mean surviving detections per successful image.
    pub n_d: f64,
    /// Mean confidence of surviving detections; images with none are skipped.
    pub c_avg: Option<f64>,
    pub n_annotations: usize,
    pub skipped_instances: usize,
    pub clipped_masks: usize,
    pub timings: Option<TimingRecord>,
    pub timing_source: Option<TimingSource>,
    pub failures: Vec<ImageFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub timings: Vec<ImageTiming>,
    pub labels_dir: PathBuf,
}

struct ImageDone {
    scores: Vec<f64>,
    n_annotations: usize,
    skipped: usize,
    clipped: usize,
    timing: ImageTiming,
}

struct Endpoints {
    detect: Mutex<Box<dyn Adapter>>,
    segment: Option<Mutex<Box<dyn Adapter>>>,
}

impl Endpoints {
    fn call(&self, request: &AdapterRequest) -> Result<(AdapterResponse, f64), AdapterError> {
        let lock = match (request.op, &self.segment) {
            (AdapterOp::Segment, Some(s)) => s,
            _ => &self.detect,
        };
        let mut adapter = lock.lock().unwrap_or_else(|p| p.into_inner());
        let t = Instant::now();
        let response = adapter.call(request)?;
        Ok((response, ms(t)))
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn frame_size(manifest_size: Option<ImageSize>, r: &AdapterResponse) -> Result<ImageSize, AnnotateError> {
    let protocol = |message: String| AdapterError::Protocol {
        image_id: r.image_id.clone(),
        message,
    };
    let reported = match (r.width, r.height) {
        (Some(w), Some(h)) => Some(ImageSize::new(w, h).map_err(|e| protocol(e.to_string()))?),
        (None, None) => None,
        _ => return Err(protocol("width and height must be given together".into()).into()),
    };
    match (manifest_size, reported) {
        (Some(m), Some(r)) if m != r => Err(protocol(format!("reports a {r} frame, manifest says {m}")).into()),
        (Some(s), _) | (None, Some(s)) => Ok(s),
        (None, None) => Err(protocol("frame size unknown: not in manifest or response".into()).into()),
    }
}

fn process_image(
    image_id: &str,
    image_path: &Path,
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    endpoints: &Endpoints,
    labels_dir: &Path,
) -> Result<ImageDone, AnnotateError> {
    let t_pre = Instant::now();
    let mut request = AdapterRequest {
        op: AdapterOp::Detect,
        image_id: image_id.to_string(),
        image_path: image_path.display().to_string(),
        boxes: None,
    };
    let mut wall = TimingRecord {
        preprocess_ms: ms(t_pre),
        ..Default::default()
    };

    let (response, dt) = endpoints.call(&request)?;
    wall.inference_ms += dt;
    let mut reported = vec![response.timings];
    let size = frame_size(manifest.size_of(image_id), &response)?;
    let raw = response.detections.as_deref().ok_or_else(|| AdapterError::Protocol {
        image_id: image_id.to_string(),
        message: "detect response has no `detections`".into(),
    })?;
    let dets: Vec<Detection> = filter_detections(&detections_from_records(image_id, raw)?, config.confidence_threshold)
        .into_iter()
        .filter_map(|d| config.map_class(d.class_id).map(|class_id| Detection { class_id, ..d }))
        .collect();

    let mut masks = Vec::new();
    if !dets.is_empty() {
        request.op = AdapterOp::Segment;
        request.boxes = Some(dets.iter().map(|d| BoxRecord::from(&d.bbox)).collect());
        let (response, dt) = endpoints.call(&request)?;
        wall.inference_ms += dt;
        reported.push(response.timings);
        let records = response.masks.as_deref().unwrap_or_default();
        if records.len() != dets.len() {
            return Err(AdapterError::Protocol {
                image_id: image_id.to_string(),
                message: format!("{} masks for {} prompt boxes", records.len(), dets.len()),
            }
            .into());
        }
        masks = masks_from_records(image_id, size, records)?;
    }

    let t_post = Instant::now();
    let mut label = LabelFile {
        image_id: image_id.to_string(),
        annotations: Vec::with_capacity(dets.len()),
    };
    let (mut skipped, mut clipped) = (0, 0);
    for (i, (d, m)) in dets.iter().zip(&masks).enumerate() {
        let (mask, was_clipped) = clip_to_box(&m.to_bitmask(size)?, &d.bbox.to_pixels(size), PROMPT_MARGIN_PX);
        if was_clipped {
            clipped += 1;
            info!("{image_id}: mask {i} extends past its prompt box; clipped");
        }
        match mask_to_annotation(&mask, d.class_id, size, config.simplify_epsilon) {
            Ok(a) => label.annotations.push(a),
            Err(AnnotateError::NoForeground) => {
                skipped += 1;
                warn!("{image_id}: mask {i} is empty; instance skipped");
            }
            Err(e) => return Err(e),
        }
    }
    save_label_file(labels_dir, &label)?;
    wall.postprocess_ms = ms(t_post);

    let timing = if reported.iter().all(Option::is_some) {
        let sum = reported.iter().flatten().fold(TimingRecord::default(), |s, t| s.add(t));
        ImageTiming {
            image_id: image_id.to_string(),
            timings: sum,
            source: TimingSource::Adapter,
        }
    } else {
        ImageTiming {
            image_id: image_id.to_string(),
            timings: wall,
            source: TimingSource::WallClock,
        }
    };
    Ok(ImageDone {
        scores: dets.iter().map(|d| d.score).collect(),
        n_annotations: label.annotations.len(),
        skipped,
        clipped,
        timing,
    })
}

/// Annotate every image of `manifest`, writing
/// `out/labels/<stem>.txt`, `out/run_summary.json` and `out/timings.csv`.
///
/// Per-image failures are recorded in the summary and never abort the run.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    adapters: Adapters,
    out: &Path,
) -> Result<RunOutput, AnnotateError> {
    config.validate()?;
    let images = manifest.images()?;
    if images.is_empty() {
        return Err(AnnotateError::NoImages(manifest.images_dir.clone()));
    }
    let labels_dir = out.join("labels");
    fs::create_dir_all(&labels_dir).map_err(|e| FormatError::io(&labels_dir, e))?;

    let endpoints = Endpoints {
        detect: Mutex::new(adapters.detect),
        segment: adapters.segment.map(Mutex::new),
    };
    let next = AtomicUsize::new(0);
    let jobs = config.jobs.min(images.len()).max(1);
    let mut results: Vec<(usize, Result<ImageDone, AnnotateError>)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((id, path)) = images.get(i) else { break };
                        debug!("{id}: start");
                        done.push((i, process_image(id, path, manifest, config, &endpoints, &labels_dir)));
                    }
                    done
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("worker panicked")).collect()
    });
    results.sort_by_key(|(i, _)| *i);

    let mut failures = Vec::new();
    let mut scores = Vec::new();
    let mut timings = Vec::new();
    let (mut n_annotations, mut skipped_instances, mut clipped_masks) = (0, 0, 0);
    for (i, r) in results {
        let image_id = &images[i].0;
        match r {
            Ok(done) => {
                scores.push(done.scores);
                n_annotations += done.n_annotations;
                skipped_instances += done.skipped;
                clipped_masks += done.clipped;
                timings.push(done.timing);
            }
            Err(e) => {
                warn!("{image_id}: {e}");
                failures.push(ImageFailure {
                    image_id: image_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let det = dataset_summary(&scores);
    let summary = RunSummary {
        n_images: images.len(),
        succeeded: timings.len(),
        failed: failures.len(),
        confidence_threshold: config.confidence_threshold,
        n_d: det.n_d,
        c_avg: det.c_avg,
        n_annotations,
        skipped_instances,
        clipped_masks,
        timings: TimingRecord::mean(timings.iter().map(|t| &t.timings)),
        timing_source: TimingSource::combine(timings.iter().map(|t| t.source)),
        failures,
    };

    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| FormatError::io(&path, e))
    };
    write("run_summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    write("timings.csv", write_timings(&timings))?;
    Ok(RunOutput {
        summary,
        timings,
        labels_dir,
    })
}
