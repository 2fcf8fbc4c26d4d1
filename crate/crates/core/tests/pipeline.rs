use std::fs;
use std::path::Path;
use std::time::Duration;

use autoseg::annotate::{
    run_pipeline, Adapter, AdapterError, AdapterOp, AdapterRequest, AdapterResponse, AnnotateError, Adapters,
    FileAdapter, PipelineConfig, ProcessAdapter, TimingRecord, TimingSource, PROMPT_MARGIN_PX,
};
use autoseg::formats::{
    masks_from_records, read_label_dir, DatasetManifest, LabelFile, MaskRecord,
};
use autoseg::geometry::{morph, BitMask, MorphOp};
use autoseg::metrics::{aggregate, evaluate_records, EvalImage, EvalInstance};
use autoseg::synth::{scene_to_adapter, write_dataset, NoiseSpec, SceneSpec, SynthConfig, SynthDataset};
use tempfile::TempDir;

fn dataset(scenes: usize, noise: NoiseSpec) -> (TempDir, DatasetManifest, SynthDataset) {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        scenes,
        scene: SceneSpec {
            width: 128,
            height: 128,
            n_instances: [3, 8],
            radius: [5.0, 14.0],
            max_overlap: 0.05,
            n_classes: 2,
            seed: 11,
        },
        noise,
        render_images: false,
    };
    let ds = write_dataset(&config, &dir.path().join("data")).unwrap();
    let manifest = DatasetManifest::load(&dir.path().join("data/manifest.toml")).unwrap();
    (dir, manifest, ds)
}

fn config(threshold: f64, jobs: usize) -> PipelineConfig {
    PipelineConfig {
        confidence_threshold: threshold,
        jobs,
        ..Default::default()
    }
}

fn single(adapter: impl Adapter + 'static) -> Adapters {
    Adapters {
        detect: Box::new(adapter),
        segment: None,
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn eval_dirs(manifest: &DatasetManifest, pred_dir: &Path) -> autoseg::metrics::Averages {
    let gt = read_label_dir(&manifest.labels_dir).unwrap();
    let pred = read_label_dir(pred_dir).unwrap();
    let inst = |lf: Option<&LabelFile>, size| {
        lf.map(|lf| lf.annotations.iter().map(|a| EvalInstance::from_annotation(a, size)).collect())
            .unwrap_or_default()
    };
    let images: Vec<EvalImage> = gt
        .keys()
        .map(|id| {
            let size = manifest.size_of(id).unwrap();
            EvalImage {
                image_id: id.clone(),
                size,
                gts: inst(gt.get(id), size),
                preds: inst(pred.get(id), size),
            }
        })
        .collect();
    aggregate(&evaluate_records(&images, 0.5).unwrap()).unwrap()
}

#[test]
fn zero_noise_closure_over_ten_scenes() {
    let (dir, manifest, ds) = dataset(10, NoiseSpec::default());
    let out = dir.path().join("run");
    let run = run_pipeline(&manifest, &config(0.3, 3), single(scene_to_adapter(ds.predictions.clone())), &out).unwrap();
    assert_eq!((run.summary.succeeded, run.summary.failed), (10, 0));
    assert_eq!(tree(&run.labels_dir), tree(&manifest.labels_dir), "labels differ from ground truth");
    let parsed = read_label_dir(&run.labels_dir).unwrap();
    for s in &ds.scenes {
        assert_eq!(parsed[&s.image_id], read_label_dir(&manifest.labels_dir).unwrap()[&s.image_id]);
    }
    let total: usize = ds.scenes.iter().map(|s| s.instances.len()).sum();
    assert_eq!(run.summary.n_annotations, total);
    assert_eq!(run.summary.clipped_masks, 0);
    assert!((run.summary.n_d - total as f64 / 10.0).abs() < 1e-12);
    assert!((run.summary.c_avg.unwrap() - 0.9).abs() < 1e-12);
    assert!(out.join("run_summary.json").is_file());
    let timings = fs::read_to_string(out.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 11);
    assert_eq!(run.summary.timing_source, Some(TimingSource::WallClock));
}

#[test]
fn threshold_one_writes_empty_labels() {
    let (dir, manifest, ds) = dataset(4, NoiseSpec::default());
    let run = run_pipeline(&manifest, &config(1.0, 2), single(scene_to_adapter(ds.predictions)), &dir.path().join("r"))
        .unwrap();
    let labels = tree(&run.labels_dir);
    assert_eq!(labels.len(), 4);
    assert!(labels.iter().all(|(_, bytes)| bytes.is_empty()));
    assert_eq!(run.summary.n_d, 0.0);
    assert_eq!(run.summary.c_avg, None);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let noise = NoiseSpec {
        morph_radius: -1,
        box_jitter: 1.0,
        drop_rate: 0.2,
        spurious_rate: 0.4,
        score_sigma: 0.1,
        seed: 5,
        ..Default::default()
    };
    let (dir, manifest, ds) = dataset(12, noise);
    let mut outputs = Vec::new();
    for (i, jobs) in [1, 4, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let run = run_pipeline(&manifest, &config(0.3, jobs), single(scene_to_adapter(ds.predictions.clone())), &out)
            .unwrap();
        outputs.push((tree(&run.labels_dir), run.summary.n_d, run.summary.c_avg, run.summary.n_annotations));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn labels_parse_in_range_and_never_exceed_detections() {
    let noise = NoiseSpec {
        morph_radius: 1,
        box_jitter: 2.0,
        spurious_rate: 0.5,
        score_sigma: 0.2,
        ..Default::default()
    };
    let (dir, manifest, ds) = dataset(8, noise);
    let run = run_pipeline(&manifest, &config(0.3, 2), single(scene_to_adapter(ds.predictions.clone())), &dir.path().join("r"))
        .unwrap();
    let labels = read_label_dir(&run.labels_dir).unwrap();
    for p in &ds.predictions {
        let surviving = p.detections.iter().filter(|d| d.score >= 0.3).count();
        let lf = &labels[&p.image_id];
        assert!(lf.annotations.len() <= surviving);
        for a in &lf.annotations {
            assert!(a.polygon.vertices().iter().all(|v| (0.0..=1.0).contains(&v.x) && (0.0..=1.0).contains(&v.y)));
        }
    }
    // Jittered boxes cut into dilated masks; each cut is counted.
    assert!(run.summary.clipped_masks > 0);
}

/// Wraps a file adapter and breaks the protocol for chosen images.
struct Faulty {
    inner: FileAdapter,
    short_masks: &'static str,
    broken: &'static str,
}

impl Adapter for Faulty {
    fn call(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        let mut r = self.inner.call(request)?;
        if request.image_id == self.short_masks && request.op == AdapterOp::Segment {
            r.masks.as_mut().unwrap().pop();
        }
        if request.image_id == self.broken {
            return Err(AdapterError::Protocol {
                image_id: request.image_id.clone(),
                message: "response echoes the wrong image".into(),
            });
        }
        Ok(r)
    }
}

#[test]
fn per_image_failures_are_recorded_and_the_run_continues() {
    let (dir, manifest, ds) = dataset(6, NoiseSpec::default());
    let mut partial = ds.predictions.clone();
    partial.retain(|p| p.image_id != "scene_0005");
    let adapter = Faulty {
        inner: FileAdapter::new(partial),
        short_masks: "scene_0001",
        broken: "scene_0003",
    };
    let run = run_pipeline(&manifest, &config(0.3, 2), single(adapter), &dir.path().join("r")).unwrap();
    let s = &run.summary;
    assert_eq!((s.n_images, s.succeeded, s.failed), (6, 3, 3));
    let failed: Vec<&str> = s.failures.iter().map(|f| f.image_id.as_str()).collect();
    assert_eq!(failed, ["scene_0001", "scene_0003", "scene_0005"]);
    assert!(s.failures[0].error.contains("masks for"), "{}", s.failures[0].error);
    assert!(s.failures.iter().all(|f| f.error.contains(&f.image_id)));
    // Failed images get no label file.
    assert!(!run.labels_dir.join("scene_0001.txt").exists());
    assert_eq!(run.timings.len(), 3);
}

#[test]
fn empty_image_directory_is_an_error() {
    let (dir, mut manifest, _) = dataset(1, NoiseSpec::default());
    let empty = dir.path().join("no_images");
    fs::create_dir(&empty).unwrap();
    manifest.images_dir = empty;
    let err = run_pipeline(&manifest, &config(0.3, 1), single(FileAdapter::new(vec![])), &dir.path().join("r"))
        .unwrap_err();
    assert!(matches!(err, AnnotateError::NoImages(_)));
}

#[test]
fn stand_in_masks_stay_within_two_pixels_of_their_prompt() {
    let noise = NoiseSpec { spurious_rate: 0.5, ..Default::default() };
    let (_dir, _manifest, ds) = dataset(5, noise);
    let mut adapter = scene_to_adapter(ds.predictions.clone());
    for p in &ds.predictions {
        let request = AdapterRequest {
            op: AdapterOp::Segment,
            image_id: p.image_id.clone(),
            image_path: String::new(),
            boxes: Some(p.detections.iter().map(|d| (&d.bbox).into()).collect()),
        };
        let r = adapter.call(&request).unwrap();
        let records: Vec<MaskRecord> = r.masks.unwrap();
        assert_eq!(records.len(), p.detections.len(), "one mask per prompt box");
        let masks = masks_from_records(&p.image_id, p.image_size, &records).unwrap();
        for (d, m) in p.detections.iter().zip(&masks) {
            let b = d.bbox.to_pixels(p.image_size);
            let window = BitMask::from_rect(p.image_size, b.x0() as u32, b.y0() as u32, b.x1() as u32, b.y1() as u32);
            let grown = morph(&window, MorphOp::Dilate, PROMPT_MARGIN_PX as u32);
            assert!(m.to_bitmask(p.image_size).unwrap().is_subset_of(&grown).unwrap());
        }
    }
}

/// Always answers with full-frame masks and fixed stage timings.
struct Greedy {
    inner: FileAdapter,
}

impl Adapter for Greedy {
    fn call(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        let mut r = self.inner.call(request)?;
        if let Some(masks) = r.masks.as_mut() {
            let n = r.width.unwrap() * r.height.unwrap();
            for m in masks.iter_mut() {
                *m = MaskRecord::Rle(vec![0, n]);
            }
        }
        r.timings = Some(TimingRecord { preprocess_ms: 4.5, inference_ms: 1986.4, postprocess_ms: 1.1 });
        Ok(r)
    }
}

#[test]
fn escaping_masks_are_clipped_and_adapter_timings_preferred() {
    let (dir, manifest, ds) = dataset(3, NoiseSpec::default());
    let adapter = Greedy { inner: FileAdapter::new(ds.predictions.clone()) };
    let run = run_pipeline(&manifest, &config(0.3, 1), single(adapter), &dir.path().join("r")).unwrap();
    let total: usize = ds.scenes.iter().map(|s| s.instances.len()).sum();
    assert_eq!(run.summary.clipped_masks, total);
    assert_eq!(run.summary.timing_source, Some(TimingSource::Adapter));
    // detect + segment, each reporting the same three stages.
    let t = run.summary.timings.unwrap();
    assert!((t.preprocess_ms - 9.0).abs() < 1e-9);
    assert!((t.inference_ms - 3972.8).abs() < 1e-9);
    assert!((t.postprocess_ms - 2.2).abs() < 1e-9);
    // Clipped to box + margin, a full-frame mask still outlines the box region.
    let labels = read_label_dir(&run.labels_dir).unwrap();
    assert_eq!(labels.values().map(|l| l.annotations.len()).sum::<usize>(), total);
}

#[test]
fn filtering_at_default_threshold_raises_precision() {
    let noise = NoiseSpec {
        spurious_rate: 0.6,
        tp_mean: 0.85,
        fp_mean: 0.15,
        score_sigma: 0.05,
        seed: 9,
        ..Default::default()
    };
    let (dir, manifest, ds) = dataset(20, noise);
    let mut precision = Vec::new();
    for (i, t) in [0.0, 0.3].into_iter().enumerate() {
        let run = run_pipeline(&manifest, &config(t, 4), single(scene_to_adapter(ds.predictions.clone())), &dir.path().join(format!("r{i}")))
            .unwrap();
        precision.push(eval_dirs(&manifest, &run.labels_dir).avg_precision.unwrap());
    }
    assert!(precision[1] > precision[0], "{precision:?}");
    assert_eq!(precision[1], 1.0);
}

fn sh(script: &str, timeout: Duration) -> ProcessAdapter {
    ProcessAdapter::new(vec!["sh".into(), "-c".into(), script.into()], timeout)
}

fn request(id: &str) -> AdapterRequest {
    AdapterRequest {
        op: AdapterOp::Detect,
        image_id: id.into(),
        image_path: format!("/data/{id}.png"),
        boxes: None,
    }
}

#[test]
fn echo_stub_roundtrips_request_fields() {
    let mut a = sh("while IFS= read -r l; do printf '%s\\n' \"$l\"; done", Duration::from_secs(10));
    for id in ["a", "b", "c"] {
        let r = a.call(&request(id)).unwrap();
        assert_eq!(r.image_id, id);
        assert_eq!(r.detections, None);
    }
    // The request itself survives the wire unchanged.
    let mut req = request("d");
    req.op = AdapterOp::Segment;
    req.boxes = Some(vec![autoseg::formats::BoxRecord { cx: 0.25, cy: 0.5, w: 0.125, h: 0.1 }]);
    let line = serde_json::to_string(&req).unwrap();
    assert_eq!(serde_json::from_str::<AdapterRequest>(&line).unwrap(), req);
}

#[test]
fn process_adapter_errors_name_the_image() {
    let mut slow = sh("sleep 5", Duration::from_millis(200));
    match slow.call(&request("late")) {
        Err(AdapterError::Timeout { image_id, .. }) => assert_eq!(image_id, "late"),
        other => panic!("expected timeout, got {other:?}"),
    }
    let mut wrong = sh("while read -r l; do echo '{\"image_id\":\"zzz\"}'; done", Duration::from_secs(10));
    match wrong.call(&request("mine")) {
        Err(e @ AdapterError::Protocol { .. }) => assert!(e.to_string().contains("mine")),
        other => panic!("expected protocol error, got {other:?}"),
    }
    let mut garbage = sh("while read -r l; do echo 'not json'; done", Duration::from_secs(10));
    assert!(matches!(garbage.call(&request("x")), Err(AdapterError::Protocol { .. })));
    let mut dead = sh("exit 0", Duration::from_secs(10));
    assert!(dead.call(&request("gone")).is_err());
}
