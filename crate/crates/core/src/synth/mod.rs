//! Synthetic ellipse scenes with exact ground truth, and a noisy stand-in
//! predictor built from them.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{mask_to_annotation, FileAdapter};
use crate::formats::{
    rle_encode, save_label_file, write_predictions, DatasetManifest, FormatError, InstanceAnnotation, LabelFile,
    PredictedMask, PredictionSet,
};
use crate::geometry::{label_components, morph, rasterize, BBox, BitMask, ImageSize, MorphOp, Point, Polygon};
use crate::metrics::Detection;

const ELLIPSE_VERTICES: usize = 32;
const MAX_ATTEMPTS: usize = 1000;
/// Box jitter is clamped to this many standard deviations.
const JITTER_CLAMP: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn spec_err(msg: impl Into<String>) -> SynthError {
    SynthError::Spec(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Inclusive instance-count range.
    pub n_instances: [u32; 2],
    /// Semi-axis range in pixels.
    pub radius: [f64; 2],
    /// Cap on pairwise mask IoU.
    pub max_overlap: f64,
    #[serde(default = "one")]
    pub n_classes: u32,
    pub seed: u64,
}

fn one() -> u32 {
    1
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 256,
            height: 256,
            n_instances: [4, 10],
            radius: [6.0, 20.0],
            max_overlap: 0.05,
            n_classes: 1,
            seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height).expect("validated")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        ImageSize::new(self.width, self.height).map_err(|e| spec_err(e.to_string()))?;
        let [lo, hi] = self.n_instances;
        if lo > hi {
            return Err(spec_err(format!("n_instances [{lo}, {hi}] is decreasing")));
        }
        let [rlo, rhi] = self.radius;
        if !(rlo >= 2.0 && rhi >= rlo && rhi.is_finite()) {
            return Err(spec_err(format!("radius [{rlo}, {rhi}] must satisfy 2 <= min <= max")));
        }
        if !(0.0..1.0).contains(&self.max_overlap) {
            return Err(spec_err(format!("max_overlap {} outside [0, 1)", self.max_overlap)));
        }
        if self.n_classes == 0 {
            return Err(spec_err("n_classes must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation of the box-center shift, pixels.
    #[serde(default)]
    pub box_jitter: f64,
    /// Negative erodes, positive dilates.
    #[serde(default)]
    pub morph_radius: i32,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub spurious_rate: f64,
    #[serde(default = "tp_mean")]
    pub tp_mean: f64,
    #[serde(default = "fp_mean")]
    pub fp_mean: f64,
    #[serde(default)]
    pub score_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn tp_mean() -> f64 {
    0.9
}

fn fp_mean() -> f64 {
    0.2
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            box_jitter: 0.0,
            morph_radius: 0,
            drop_rate: 0.0,
            spurious_rate: 0.0,
            tp_mean: tp_mean(),
            fp_mean: fp_mean(),
            score_sigma: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("drop_rate", self.drop_rate),
            ("spurious_rate", self.spurious_rate),
            ("tp_mean", self.tp_mean),
            ("fp_mean", self.fp_mean),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(spec_err(format!("{name} {v} outside [0, 1]")));
            }
        }
        for (name, v) in [("box_jitter", self.box_jitter), ("score_sigma", self.score_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(spec_err(format!("{name} {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Config document for a synthetic dataset.
///
/// ```toml
/// scenes = 50
/// [scene]
/// width = 256
/// height = 256
/// n_instances = [4, 10]
/// radius = [6.0, 20.0]
/// max_overlap = 0.05
/// seed = 42
/// [noise]            # optional; omitted means identity noise
/// morph_radius = -1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_true")]
    pub render_images: bool,
}

fn default_scenes() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: default_scenes(),
            scene: SceneSpec::default(),
            noise: NoiseSpec::default(),
            render_images: true,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let c: SynthConfig = toml::from_str(text).map_err(|e| spec_err(e.to_string()))?;
        c.scene.validate()?;
        c.noise.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub annotation: InstanceAnnotation,
    pub mask: BitMask,
    /// Tight pixel bounds of the mask.
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub size: ImageSize,
    pub instances: Vec<GtInstance>,
}

impl Scene {
    pub fn label_file(&self) -> LabelFile {
        LabelFile {
            image_id: self.image_id.clone(),
            annotations: self.instances.iter().map(|i| i.annotation.clone()).collect(),
        }
    }

    /// Ground truth as a prediction document entry, every score 1.0.
    pub fn as_predictions(&self) -> PredictionSet {
        PredictionSet {
            image_id: self.image_id.clone(),
            image_size: self.size,
            detections: self
                .instances
                .iter()
                .map(|i| Detection {
                    class_id: i.annotation.class_id,
                    score: 1.0,
                    bbox: i.bbox.to_unit(self.size),
                })
                .collect(),
            masks: Some(self.instances.iter().map(|i| PredictedMask::Rle(rle_encode(&i.mask))).collect()),
            timings: None,
        }
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

fn tight_box(m: &BitMask) -> Option<BBox> {
    m.bounds()
        .map(|(x0, y0, x1, y1)| BBox::from_corners(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
}

fn largest_component(m: &BitMask) -> BitMask {
    let (labels, n) = label_components(m);
    if n <= 1 {
        return m.clone();
    }
    let mut counts = vec![0usize; n as usize + 1];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    let best = (1..=n as usize).fold(1, |b, l| if counts[l] > counts[b] { l } else { b }) as u32;
    let mut it = labels.iter();
    BitMask::from_fn(m.size(), |_, _| *it.next().expect("one label per pixel") == best)
}

/// Rasterized 32-gon ellipse with random axes, orientation and center.
fn random_ellipse(rng: &mut ChaCha8Rng, size: ImageSize, radius: [f64; 2]) -> BitMask {
    let r = |rng: &mut ChaCha8Rng| {
        if radius[1] > radius[0] {
            rng.random_range(radius[0]..=radius[1])
        } else {
            radius[0]
        }
    };
    let (rx, ry) = (r(rng), r(rng));
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let hx = (rx * rx * c * c + ry * ry * s * s).sqrt();
    let hy = (rx * rx * s * s + ry * ry * c * c).sqrt();
    let center = |rng: &mut ChaCha8Rng, half: f64, extent: u32| {
        let extent = extent as f64;
        if 2.0 * half < extent {
            rng.random_range(half..=extent - half)
        } else {
            extent / 2.0
        }
    };
    let cx = center(rng, hx, size.width);
    let cy = center(rng, hy, size.height);
    let vertices = (0..ELLIPSE_VERTICES)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / ELLIPSE_VERTICES as f64;
            let (sp, cp) = phi.sin_cos();
            Point::new(cx + rx * cp * c - ry * sp * s, cy + rx * cp * s + ry * sp * c)
        })
        .collect();
    let poly = Polygon::new(vertices).expect("32 finite vertices");
    largest_component(&rasterize(&poly, size))
}

fn overlap_ok(m: &BitMask, accepted: &[GtInstance], cap: f64) -> bool {
    let (ax0, ay0, ax1, ay1) = m.bounds().expect("non-empty");
    accepted.iter().all(|g| {
        let (bx0, by0, bx1, by1) = g.mask.bounds().expect("non-empty");
        if ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0 {
            return true;
        }
        let inter = m.intersection_count(&g.mask).expect("same frame");
        let union = m.count() + g.mask.count() - inter;
        inter as f64 / union as f64 <= cap
    })
}

/// Scene `index` of the stream defined by `spec`. The generator is seeded
/// with `spec.seed + index`, so scenes can be built in any order.
pub fn generate_scene(spec: &SceneSpec, index: usize) -> Scene {
    let size = spec.size();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index as u64));
    let [lo, hi] = spec.n_instances;
    let n = rng.random_range(lo..=hi);
    let mut instances: Vec<GtInstance> = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let class_id = rng.random_range(0..spec.n_classes);
        for _ in 0..MAX_ATTEMPTS {
            let mask = random_ellipse(&mut rng, size, spec.radius);
            if mask.is_empty() || !overlap_ok(&mask, &instances, spec.max_overlap) {
                continue;
            }
            let annotation = mask_to_annotation(&mask, class_id, size, 0.0).expect("non-empty mask");
            let bbox = tight_box(&mask).expect("non-empty mask");
            instances.push(GtInstance { annotation, mask, bbox });
            break;
        }
    }
    Scene {
        image_id: scene_id(index),
        size,
        instances,
    }
}

fn clamped_normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma == 0.0 {
        return mean.clamp(lo, hi);
    }
    Normal::new(mean, sigma).expect("sigma validated").sample(rng).clamp(lo, hi)
}

/// Noisy predictions for `scene`. Uses its own random stream (seeded with
/// `noise.seed + index`), independent of the scene stream.
pub fn corrupt(scene: &Scene, noise: &NoiseSpec, spec: &SceneSpec, index: usize) -> PredictionSet {
    let size = scene.size;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed.wrapping_add(index as u64));
    rng.set_stream(1);
    let mut dets = Vec::new();
    let mut masks = Vec::new();
    let op = if noise.morph_radius < 0 { MorphOp::Erode } else { MorphOp::Dilate };
    for gt in &scene.instances {
        if rng.random::<f64>() < noise.drop_rate {
            continue;
        }
        let mask = morph(&gt.mask, op, noise.morph_radius.unsigned_abs());
        let b = tight_box(&mask).unwrap_or(gt.bbox);
        let lim = JITTER_CLAMP * noise.box_jitter;
        let dx = clamped_normal(&mut rng, 0.0, noise.box_jitter, -lim, lim);
        let dy = clamped_normal(&mut rng, 0.0, noise.box_jitter, -lim, lim);
        let b = shift_in_frame(b, dx, dy, size);
        let score = clamped_normal(&mut rng, noise.tp_mean, noise.score_sigma, 0.0, 1.0);
        dets.push(Detection {
            class_id: gt.annotation.class_id,
            score,
            bbox: b.to_unit(size),
        });
        masks.push(PredictedMask::Rle(rle_encode(&mask)));
    }
    let n_spurious = if noise.spurious_rate > 0.0 && !scene.instances.is_empty() {
        Binomial::new(scene.instances.len() as u64, noise.spurious_rate)
            .expect("rate validated")
            .sample(&mut rng)
    } else {
        0
    };
    for _ in 0..n_spurious {
        let class_id = rng.random_range(0..spec.n_classes);
        let mask = random_ellipse(&mut rng, size, spec.radius);
        let Some(b) = tight_box(&mask) else { continue };
        let score = clamped_normal(&mut rng, noise.fp_mean, noise.score_sigma, 0.0, 1.0);
        dets.push(Detection {
            class_id,
            score,
            bbox: b.to_unit(size),
        });
        masks.push(PredictedMask::Rle(rle_encode(&mask)));
    }
    PredictionSet {
        image_id: scene.image_id.clone(),
        image_size: size,
        detections: dets,
        masks: Some(masks),
        timings: None,
    }
}

/// Translate a pixel box, keeping it inside the frame.
fn shift_in_frame(b: BBox, dx: f64, dy: f64, size: ImageSize) -> BBox {
    let (w, h) = (size.width as f64, size.height as f64);
    let cx = (b.cx + dx).clamp(b.w / 2.0, w - b.w / 2.0);
    let cy = (b.cy + dy).clamp(b.h / 2.0, h - b.h / 2.0);
    BBox { cx, cy, ..b }
}

/// File-mode adapter serving the given prediction sets.
pub fn scene_to_adapter(sets: Vec<PredictionSet>) -> FileAdapter {
    FileAdapter::new(sets)
}

/// Binary PPM with a flat color per instance.
pub fn render_ppm(scene: &Scene) -> Vec<u8> {
    const BACKGROUND: [u8; 3] = [34, 85, 34];
    const PALETTE: [[u8; 3]; 6] = [
        [200, 30, 30],
        [220, 60, 40],
        [180, 20, 50],
        [230, 90, 30],
        [160, 40, 40],
        [210, 50, 70],
    ];
    let (w, h) = (scene.size.width, scene.size.height);
    let mut px = vec![BACKGROUND; scene.size.pixel_count()];
    for (k, inst) in scene.instances.iter().enumerate() {
        for (x, y) in inst.mask.ones() {
            px[(y * w + x) as usize] = PALETTE[k % PALETTE.len()];
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(px.into_iter().flatten());
    out
}

/// Everything written by [`write_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub scenes: Vec<Scene>,
    pub ground_truth: Vec<PredictionSet>,
    pub predictions: Vec<PredictionSet>,
}

/// Generate `config.scenes` scenes into `out`:
///
/// ```text
/// out/manifest.toml
/// out/images/scene_0000.ppm ...
/// out/labels/scene_0000.txt ...     ground-truth labels
/// out/ground_truth.json             ground truth as predictions, score 1.0
/// out/predictions.json              corrupted predictions
/// ```
pub fn write_dataset(config: &SynthConfig, out: &Path) -> Result<SynthDataset, SynthError> {
    config.scene.validate()?;
    config.noise.validate()?;
    let images_dir = out.join("images");
    let labels_dir = out.join("labels");
    for d in [&images_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(|e| FormatError::io(d, e))?;
    }
    let scenes: Vec<Scene> = (0..config.scenes).map(|i| generate_scene(&config.scene, i)).collect();
    let predictions: Vec<PredictionSet> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt(s, &config.noise, &config.scene, i))
        .collect();
    let ground_truth: Vec<PredictionSet> = scenes.iter().map(Scene::as_predictions).collect();
    for s in &scenes {
        save_label_file(&labels_dir, &s.label_file())?;
        let path = images_dir.join(format!("{}.ppm", s.image_id));
        let bytes = if config.render_images { render_ppm(s) } else { Vec::new() };
        fs::write(&path, bytes).map_err(|e| FormatError::io(&path, e))?;
    }
    write_predictions(&ground_truth, &out.join("ground_truth.json"))?;
    write_predictions(&predictions, &out.join("predictions.json"))?;
    let manifest = DatasetManifest {
        images_dir: "images".into(),
        labels_dir: "labels".into(),
        predictions_path: Some("predictions.json".into()),
        class_names: (0..config.scene.n_classes).map(|c| format!("class_{c}")).collect(),
        default_size: Some(config.scene.size()),
        sizes: Default::default(),
    };
    let path = out.join("manifest.toml");
    fs::write(&path, manifest.to_toml()).map_err(|e| FormatError::io(&path, e))?;
    Ok(SynthDataset {
        scenes,
        ground_truth,
        predictions,
    })
}
