//! Prediction interchange document.
//!
//! ```json
//! {"images": [{"image_id": "scene_0000", "width": 640, "height": 640,
//!   "detections": [{"class_id": 0, "score": 0.91, "cx": 0.5, "cy": 0.5, "w": 0.1, "h": 0.1}],
//!   "masks": [{"rle": [201, 12, 627]}, {"polygon": [[0.1, 0.1], [0.2, 0.1], [0.2, 0.2]]}]}]}
//! ```
//!
//! Boxes and polygons are in unit coordinates. `masks` is optional and, when
//! present, index-aligned with `detections`. Unknown fields are ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::rle::{rle_decode, RleMask};
use super::FormatError;
use crate::annotate::TimingRecord;
use crate::geometry::{rasterize, denormalize, BBox, BitMask, ImageSize, Point, Polygon};
use crate::metrics::Detection;

/// Predictions for one image. Detection boxes are in unit coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub image_id: String,
    pub image_size: ImageSize,
    pub detections: Vec<Detection>,
    pub masks: Option<Vec<PredictedMask>>,
    pub timings: Option<TimingRecord>,
}

impl PredictionSet {
    pub fn empty(image_id: impl Into<String>, image_size: ImageSize) -> Self {
        Self {
            image_id: image_id.into(),
            image_size,
            detections: Vec::new(),
            masks: None,
            timings: None,
        }
    }

    /// Detections with boxes scaled to pixels.
    pub fn pixel_detections(&self) -> Vec<Detection> {
        self.detections
            .iter()
            .map(|d| Detection {
                bbox: d.bbox.to_pixels(self.image_size),
                ..*d
            })
            .collect()
    }

    /// Decoded masks, index-aligned with detections.
    pub fn bitmasks(&self) -> Option<Result<Vec<BitMask>, FormatError>> {
        self.masks
            .as_ref()
            .map(|ms| ms.iter().map(|m| m.to_bitmask(self.image_size)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictedMask {
    Rle(RleMask),
    /// Outline in unit coordinates.
    Polygon(Polygon),
}

impl PredictedMask {
    pub fn to_bitmask(&self, size: ImageSize) -> Result<BitMask, FormatError> {
        match self {
            PredictedMask::Rle(r) => {
                if r.size != size {
                    return Err(FormatError::RleLength {
                        sum: r.size.pixel_count() as u64,
                        expected: size.pixel_count() as u64,
                    });
                }
                rle_decode(r)
            }
            PredictedMask::Polygon(p) => Ok(rasterize(&denormalize(p, size), size)),
        }
    }
}

/// Detection as it appears on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class_id: u32,
    pub score: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            class_id: d.class_id,
            score: d.score,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
        }
    }
}

/// Normalized box as it appears on the wire (prompt boxes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<&BBox> for BoxRecord {
    fn from(b: &BBox) -> Self {
        Self {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

impl From<BoxRecord> for BBox {
    fn from(b: BoxRecord) -> Self {
        BBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskRecord {
    Rle(Vec<u32>),
    Polygon(Vec<[f64; 2]>),
}

impl From<&PredictedMask> for MaskRecord {
    fn from(m: &PredictedMask) -> Self {
        match m {
            PredictedMask::Rle(r) => MaskRecord::Rle(r.counts.clone()),
            PredictedMask::Polygon(p) => {
                MaskRecord::Polygon(p.vertices().iter().map(|v| [v.x, v.y]).collect())
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageRecord {
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default)]
    detections: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<MaskRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timings: Option<TimingRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Document<T> {
    images: Vec<T>,
}

fn schema(image_id: &str, field: impl Into<String>, message: impl Into<String>) -> FormatError {
    FormatError::Schema {
        image_id: image_id.to_string(),
        field: field.into(),
        message: message.into(),
    }
}

fn unit(value: f64) -> bool {
    value.is_finite() && (0.0..=1.0).contains(&value)
}

/// Validate wire detections into unit-coordinate detections.
pub fn detections_from_records(
    image_id: &str,
    records: &[DetectionRecord],
) -> Result<Vec<Detection>, FormatError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if !unit(r.score) {
                return Err(schema(image_id, format!("detections[{i}].score"), format!("{} not in [0, 1]", r.score)));
            }
            for (name, v) in [("cx", r.cx), ("cy", r.cy), ("w", r.w), ("h", r.h)] {
                if !unit(v) {
                    return Err(schema(image_id, format!("detections[{i}].{name}"), format!("{v} not in [0, 1]")));
                }
            }
            Ok(Detection {
                class_id: r.class_id,
                score: r.score,
                bbox: BBox {
                    cx: r.cx,
                    cy: r.cy,
                    w: r.w,
                    h: r.h,
                },
            })
        })
        .collect()
}

/// Validate wire masks against the frame they belong to.
pub fn masks_from_records(
    image_id: &str,
    size: ImageSize,
    records: &[MaskRecord],
) -> Result<Vec<PredictedMask>, FormatError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            MaskRecord::Rle(counts) => {
                let rle = RleMask {
                    size,
                    counts: counts.clone(),
                };
                rle.validate()
                    .map_err(|e| schema(image_id, format!("masks[{i}].rle"), e.to_string()))?;
                Ok(PredictedMask::Rle(rle))
            }
            MaskRecord::Polygon(coords) => {
                if let Some(v) = coords.iter().flatten().find(|v| !unit(**v)) {
                    return Err(schema(image_id, format!("masks[{i}].polygon"), format!("{v} not in [0, 1]")));
                }
                Polygon::new(coords.iter().map(|c| Point::new(c[0], c[1])).collect())
                    .map(PredictedMask::Polygon)
                    .map_err(|e| schema(image_id, format!("masks[{i}].polygon"), e.to_string()))
            }
        })
        .collect()
}

fn to_record(set: &PredictionSet) -> ImageRecord {
    ImageRecord {
        image_id: set.image_id.clone(),
        width: set.image_size.width,
        height: set.image_size.height,
        detections: set.detections.iter().map(DetectionRecord::from).collect(),
        masks: set.masks.as_ref().map(|ms| ms.iter().map(MaskRecord::from).collect()),
        timings: set.timings,
    }
}

fn from_value(index: usize, value: Value) -> Result<PredictionSet, FormatError> {
    let image_id = value
        .get("image_id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| schema(&format!("#{index}"), "image_id", "missing or not a string"))?;
    let rec: ImageRecord =
        serde_json::from_value(value).map_err(|e| schema(&image_id, "record", e.to_string()))?;
    let size = ImageSize::new(rec.width, rec.height)
        .map_err(|e| schema(&image_id, "width/height", e.to_string()))?;
    let detections = detections_from_records(&image_id, &rec.detections)?;
    let masks = match &rec.masks {
        None => None,
        Some(ms) => {
            if ms.len() != detections.len() {
                return Err(schema(
                    &image_id,
                    "masks",
                    format!("{} masks for {} detections", ms.len(), detections.len()),
                ));
            }
            Some(masks_from_records(&image_id, size, ms)?)
        }
    };
    if let Some(t) = &rec.timings {
        t.validate().map_err(|m| schema(&image_id, "timings", m))?;
    }
    Ok(PredictionSet {
        image_id,
        image_size: size,
        detections,
        masks,
        timings: rec.timings,
    })
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionSet>, FormatError> {
    let doc: Document<Value> = serde_json::from_str(text).map_err(|e| FormatError::Document {
        path: Default::default(),
        message: e.to_string(),
    })?;
    doc.images
        .into_iter()
        .enumerate()
        .map(|(i, v)| from_value(i, v))
        .collect()
}

pub fn render_predictions(sets: &[PredictionSet]) -> String {
    let doc = Document {
        images: sets.iter().map(to_record).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("prediction records serialize");
    text.push('\n');
    text
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionSet>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_predictions(&text).map_err(|e| match e {
        FormatError::Document { message, .. } => FormatError::Document {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn write_predictions(sets: &[PredictionSet], path: &Path) -> Result<(), FormatError> {
    fs::write(path, render_predictions(sets)).map_err(|e| FormatError::io(path, e))
}
