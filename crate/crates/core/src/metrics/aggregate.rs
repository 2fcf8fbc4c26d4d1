use serde::{Deserialize, Serialize};

use super::{mean, ImageEvalRecord, MetricsError};

/// Macro averages over images. A field is `None` when no image had a
/// defined value for it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub avg_precision: Option<f64>,
    pub avg_recall: Option<f64>,
    pub avg_f1: Option<f64>,
    pub avg_dice: Option<f64>,
    pub avg_iou: Option<f64>,
}

/// Per-image ratios averaged over images (not pooled counts).
///
/// Images whose denominator for a ratio is zero are left out of that ratio's
/// average; F1 is left out whenever precision or recall is. Dice and IoU
/// first average over an image's matched pairs, then over images with at
/// least one pair.
pub fn aggregate(records: &[ImageEvalRecord]) -> Result<Averages, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    Ok(Averages {
        avg_precision: mean(records.iter().filter_map(ImageEvalRecord::precision)),
        avg_recall: mean(records.iter().filter_map(ImageEvalRecord::recall)),
        avg_f1: mean(records.iter().filter_map(ImageEvalRecord::f1)),
        avg_dice: mean(records.iter().filter_map(ImageEvalRecord::mean_dice)),
        avg_iou: mean(records.iter().filter_map(ImageEvalRecord::mean_iou)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n_images: usize,
    /// Mean detections per image.
    pub n_d: f64,
    /// Mean over images of the per-image mean confidence; images without
    /// detections do not take part.
    pub c_avg: Option<f64>,
}

/// Detection count and confidence summary from per-image score lists.
pub fn dataset_summary<S: AsRef<[f64]>>(per_image: &[S]) -> DetectionSummary {
    let n_images = per_image.len();
    let total: usize = per_image.iter().map(|s| s.as_ref().len()).sum();
    DetectionSummary {
        n_images,
        n_d: if n_images == 0 { 0.0 } else { total as f64 / n_images as f64 },
        c_avg: mean(per_image.iter().filter_map(|s| mean(s.as_ref().iter().copied()))),
    }
}
