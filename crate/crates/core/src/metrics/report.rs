use serde::{Deserialize, Serialize};

use super::{Averages, DetectionMetrics, DetectionSummary, ImageEvalRecord};
use crate::annotate::{TimingRecord, TimingSource};

/// Every aggregate produced by an evaluation run, plus the per-image records
/// behind the macro averages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetReport {
    pub n_images: usize,
    pub iou_threshold: f64,
    pub avg_precision: Option<f64>,
    pub avg_recall: Option<f64>,
    pub avg_f1: Option<f64>,
    pub avg_dice: Option<f64>,
    pub avg_iou: Option<f64>,
    pub n_d: f64,
    pub c_avg: Option<f64>,
    pub box_metrics: Option<DetectionMetrics>,
    pub mask_metrics: Option<DetectionMetrics>,
    pub timings: Option<TimingRecord>,
    pub timing_source: Option<TimingSource>,
    /// Stems with ground truth but no predictions (scored as all-FN).
    pub only_ground_truth: Vec<String>,
    /// Stems with predictions but no ground truth (scored as all-FP).
    pub only_predicted: Vec<String>,
    pub per_image: Vec<ImageEvalRecord>,
}

impl DatasetReport {
    pub fn new(
        iou_threshold: f64,
        per_image: Vec<ImageEvalRecord>,
        averages: Averages,
        summary: DetectionSummary,
    ) -> Self {
        DatasetReport {
            n_images: per_image.len(),
            iou_threshold,
            avg_precision: averages.avg_precision,
            avg_recall: averages.avg_recall,
            avg_f1: averages.avg_f1,
            avg_dice: averages.avg_dice,
            avg_iou: averages.avg_iou,
            n_d: summary.n_d,
            c_avg: summary.c_avg,
            per_image,
            ..Default::default()
        }
    }
}
