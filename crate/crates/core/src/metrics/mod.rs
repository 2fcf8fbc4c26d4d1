//! Instance matching and dataset-level metrics.

mod aggregate;
mod ap;
mod evaluate;
mod matching;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, BitMask, GeometryError};

pub use aggregate::{aggregate, dataset_summary, Averages, DetectionSummary};
pub use ap::{average_precision, pr_curve, MatchInput, PrCurve, PrPoint, COCO_THRESHOLDS, MAP50};
pub use evaluate::{
    evaluate_detections, evaluate_records, mean_ap, ClassCurve, DetectionMetrics, EvalImage,
    EvalInstance,
};
pub use matching::{
    greedy_match, image_record, iou_matrix, match_instances, visit_order, ImageEvalRecord,
    IouMatrix, MatchResult, MatchedPair,
};
pub use report::DatasetReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expected {expected:?} shapes, found a {found:?} shape")]
    MixedKinds { expected: MatchKind, found: MatchKind },
    #[error("IoU threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("prediction {index} has no score")]
    MissingScore { index: usize },
    #[error("either every prediction carries a score or none does")]
    MixedScores,
    #[error("instance {index} has no mask")]
    MissingMask { index: usize },
    #[error("{masks} mask pairs for {pairs} matched pairs")]
    Misaligned { pairs: usize, masks: usize },
    #[error("no image records to aggregate")]
    NoRecords,
}

/// A scored detection with a center-format box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Mask,
    Box,
}

/// Borrowed region used for overlap computations.
#[derive(Debug, Clone, Copy)]
pub enum Shape<'a> {
    Mask(&'a BitMask),
    Box(BBox),
}

impl Shape<'_> {
    pub fn kind(&self) -> MatchKind {
        match self {
            Shape::Mask(_) => MatchKind::Mask,
            Shape::Box(_) => MatchKind::Box,
        }
    }
}

fn check_threshold(t: f64) -> Result<(), MetricsError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(t))
    }
}

/// Ratio helper: `None` when the denominator is zero.
pub(crate) fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
