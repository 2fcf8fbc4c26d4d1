//! Precision-recall curves and interpolated average precision.

use serde::{Deserialize, Serialize};

use super::{check_threshold, greedy_match, iou_matrix, visit_order, IouMatrix, MatchKind, MetricsError, Shape};

pub const MAP50: [f64; 1] = [0.5];

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const COCO_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

const RECALL_STEPS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

/// Curve points in descending score order (recall non-decreasing).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

/// Single-class predictions and ground truths of one image.
#[derive(Debug, Clone, Default)]
pub struct MatchInput<'a> {
    pub preds: Vec<(Option<f64>, Shape<'a>)>,
    pub gts: Vec<Shape<'a>>,
}

/// One image's matching state, reusable across IoU thresholds.
pub(crate) struct Prepared {
    scores: Vec<f64>,
    order: Vec<usize>,
    ious: IouMatrix,
}

impl Prepared {
    pub(crate) fn new(
        preds: &[(Option<f64>, Shape<'_>)],
        gts: &[Shape<'_>],
        kind: MatchKind,
    ) -> Result<Self, MetricsError> {
        let scores = preds
            .iter()
            .enumerate()
            .map(|(index, (s, _))| s.ok_or(MetricsError::MissingScore { index }))
            .collect::<Result<Vec<f64>, _>>()?;
        let shapes: Vec<Shape<'_>> = preds.iter().map(|(_, s)| *s).collect();
        let ious = iou_matrix(&shapes, gts, kind)?;
        let order = visit_order(Some(&scores), &ious);
        Ok(Self { scores, order, ious })
    }

    pub(crate) fn n_gt(&self) -> usize {
        self.ious.n_gts()
    }

    pub(crate) fn n_preds(&self) -> usize {
        self.ious.n_preds()
    }

    /// `(score, is_tp)` per prediction at `threshold`, in visit order.
    pub(crate) fn hits(&self, threshold: f64) -> impl Iterator<Item = (f64, bool)> + '_ {
        let matched = greedy_match(&self.order, &self.ious, threshold).pred_matched(self.n_preds());
        self.order.iter().map(move |&p| (self.scores[p], matched[p]))
    }
}

pub(crate) fn curve_from_prepared(images: &[Prepared], threshold: f64) -> PrCurve {
    let n_gt: usize = images.iter().map(Prepared::n_gt).sum();
    let mut hits: Vec<(f64, bool)> = images.iter().flat_map(|im| im.hits(threshold)).collect();
    // Stable: equal scores keep image order, then in-image visit order.
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < hits.len() {
        let score = hits[i].0;
        while i < hits.len() && hits[i].0 == score {
            if hits[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            precision: tp as f64 / (tp + fp) as f64,
            score,
        });
    }
    PrCurve { points, n_gt }
}

/// Pool predictions of all images by descending score, with TP/FP decided
/// by per-image greedy matching; one point per distinct score.
pub fn pr_curve(
    images: &[MatchInput<'_>],
    iou_threshold: f64,
    kind: MatchKind,
) -> Result<PrCurve, MetricsError> {
    check_threshold(iou_threshold)?;
    let prepared = images
        .iter()
        .map(|im| Prepared::new(&im.preds, &im.gts, kind))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(curve_from_prepared(&prepared, iou_threshold))
}

/// 101-point interpolated AP: the mean over recall levels r = 0, 0.01, ...,
/// 1 of the highest precision reached at any recall >= r.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let pts = &curve.points;
    if pts.is_empty() {
        return 0.0;
    }
    // suffix_max[i] = max precision over points i.. (recall is non-decreasing).
    let mut suffix_max = vec![0.0f64; pts.len() + 1];
    for i in (0..pts.len()).rev() {
        suffix_max[i] = suffix_max[i + 1].max(pts[i].precision);
    }
    let total: f64 = (0..RECALL_STEPS)
        .map(|k| {
            let r = k as f64 / (RECALL_STEPS - 1) as f64;
            let first = pts.partition_point(|p| p.recall < r);
            suffix_max[first]
        })
        .sum();
    total / RECALL_STEPS as f64
}
