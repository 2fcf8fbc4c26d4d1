use serde::{Deserialize, Serialize};

use super::{check_threshold, mean, ratio, MatchKind, MetricsError, Shape};
use crate::geometry::{box_iou, mask_dice, mask_iou, BitMask};

/// Dense `preds × gts` overlap table.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    n_preds: usize,
    n_gts: usize,
    values: Vec<f64>,
}

impl IouMatrix {
    pub fn get(&self, pred: usize, gt: usize) -> f64 {
        self.values[pred * self.n_gts + gt]
    }

    pub fn n_preds(&self) -> usize {
        self.n_preds
    }

    pub fn n_gts(&self) -> usize {
        self.n_gts
    }

    fn best(&self, pred: usize) -> f64 {
        (0..self.n_gts).map(|g| self.get(pred, g)).fold(0.0, f64::max)
    }
}

fn check_kind(shapes: &[Shape<'_>], kind: MatchKind) -> Result<(), MetricsError> {
    match shapes.iter().find(|s| s.kind() != kind) {
        Some(s) => Err(MetricsError::MixedKinds {
            expected: kind,
            found: s.kind(),
        }),
        None => Ok(()),
    }
}

/// Pairwise IoU of every prediction against every ground truth.
///
/// Mask pairs whose pixel extents do not touch are scored 0 without a full
/// popcount pass.
pub fn iou_matrix(
    preds: &[Shape<'_>],
    gts: &[Shape<'_>],
    kind: MatchKind,
) -> Result<IouMatrix, MetricsError> {
    check_kind(preds, kind)?;
    check_kind(gts, kind)?;
    let bounds = |s: &Shape<'_>| match s {
        Shape::Mask(m) => m.bounds(),
        Shape::Box(_) => None,
    };
    let pred_bounds: Vec<_> = preds.iter().map(bounds).collect();
    let gt_bounds: Vec<_> = gts.iter().map(bounds).collect();

    let mut values = Vec::with_capacity(preds.len() * gts.len());
    for (p, pb) in preds.iter().zip(&pred_bounds) {
        for (g, gb) in gts.iter().zip(&gt_bounds) {
            let iou = match (p, g) {
                (Shape::Box(a), Shape::Box(b)) => box_iou(a, b),
                (Shape::Mask(a), Shape::Mask(b)) => match (pb, gb) {
                    (Some(a0), Some(b0)) if !extents_touch(*a0, *b0) => 0.0,
                    _ => mask_iou(a, b)?,
                },
                _ => unreachable!("kinds checked above"),
            };
            values.push(iou);
        }
    }
    Ok(IouMatrix {
        n_preds: preds.len(),
        n_gts: gts.len(),
        values,
    })
}

fn extents_touch(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

/// Order in which predictions claim ground truths.
///
/// With scores: descending score. Without: descending best IoU against any
/// ground truth. Ties keep the lower index first.
pub fn visit_order(scores: Option<&[f64]>, ious: &IouMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ious.n_preds()).collect();
    match scores {
        Some(s) => order.sort_by(|&a, &b| s[b].total_cmp(&s[a])),
        None => {
            let best: Vec<f64> = (0..ious.n_preds()).map(|p| ious.best(p)).collect();
            order.sort_by(|&a, &b| best[b].total_cmp(&best[a]));
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }
    pub fn fp(&self) -> usize {
        self.unmatched_pred.len()
    }
    pub fn fn_(&self) -> usize {
        self.unmatched_gt.len()
    }

    /// Per-prediction flag: matched or not.
    pub fn pred_matched(&self, n_preds: usize) -> Vec<bool> {
        let mut flags = vec![false; n_preds];
        for p in &self.pairs {
            flags[p.pred] = true;
        }
        flags
    }
}

/// Greedy one-to-one matching: each prediction in `order` claims its
/// highest-IoU ground truth that is still free and reaches `threshold`.
pub fn greedy_match(order: &[usize], ious: &IouMatrix, threshold: f64) -> MatchResult {
    let mut gt_taken = vec![false; ious.n_gts()];
    let mut pred_taken = vec![false; ious.n_preds()];
    let mut pairs = Vec::new();
    for &p in order {
        let mut best: Option<(usize, f64)> = None;
        for g in (0..ious.n_gts()).filter(|&g| !gt_taken[g]) {
            let iou = ious.get(p, g);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            gt_taken[g] = true;
            pred_taken[p] = true;
            pairs.push(MatchedPair { pred: p, gt: g, iou });
        }
    }
    MatchResult {
        pairs,
        unmatched_pred: (0..ious.n_preds()).filter(|&p| !pred_taken[p]).collect(),
        unmatched_gt: (0..ious.n_gts()).filter(|&g| !gt_taken[g]).collect(),
    }
}

/// Match scored (or unscored) predictions against ground truths.
///
/// Scores must be given for every prediction or for none.
pub fn match_instances(
    preds: &[(Option<f64>, Shape<'_>)],
    gts: &[Shape<'_>],
    iou_threshold: f64,
    kind: MatchKind,
) -> Result<MatchResult, MetricsError> {
    check_threshold(iou_threshold)?;
    let shapes: Vec<Shape<'_>> = preds.iter().map(|(_, s)| *s).collect();
    let ious = iou_matrix(&shapes, gts, kind)?;
    let scores: Option<Vec<f64>> = preds.iter().map(|(s, _)| *s).collect();
    if scores.is_none() && preds.iter().any(|(s, _)| s.is_some()) {
        return Err(MetricsError::MixedScores);
    }
    let order = visit_order(scores.as_deref(), &ious);
    Ok(greedy_match(&order, &ious, iou_threshold))
}

/// Per-image counts and per-pair overlap scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageEvalRecord {
    pub image_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pair_dice: Vec<f64>,
    pub pair_iou: Vec<f64>,
}

impl ImageEvalRecord {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; `None` when either is undefined.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
    }

    pub fn mean_dice(&self) -> Option<f64> {
        mean(self.pair_dice.iter().copied())
    }

    pub fn mean_iou(&self) -> Option<f64> {
        mean(self.pair_iou.iter().copied())
    }

    /// Fold another record (e.g. a second class on the same image) into this one.
    pub fn absorb(&mut self, other: ImageEvalRecord) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.pair_dice.extend(other.pair_dice);
        self.pair_iou.extend(other.pair_iou);
    }
}

/// Build the per-image record; `pair_masks[i]` is `(pred, gt)` for `mr.pairs[i]`.
pub fn image_record(
    image_id: &str,
    mr: &MatchResult,
    pair_masks: &[(&BitMask, &BitMask)],
) -> Result<ImageEvalRecord, MetricsError> {
    if pair_masks.len() != mr.pairs.len() {
        return Err(MetricsError::Misaligned {
            pairs: mr.pairs.len(),
            masks: pair_masks.len(),
        });
    }
    let mut pair_dice = Vec::with_capacity(pair_masks.len());
    let mut pair_iou = Vec::with_capacity(pair_masks.len());
    for (p, g) in pair_masks {
        pair_dice.push(mask_dice(p, g)?);
        pair_iou.push(mask_iou(p, g)?);
    }
    Ok(ImageEvalRecord {
        image_id: image_id.to_string(),
        tp: mr.tp(),
        fp: mr.fp(),
        fn_: mr.fn_(),
        pair_dice,
        pair_iou,
    })
}
