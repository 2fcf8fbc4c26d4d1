//! Dataset-level drivers: per-image records and box/mask detection metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ap::{curve_from_prepared, Prepared};
use super::{
    average_precision, check_threshold, image_record, match_instances, mean, ImageEvalRecord,
    MatchKind, MetricsError, PrCurve, Shape, COCO_THRESHOLDS,
};
use crate::formats::InstanceAnnotation;
use crate::geometry::{denormalize, rasterize, BBox, BitMask, ImageSize};

/// An instance prepared for evaluation, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub class_id: u32,
    pub score: Option<f64>,
    pub bbox: BBox,
    pub mask: Option<BitMask>,
}

impl EvalInstance {
    /// Rasterize a unit-coordinate annotation; the box is the vertex extent
    /// clipped to the frame.
    pub fn from_annotation(a: &InstanceAnnotation, size: ImageSize) -> Self {
        let poly = denormalize(&a.polygon, size);
        let (x0, y0, x1, y1) = poly.extent();
        let (w, h) = (size.width as f64, size.height as f64);
        EvalInstance {
            class_id: a.class_id,
            score: a.score,
            bbox: BBox::from_corners(x0.clamp(0.0, w), y0.clamp(0.0, h), x1.clamp(0.0, w), y1.clamp(0.0, h)),
            mask: Some(rasterize(&poly, size)),
        }
    }

    fn shape(&self, index: usize, kind: MatchKind) -> Result<Shape<'_>, MetricsError> {
        match kind {
            MatchKind::Box => Ok(Shape::Box(self.bbox)),
            MatchKind::Mask => self
                .mask
                .as_ref()
                .map(Shape::Mask)
                .ok_or(MetricsError::MissingMask { index }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub image_id: String,
    pub size: ImageSize,
    pub gts: Vec<EvalInstance>,
    pub preds: Vec<EvalInstance>,
}

type Split<'a> = (Vec<(Option<f64>, Shape<'a>)>, Vec<Shape<'a>>, Vec<usize>, Vec<usize>);

impl EvalImage {
    fn classes(&self) -> BTreeSet<u32> {
        self.gts.iter().chain(&self.preds).map(|i| i.class_id).collect()
    }

    /// Shapes of one class plus the original indices they came from.
    fn split(&self, class_id: u32, kind: MatchKind) -> Result<Split<'_>, MetricsError> {
        let (mut preds, mut gts, mut pi, mut gi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, p) in self.preds.iter().enumerate().filter(|(_, p)| p.class_id == class_id) {
            preds.push((p.score, p.shape(i, kind)?));
            pi.push(i);
        }
        for (i, g) in self.gts.iter().enumerate().filter(|(_, g)| g.class_id == class_id) {
            gts.push(g.shape(i, kind)?);
            gi.push(i);
        }
        Ok((preds, gts, pi, gi))
    }
}

/// Per-image mask records, matched class by class and merged per image.
///
/// Predictions are visited by score when the image's predictions are
/// scored and by best IoU otherwise.
pub fn evaluate_records(images: &[EvalImage], iou_threshold: f64) -> Result<Vec<ImageEvalRecord>, MetricsError> {
    check_threshold(iou_threshold)?;
    images
        .iter()
        .map(|im| {
            let mut record = ImageEvalRecord {
                image_id: im.image_id.clone(),
                ..Default::default()
            };
            for class_id in im.classes() {
                let (preds, gts, pi, gi) = im.split(class_id, MatchKind::Mask)?;
                let mr = match_instances(&preds, &gts, iou_threshold, MatchKind::Mask)?;
                let masks: Vec<(&BitMask, &BitMask)> = mr
                    .pairs
                    .iter()
                    .map(|p| {
                        let pm = im.preds[pi[p.pred]].mask.as_ref().expect("checked by split");
                        let gm = im.gts[gi[p.gt]].mask.as_ref().expect("checked by split");
                        (pm, gm)
                    })
                    .collect();
                record.absorb(image_record(&im.image_id, &mr, &masks)?);
            }
            Ok(record)
        })
        .collect()
}

/// Box or mask precision, recall and mAP columns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub class_id: u32,
    pub kind: MatchKind,
    pub curve: PrCurve,
}

/// Classes with at least one ground truth anywhere in the dataset.
fn gt_classes(images: &[EvalImage]) -> BTreeSet<u32> {
    images.iter().flat_map(|im| im.gts.iter().map(|g| g.class_id)).collect()
}

fn prepare_class(images: &[EvalImage], class_id: u32, kind: MatchKind) -> Result<Vec<Prepared>, MetricsError> {
    images
        .iter()
        .map(|im| {
            let (preds, gts, _, _) = im.split(class_id, kind)?;
            Prepared::new(&preds, &gts, kind)
        })
        .collect()
}

/// Mean over classes (with ground truth) of the AP averaged over `thresholds`.
/// `None` when no class has ground truth.
pub fn mean_ap(images: &[EvalImage], kind: MatchKind, thresholds: &[f64]) -> Result<Option<f64>, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::InvalidThreshold(f64::NAN));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let per_class = gt_classes(images)
        .into_iter()
        .map(|c| {
            let prepared = prepare_class(images, c, kind)?;
            Ok(mean(thresholds.iter().map(|&t| average_precision(&curve_from_prepared(&prepared, t)))).unwrap())
        })
        .collect::<Result<Vec<f64>, MetricsError>>()?;
    Ok(mean(per_class))
}

/// Precision and recall at `iou_threshold` over all predictions given, plus
/// mAP@50 and mAP@50:95; every value is computed per class and averaged over
/// classes with ground truth. Also returns each class's PR curve at
/// `iou_threshold`.
pub fn evaluate_detections(
    images: &[EvalImage],
    kind: MatchKind,
    iou_threshold: f64,
) -> Result<(DetectionMetrics, Vec<ClassCurve>), MetricsError> {
    check_threshold(iou_threshold)?;
    let (mut ps, mut rs, mut m50, mut m5095) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut curves = Vec::new();
    for class_id in gt_classes(images) {
        let prepared = prepare_class(images, class_id, kind)?;
        let curve = curve_from_prepared(&prepared, iou_threshold);
        if let Some(last) = curve.points.last() {
            ps.push(last.precision);
        }
        rs.push(curve.points.last().map_or(0.0, |p| p.recall));
        m50.push(average_precision(&curve_from_prepared(&prepared, 0.5)));
        m5095.push(
            mean(COCO_THRESHOLDS.iter().map(|&t| average_precision(&curve_from_prepared(&prepared, t)))).unwrap(),
        );
        curves.push(ClassCurve { class_id, kind, curve });
    }
    Ok((
        DetectionMetrics {
            precision: mean(ps),
            recall: mean(rs),
            map50: mean(m50),
            map50_95: mean(m5095),
        },
        curves,
    ))
}
