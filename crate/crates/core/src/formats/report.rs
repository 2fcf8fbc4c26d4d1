//! Report rendering: CSV (aggregates as `#` preamble lines, then one row per
//! image) and JSON.

use std::fmt::Write as _;

use crate::annotate::ImageTiming;
use crate::metrics::{ClassCurve, DatasetReport, DetectionMetrics, MatchKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Aggregate fields as `(name, rendered value)` pairs, in report order.
pub fn aggregate_fields(r: &DatasetReport) -> Vec<(&'static str, String)> {
    let det = |m: &Option<DetectionMetrics>| {
        let m = m.unwrap_or_default();
        [opt(m.precision), opt(m.recall), opt(m.map50), opt(m.map50_95)]
    };
    let [bp, br, bm50, bm5095] = det(&r.box_metrics);
    let [mp, mr, mm50, mm5095] = det(&r.mask_metrics);
    let t = r.timings;
    vec![
        ("n_images", r.n_images.to_string()),
        ("iou_threshold", num(r.iou_threshold)),
        ("avg_precision", opt(r.avg_precision)),
        ("avg_recall", opt(r.avg_recall)),
        ("avg_f1", opt(r.avg_f1)),
        ("avg_dice", opt(r.avg_dice)),
        ("avg_iou", opt(r.avg_iou)),
        ("n_d", num(r.n_d)),
        ("c_avg", opt(r.c_avg)),
        ("box_precision", bp),
        ("box_recall", br),
        ("box_map50", bm50),
        ("box_map50_95", bm5095),
        ("mask_precision", mp),
        ("mask_recall", mr),
        ("mask_map50", mm50),
        ("mask_map50_95", mm5095),
        ("preprocess_ms", opt(t.map(|t| t.preprocess_ms))),
        ("inference_ms", opt(t.map(|t| t.inference_ms))),
        ("postprocess_ms", opt(t.map(|t| t.postprocess_ms))),
        ("timing_source", r.timing_source.map(|s| s.as_str().to_string()).unwrap_or_default()),
        ("only_ground_truth", r.only_ground_truth.join(";")),
        ("only_predicted", r.only_predicted.join(";")),
    ]
}

pub const PER_IMAGE_HEADER: &str = "image_id,tp,fp,fn,precision,recall,f1,dice,iou";

pub fn write_report(r: &DatasetReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::new();
            for (name, value) in aggregate_fields(r) {
                writeln!(s, "# {name},{}", csv_field(&value)).unwrap();
            }
            writeln!(s, "{PER_IMAGE_HEADER}").unwrap();
            for rec in &r.per_image {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    csv_field(&rec.image_id),
                    rec.tp,
                    rec.fp,
                    rec.fn_,
                    opt(rec.precision()),
                    opt(rec.recall()),
                    opt(rec.f1()),
                    opt(rec.mean_dice()),
                    opt(rec.mean_iou()),
                )
                .unwrap();
            }
            s
        }
    }
}

pub fn write_pr_curves(curves: &[ClassCurve]) -> String {
    let mut s = String::from("kind,class_id,recall,precision,score\n");
    for c in curves {
        let kind = match c.kind {
            MatchKind::Box => "box",
            MatchKind::Mask => "mask",
        };
        for p in &c.curve.points {
            writeln!(s, "{kind},{},{},{},{}", c.class_id, num(p.recall), num(p.precision), num(p.score)).unwrap();
        }
    }
    s
}

pub fn write_timings(rows: &[ImageTiming]) -> String {
    let mut s = String::from("image_id,preprocess_ms,inference_ms,postprocess_ms,source\n");
    for row in rows {
        let t = &row.timings;
        writeln!(
            s,
            "{},{},{},{},{}",
            csv_field(&row.image_id),
            num(t.preprocess_ms),
            num(t.inference_ms),
            num(t.postprocess_ms),
            row.source.as_str()
        )
        .unwrap();
    }
    s
}
