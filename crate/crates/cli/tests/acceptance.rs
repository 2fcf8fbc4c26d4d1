//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use autoseg::annotate::{PipelineConfig, TimingRecord, DEFAULT_CONFIDENCE_THRESHOLD};
use autoseg::formats::{
    aggregate_fields, parse_label_file, rle_decode, rle_encode, write_label_file, InstanceAnnotation, LabelFile,
};
use autoseg::geometry::{
    box_iou, mask_dice, mask_iou, rasterize, trace_contours, BBox, BitMask, ImageSize, Point, Polygon,
};
use autoseg::metrics::{
    aggregate, average_precision, dataset_summary, evaluate_records, match_instances, pr_curve, DatasetReport,
    EvalImage, EvalInstance, MatchInput, MatchKind, Shape,
};
use autoseg::synth::{corrupt, generate_scene, NoiseSpec, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<f64, String> {
    let s = started.elapsed().as_secs_f64();
    ensure!(s < limit.as_secs_f64(), "took {s:.2} s, limit {:.0} s", limit.as_secs_f64());
    Ok(s)
}

fn frame(w: u32, h: u32) -> ImageSize {
    ImageSize::new(w, h).unwrap()
}

fn rect_mask(size: ImageSize, r: (u32, u32, u32, u32)) -> BitMask {
    BitMask::from_fn(size, |x, y| x >= r.0 && x < r.2 && y >= r.1 && y < r.3)
}

fn random_rect(rng: &mut ChaCha8Rng) -> (u32, u32, u32, u32) {
    let x0 = rng.random_range(0..64);
    let y0 = rng.random_range(0..64);
    (x0, y0, rng.random_range(x0 + 1..=64), rng.random_range(y0 + 1..=64))
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let size = frame(64, 64);
    let mut max_dice_err = 0.0f64;
    for i in 0..1000 {
        let (a, b) = (random_rect(&mut rng), random_rect(&mut rng));
        let ow = a.2.min(b.2).saturating_sub(a.0.max(b.0)) as u64;
        let oh = a.3.min(b.3).saturating_sub(a.1.max(b.1)) as u64;
        let area = |r: (u32, u32, u32, u32)| ((r.2 - r.0) * (r.3 - r.1)) as u64;
        let inter = ow * oh;
        let analytic = inter as f64 / (area(a) + area(b) - inter) as f64;
        let (ma, mb) = (rect_mask(size, a), rect_mask(size, b));
        let iou = mask_iou(&ma, &mb).unwrap();
        ensure!(iou == analytic, "pair {i}: mask IoU {iou} != interval IoU {analytic}");
        let dice = mask_dice(&ma, &mb).unwrap();
        max_dice_err = max_dice_err.max((dice - 2.0 * iou / (1.0 + iou)).abs());
    }
    ensure!(max_dice_err <= 1e-12, "Dice deviates from 2 IoU / (1 + IoU) by {max_dice_err:e}");
    let s = within(Duration::from_secs(5), started)?;
    Ok(format!("1000 pairs, IoU exact, max Dice error {max_dice_err:.1e}, {s:.2} s"))
}

fn random_convex(rng: &mut ChaCha8Rng) -> Polygon {
    loop {
        let (cx, cy) = (rng.random_range(20.0..44.0), rng.random_range(20.0..44.0));
        let (rx, ry) = (rng.random_range(5.0..18.0), rng.random_range(5.0..18.0));
        let n = rng.random_range(3..24);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let pts = angles.iter().map(|a| Point::new(cx + rx * a.cos(), cy + ry * a.sin())).collect();
        let p = Polygon::new(pts).unwrap();
        let (x0, y0, x1, y1) = p.extent();
        if x1 - x0 >= 8.0 && y1 - y0 >= 8.0 {
            return p;
        }
    }
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let size = frame(32, 32);
    for i in 0..500 {
        let density = rng.random_range(0.0..=1.0);
        let m = BitMask::from_fn(size, |_, _| rng.random_bool(density));
        ensure!(rle_decode(&rle_encode(&m)).unwrap() == m, "mask {i}: RLE roundtrip differs");
    }
    let mut max_err = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(3..30);
        let poly = Polygon::from_coords((0..n).map(|_| (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0))))
            .unwrap();
        let lf = LabelFile {
            image_id: "x".into(),
            annotations: vec![InstanceAnnotation::new(0, poly.clone(), None).unwrap()],
        };
        let back = parse_label_file("x", &write_label_file(&lf)).unwrap();
        for (u, v) in poly.vertices().iter().zip(back.annotations[0].polygon.vertices()) {
            max_err = max_err.max((u.x - v.x).abs()).max((u.y - v.y).abs());
        }
    }
    ensure!(max_err <= 5e-7, "label coordinate error {max_err:e} > 5e-7");
    let frame64 = frame(64, 64);
    let mut min_iou = 1.0f64;
    for _ in 0..200 {
        let r1 = rasterize(&random_convex(&mut rng), frame64);
        let mut r2 = BitMask::new(frame64);
        for o in trace_contours(&r1) {
            r2 = r2.or(&rasterize(&o, frame64)).unwrap();
        }
        min_iou = min_iou.min(mask_iou(&r1, &r2).unwrap());
    }
    ensure!(min_iou >= 0.99, "rasterize-trace-rasterize IoU {min_iou} < 0.99");
    let s = within(Duration::from_secs(10), started)?;
    Ok(format!(
        "500 RLE exact, label error {max_err:.1e} <= 5e-7, polygon min IoU {min_iou:.4} >= 0.99, {s:.2} s"
    ))
}

fn autoseg(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_autoseg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.code() == Some(0),
        "`autoseg {}` exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or(f64::NAN)
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).display().to_string();
    autoseg(&["synth", "--out", &p("data"), "--scenes", "50", "--seed", "42"])?;
    autoseg(&[
        "annotate",
        "--manifest",
        &p("data/manifest.toml"),
        "--adapter-file",
        &p("data/predictions.json"),
        "--out",
        &p("auto"),
    ])?;
    autoseg(&[
        "eval-labels",
        "--manifest",
        &p("data/manifest.toml"),
        "--pred-labels",
        &p("auto/labels"),
        "--out",
        &p("eval_labels"),
    ])?;
    autoseg(&["eval-preds", "--manifest", &p("data/manifest.toml"), "--out", &p("eval_preds")])?;
    let labels = read_json(&tmp.path().join("eval_labels/report.json"));
    for key in ["avg_precision", "avg_recall", "avg_f1"] {
        ensure!(num(&labels, key) == 1.0, "eval-labels {key} = {}", labels[key]);
    }
    for key in ["avg_dice", "avg_iou"] {
        ensure!(num(&labels, key) >= 0.99, "eval-labels {key} = {}", labels[key]);
    }
    ensure!(labels["n_images"] == 50, "eval-labels saw {} images", labels["n_images"]);
    let preds = read_json(&tmp.path().join("eval_preds/report.json"));
    for kind in ["box_metrics", "mask_metrics"] {
        for key in ["map50", "map50_95"] {
            ensure!(num(&preds[kind], key) == 1.0, "eval-preds {kind}.{key} = {}", preds[kind][key]);
        }
    }
    let s = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "50 scenes: P = R = F1 = 1.0, Dice {}, IoU {}, box/mask mAP@50 = mAP@50:95 = 1.0, {s:.2} s",
        labels["avg_dice"], labels["avg_iou"]
    ))
}

fn unit_box(x: f64) -> Shape<'static> {
    Shape::Box(BBox::new(x, 5.0, 4.0, 4.0).unwrap())
}

fn ap(preds: Vec<(f64, f64)>, gts: &[f64]) -> f64 {
    let input = MatchInput {
        preds: preds.into_iter().map(|(s, x)| (Some(s), unit_box(x))).collect(),
        gts: gts.iter().map(|&x| unit_box(x)).collect(),
    };
    average_precision(&pr_curve(&[input], 0.5, MatchKind::Box).unwrap())
}

fn criterion_4() -> Outcome {
    let miss = 1000.0;
    let a = ap(vec![(0.9, miss), (0.8, 10.0)], &[10.0]);
    ensure!((a - 0.5).abs() <= 1e-9, "FP-then-TP AP {a}");
    let b = ap(vec![(0.9, 10.0), (0.8, miss)], &[10.0]);
    ensure!((b - 1.0).abs() <= 1e-9, "TP-then-FP AP {b}");
    // TP FP TP FP TP over 3 GTs: interpolated precision 1 on 34 recall
    // levels, 2/3 on 33, 3/5 on 34.
    let table = (34.0 + 33.0 * 2.0 / 3.0 + 34.0 * 0.6) / 101.0;
    let c = ap(
        vec![(0.95, 10.0), (0.9, miss), (0.85, 20.0), (0.8, miss + 50.0), (0.75, 30.0)],
        &[10.0, 20.0, 30.0],
    );
    ensure!((c - table).abs() <= 1e-9, "5-detection AP {c}, table {table}");
    Ok(format!("AP {a} / {b} / {c:.9} (table {table:.9})"))
}

fn optimal_tp(ious: &[Vec<f64>], thr: f64, i: usize, used: u32) -> usize {
    if i == ious.len() {
        return 0;
    }
    let mut best = optimal_tp(ious, thr, i + 1, used);
    for (g, &v) in ious[i].iter().enumerate() {
        if used & (1 << g) == 0 && v >= thr {
            best = best.max(1 + optimal_tp(ious, thr, i + 1, used | (1 << g)));
        }
    }
    best
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut strictly_worse = 0;
    for case in 0..200 {
        let b = |rng: &mut ChaCha8Rng| BBox {
            cx: rng.random_range(0.0..16.0),
            cy: rng.random_range(0.0..16.0),
            w: rng.random_range(1.0..8.0),
            h: rng.random_range(1.0..8.0),
        };
        let n_preds = rng.random_range(0..=6);
        let preds: Vec<BBox> = (0..n_preds).map(|_| b(&mut rng)).collect();
        let n_gts = rng.random_range(0..=6);
        let gts: Vec<BBox> = (0..n_gts).map(|_| b(&mut rng)).collect();
        let scored = rng.random_bool(0.5);
        let p: Vec<(Option<f64>, Shape)> = preds
            .iter()
            .map(|x| (scored.then(|| rng.random_range(0.0..1.0)), Shape::Box(*x)))
            .collect();
        let g: Vec<Shape> = gts.iter().map(|x| Shape::Box(*x)).collect();
        let m = match_instances(&p, &g, 0.3, MatchKind::Box).unwrap();
        ensure!(m.tp() + m.fn_() == gts.len(), "case {case}: tp + fn != |GT|");
        ensure!(m.tp() + m.fp() == preds.len(), "case {case}: tp + fp != |preds|");
        let table: Vec<Vec<f64>> = preds.iter().map(|a| gts.iter().map(|b| box_iou(a, b)).collect()).collect();
        let opt = optimal_tp(&table, 0.3, 0, 0);
        ensure!(m.tp() <= opt, "case {case}: greedy TP {} > optimal {opt}", m.tp());
        strictly_worse += (m.tp() < opt) as usize;
    }
    Ok(format!("200 cases conserve counts; greedy <= optimal ({strictly_worse} strictly below)"))
}

fn scene_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        width: 128,
        height: 128,
        n_instances: [3, 8],
        radius: [8.0, 20.0],
        max_overlap: 0.05,
        n_classes: 1,
        seed,
    }
}

/// Mean over seeds of the dataset averages for one noise setting.
fn seed_average(noise: &NoiseSpec, metric: fn(&autoseg::metrics::Averages) -> Option<f64>) -> f64 {
    const SEEDS: u64 = 20;
    const SCENES: usize = 5;
    let total: f64 = (0..SEEDS)
        .map(|seed| {
            let spec = scene_spec(1000 + seed * 100);
            let noise = NoiseSpec { seed, ..noise.clone() };
            let images: Vec<EvalImage> = (0..SCENES)
                .map(|i| {
                    let scene = generate_scene(&spec, i);
                    let pred = corrupt(&scene, &noise, &spec, i);
                    let masks = pred.bitmasks().unwrap().unwrap();
                    EvalImage {
                        image_id: scene.image_id.clone(),
                        size: scene.size,
                        gts: scene
                            .instances
                            .iter()
                            .map(|g| EvalInstance {
                                class_id: 0,
                                score: None,
                                bbox: g.bbox,
                                mask: Some(g.mask.clone()),
                            })
                            .collect(),
                        preds: pred
                            .pixel_detections()
                            .into_iter()
                            .zip(masks)
                            .map(|(d, m)| EvalInstance {
                                class_id: d.class_id,
                                score: Some(d.score),
                                bbox: d.bbox,
                                mask: Some(m),
                            })
                            .collect(),
                    }
                })
                .collect();
            let averages = aggregate(&evaluate_records(&images, 0.5).unwrap()).unwrap();
            metric(&averages).unwrap_or(0.0)
        })
        .sum();
    total / SEEDS as f64
}

fn criterion_6() -> Outcome {
    let dice = |a: &autoseg::metrics::Averages| a.avg_dice;
    let recall = |a: &autoseg::metrics::Averages| a.avg_recall;
    let precision = |a: &autoseg::metrics::Averages| a.avg_precision;
    let d1 = seed_average(&NoiseSpec { morph_radius: -1, ..Default::default() }, dice);
    let d2 = seed_average(&NoiseSpec { morph_radius: -2, ..Default::default() }, dice);
    ensure!(d2 < d1, "mean Dice at erosion 2 ({d2}) not below erosion 1 ({d1})");
    let r0 = seed_average(&NoiseSpec::default(), recall);
    let r5 = seed_average(&NoiseSpec { drop_rate: 0.5, ..Default::default() }, recall);
    ensure!(r5 < r0, "avg recall at drop 0.5 ({r5}) not below drop 0 ({r0})");
    let p0 = seed_average(&NoiseSpec::default(), precision);
    let p5 = seed_average(&NoiseSpec { spurious_rate: 0.5, ..Default::default() }, precision);
    ensure!(p5 < p0, "avg precision at spurious 0.5 ({p5}) not below spurious 0 ({p0})");
    Ok(format!(
        "20 seeds: Dice {d1:.4} -> {d2:.4}, recall {r0:.4} -> {r5:.4}, precision {p0:.4} -> {p5:.4}"
    ))
}

fn criterion_7() -> Outcome {
    ensure!(DEFAULT_CONFIDENCE_THRESHOLD == 0.3, "default threshold {DEFAULT_CONFIDENCE_THRESHOLD}");
    ensure!(
        PipelineConfig::default().confidence_threshold == 0.3,
        "pipeline default threshold differs"
    );
    // CLI default: run annotate without --threshold and read the summary.
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).display().to_string();
    autoseg(&["synth", "--out", &p("d"), "--scenes", "3", "--seed", "7"])?;
    autoseg(&["annotate", "--manifest", &p("d/manifest.toml"), "--adapter-file", &p("d/predictions.json"), "--out", &p("a")])?;
    let summary = read_json(&tmp.path().join("a/run_summary.json"));
    ensure!(summary["confidence_threshold"] == 0.3, "CLI ran with threshold {}", summary["confidence_threshold"]);
    ensure!(summary.get("n_d").is_some() && summary.get("c_avg").is_some(), "run summary lacks n_d / c_avg");

    let counts: Vec<Vec<f64>> = [2usize, 3, 4].iter().map(|&n| vec![0.8; n]).collect();
    let s = dataset_summary(&counts);
    ensure!(s.n_d == 3.0, "n_d for counts [2, 3, 4] = {}", s.n_d);
    ensure!((s.c_avg.unwrap() - 0.8).abs() < 1e-12, "c_avg = {:?}", s.c_avg);

    let names: Vec<&str> = aggregate_fields(&DatasetReport::default()).into_iter().map(|(n, _)| n).collect();
    for f in ["avg_precision", "avg_recall", "avg_f1", "avg_dice", "avg_iou"] {
        ensure!(names.contains(&f), "report lacks {f}");
    }
    for kind in ["box", "mask"] {
        for m in ["precision", "recall", "map50", "map50_95"] {
            let f = format!("{kind}_{m}");
            ensure!(names.contains(&f.as_str()), "report lacks {f}");
        }
    }
    let t = serde_json::to_value(TimingRecord { preprocess_ms: 4.5, inference_ms: 1986.4, postprocess_ms: 1.1 }).unwrap();
    let mut keys: Vec<&str> = t.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    ensure!(keys == ["inference_ms", "postprocess_ms", "preprocess_ms"], "timing record keys {keys:?}");
    let header = fs::read_to_string(tmp.path().join("a/timings.csv")).unwrap();
    ensure!(
        header.starts_with("image_id,preprocess_ms,inference_ms,postprocess_ms,"),
        "timings.csv header: {}",
        header.lines().next().unwrap_or("")
    );
    Ok("threshold 0.3, n_d([2,3,4]) = 3.0, report and detection summary fields present, 3 timing stages".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("rectangle oracle exactness", criterion_1),
        ("roundtrip suite", criterion_2),
        ("end-to-end closure", criterion_3),
        ("AP oracle", criterion_4),
        ("matching oracle", criterion_5),
        ("monotonicity properties", criterion_6),
        ("defaults and report shape", criterion_7),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
