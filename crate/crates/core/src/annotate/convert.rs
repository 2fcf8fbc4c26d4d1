use super::AnnotateError;
use crate::formats::InstanceAnnotation;
use crate::geometry::{normalize, polygon_area, trace_contours, BBox, BitMask, ImageSize, Point, Polygon};
use crate::metrics::Detection;

/// Keep detections scoring at least `threshold`, in order.
pub fn filter_detections(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    debug_assert!((0.0..=1.0).contains(&threshold));
    dets.iter().filter(|d| d.score >= threshold).copied().collect()
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.x - a.x - t * dx).powi(2) + (p.y - a.y - t * dy).powi(2)).sqrt()
}

fn dp(pts: &[Point], chain: &[usize], eps: f64, keep: &mut [bool]) {
    if chain.len() < 3 {
        return;
    }
    let (a, b) = (pts[chain[0]], pts[chain[chain.len() - 1]]);
    let (mut best, mut best_d) = (0, -1.0);
    for (j, &i) in chain.iter().enumerate().take(chain.len() - 1).skip(1) {
        let d = seg_dist(pts[i], a, b);
        if d > best_d {
            best = j;
            best_d = d;
        }
    }
    if best_d > eps {
        keep[chain[best]] = true;
        dp(pts, &chain[..=best], eps, keep);
        dp(pts, &chain[best..], eps, keep);
    }
}

/// Douglas-Peucker on a closed ring. Every dropped vertex lies within `eps`
/// of the simplified outline; at least three vertices survive.
pub fn simplify_ring(pts: &[Point], eps: f64) -> Vec<Point> {
    let n = pts.len();
    if eps <= 0.0 || n <= 3 {
        return pts.to_vec();
    }
    let d2 = |p: Point| (p.x - pts[0].x).powi(2) + (p.y - pts[0].y).powi(2);
    let far = (1..n).fold(1, |k, i| if d2(pts[i]) > d2(pts[k]) { i } else { k });
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    let first: Vec<usize> = (0..=far).collect();
    let second: Vec<usize> = (far..n).chain([0]).collect();
    dp(pts, &first, eps, &mut keep);
    dp(pts, &second, eps, &mut keep);
    if keep.iter().filter(|k| **k).count() < 3 {
        let third = (1..n)
            .filter(|&i| i != far)
            .max_by(|&i, &j| {
                seg_dist(pts[i], pts[0], pts[far]).total_cmp(&seg_dist(pts[j], pts[0], pts[far]))
            })
            .expect("n > 3");
        keep[third] = true;
    }
    pts.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect()
}

/// Outline of the largest connected component as a unit-coordinate label.
pub fn mask_to_annotation(
    m: &BitMask,
    class_id: u32,
    size: ImageSize,
    simplify_epsilon: f64,
) -> Result<InstanceAnnotation, AnnotateError> {
    let largest = trace_contours(m)
        .into_iter()
        .fold(None, |best: Option<(f64, Polygon)>, p| {
            let a = polygon_area(&p);
            match best {
                Some((ba, _)) if ba >= a => best,
                _ => Some((a, p)),
            }
        })
        .map(|(_, p)| p)
        .ok_or(AnnotateError::NoForeground)?;
    let outline = if simplify_epsilon > 0.0 {
        Polygon::new(simplify_ring(largest.vertices(), simplify_epsilon)).expect("simplify keeps three vertices")
    } else {
        largest
    };
    Ok(InstanceAnnotation::new(class_id, normalize(&outline, size), None)?)
}

/// Clear pixels whose centers fall outside `bbox` (pixels) grown by `margin`.
/// Returns the clipped mask and whether anything was removed.
pub fn clip_to_box(m: &BitMask, bbox: &BBox, margin: f64) -> (BitMask, bool) {
    let size = m.size();
    let lo = |v: f64| (v - margin - 0.5).ceil().max(0.0);
    let hi = |v: f64, max: u32| ((v + margin - 0.5).floor() + 1.0).clamp(0.0, max as f64);
    let (x0, y0) = (lo(bbox.x0()), lo(bbox.y0()));
    let (x1, y1) = (hi(bbox.x1(), size.width), hi(bbox.y1(), size.height));
    let window = if x0 < x1 && y0 < y1 {
        BitMask::from_rect(size, x0 as u32, y0 as u32, x1 as u32, y1 as u32)
    } else {
        BitMask::new(size)
    };
    let clipped = m.and(&window).expect("same frame");
    let changed = clipped.count() != m.count();
    (clipped, changed)
}
