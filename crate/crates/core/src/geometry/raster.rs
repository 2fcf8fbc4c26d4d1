//! Scanline polygon fill with center sampling and the even-odd rule.

use super::{BitMask, ImageSize, Polygon};

/// Rasterize `p` into a mask of `size`.
///
/// Pixel `(i, j)` is set iff its center `(i + 0.5, j + 0.5)` is inside the
/// polygon under the even-odd rule. A center lying exactly on a left edge
/// counts as inside and on a right edge as outside; a center exactly on a
/// vertex height is decided by the half-open `y > yc` edge rule. Anything
/// outside the frame is clipped.
pub fn rasterize(p: &Polygon, size: ImageSize) -> BitMask {
    let mut mask = BitMask::new(size);
    let (_, min_y, _, max_y) = p.extent();
    if !(max_y > min_y) {
        return mask;
    }

    let edges: Vec<_> = p.edges().filter(|(a, b)| a.y != b.y).collect();
    let first_row = clamp_index((min_y - 0.5).floor(), size.height);
    let last_row = clamp_index((max_y - 0.5).ceil() + 1.0, size.height);

    let mut crossings: Vec<f64> = Vec::with_capacity(edges.len());
    for row in first_row..last_row {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for (a, b) in &edges {
            if (a.y > yc) != (b.y > yc) {
                crossings.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            // centers with pair[0] <= i + 0.5 < pair[1]
            let x0 = clamp_index((pair[0] - 0.5).ceil(), size.width);
            let x1 = clamp_index((pair[1] - 0.5).ceil(), size.width);
            mask.set_span(row, x0, x1);
        }
    }
    mask
}

fn clamp_index(v: f64, limit: u32) -> u32 {
    if v <= 0.0 {
        0
    } else if v >= limit as f64 {
        limit
    } else {
        v as u32
    }
}
