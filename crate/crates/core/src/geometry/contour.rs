//! Outer-boundary tracing of 8-connected mask components.
//!
//! The outline is followed on the pixel-corner lattice, Moore-neighbour style:
//! walking with the component on the right-hand side, at every lattice vertex
//! the two pixels ahead decide the turn. A foreground pixel ahead-left (also
//! reached diagonally, which is what makes the walk 8-connected) turns left, a
//! foreground pixel ahead-right continues straight, and otherwise the walk
//! turns right. Because vertices sit on pixel corners, the resulting polygon
//! encloses exactly the pixel squares of the component (holes filled), so
//! rasterizing it with center sampling recovers the component.

use super::{BitMask, Point, Polygon};

/// Per-pixel component labels (0 = background, components numbered from 1
/// in raster order of their first pixel) and the number of components.
pub fn label_components(m: &BitMask) -> (Vec<u32>, u32) {
    let (w, h) = (m.width() as usize, m.height() as usize);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for (x, y) in m.ones() {
        let idx = y as usize * w + x as usize;
        if labels[idx] != 0 {
            continue;
        }
        next += 1;
        labels[idx] = next;
        stack.push((x as i64, y as i64));
        while let Some((cx, cy)) = stack.pop() {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if m.get_i(nx, ny) {
                        let n = ny as usize * w + nx as usize;
                        if labels[n] == 0 {
                            labels[n] = next;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    debug_assert!(h == 0 || labels.len() == w * h);
    (labels, next)
}

// Directions in clockwise screen order: E, S, W, N.
const STEP: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Pixels ahead-left and ahead-right of lattice vertex `(vx, vy)` when
/// heading in direction `d`.
fn ahead(vx: i64, vy: i64, d: usize) -> ((i64, i64), (i64, i64)) {
    match d {
        0 => ((vx, vy - 1), (vx, vy)),
        1 => ((vx, vy), (vx - 1, vy)),
        2 => ((vx - 1, vy), (vx - 1, vy - 1)),
        _ => ((vx - 1, vy - 1), (vx, vy - 1)),
    }
}

/// One closed outer boundary polygon per 8-connected component, in raster
/// order of each component's first pixel. Vertices are pixel-corner
/// coordinates; collinear runs are merged so only corners remain.
pub fn trace_contours(m: &BitMask) -> Vec<Polygon> {
    let (labels, count) = label_components(m);
    if count == 0 {
        return Vec::new();
    }
    let (w, h) = (m.width() as i64, m.height() as i64);
    let mut seeds = vec![None; count as usize];
    for (x, y) in m.ones() {
        let k = labels[y as usize * w as usize + x as usize] as usize - 1;
        if seeds[k].is_none() {
            seeds[k] = Some((x as i64, y as i64));
        }
    }

    let max_steps = 4 * (w + 1) * (h + 1) + 4;
    seeds
        .into_iter()
        .enumerate()
        .map(|(k, seed)| {
            let label = k as u32 + 1;
            let inside = |(x, y): (i64, i64)| {
                x >= 0 && y >= 0 && x < w && y < h && labels[(y * w + x) as usize] == label
            };
            let (sx, sy) = seed.expect("every component has a first pixel");
            trace_one((sx, sy), inside, max_steps)
        })
        .collect()
}

fn trace_one(
    seed: (i64, i64),
    inside: impl Fn((i64, i64)) -> bool,
    max_steps: i64,
) -> Polygon {
    // The seed is the first pixel in raster order, so its top edge is on the
    // boundary and its top-left corner touches no other component pixel.
    let start = seed;
    let mut corners = vec![Point::new(start.0 as f64, start.1 as f64)];
    let mut dir = 0usize;
    let mut v = (start.0 + 1, start.1);
    let mut steps = 0;
    while v != start {
        let (left, right) = ahead(v.0, v.1, dir);
        let next = if inside(left) {
            (dir + 3) % 4
        } else if inside(right) {
            dir
        } else {
            (dir + 1) % 4
        };
        if next != dir {
            corners.push(Point::new(v.0 as f64, v.1 as f64));
        }
        dir = next;
        v = (v.0 + STEP[dir].0, v.1 + STEP[dir].1);
        steps += 1;
        assert!(steps <= max_steps, "contour walk failed to close");
    }
    Polygon::new(corners).expect("a traced outline has at least four corners")
}
