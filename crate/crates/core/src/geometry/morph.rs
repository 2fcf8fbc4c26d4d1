use super::BitMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
}

/// Binary erosion or dilation with a `(2r+1) × (2r+1)` square element.
///
/// The window is clipped at the frame border, so out-of-frame pixels neither
/// erode nor dilate anything. `radius == 0` is the identity.
pub fn morph(m: &BitMask, op: MorphOp, radius: u32) -> BitMask {
    if radius == 0 {
        return m.clone();
    }
    let (w, h) = (m.width() as usize, m.height() as usize);
    let r = radius as usize;
    let grid: Vec<bool> = m.iter_bits().collect();

    // The square element is separable: rows first, then columns.
    let mut rows = vec![false; w * h];
    let mut prefix = vec![0u32; w.max(h) + 1];
    for y in 0..h {
        let line = &grid[y * w..(y + 1) * w];
        window_pass(line.iter().copied(), w, r, op, &mut prefix, |x, v| rows[y * w + x] = v);
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let column = (0..h).map(|y| rows[y * w + x]);
        window_pass(column, h, r, op, &mut prefix, |y, v| out[y * w + x] = v);
    }
    BitMask::from_bits(m.size(), out)
}

fn window_pass(
    values: impl Iterator<Item = bool>,
    len: usize,
    r: usize,
    op: MorphOp,
    prefix: &mut [u32],
    mut write: impl FnMut(usize, bool),
) {
    prefix[0] = 0;
    for (i, v) in values.enumerate() {
        prefix[i + 1] = prefix[i] + v as u32;
    }
    for i in 0..len {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(len);
        let set = prefix[hi] - prefix[lo];
        let v = match op {
            MorphOp::Erode => set as usize == hi - lo,
            MorphOp::Dilate => set > 0,
        };
        write(i, v);
    }
}
