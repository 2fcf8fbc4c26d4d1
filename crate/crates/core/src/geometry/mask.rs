use super::{GeometryError, ImageSize};

const WORD: usize = 64;

/// Dense binary mask, one bit per pixel, row-major.
///
/// Bits are packed into `u64` words over the flat pixel index `y * width + x`;
/// padding bits past `width * height` are always zero so that word-wise
/// popcounts are exact.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    size: ImageSize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitMask")
            .field("size", &self.size)
            .field("count", &self.count())
            .finish()
    }
}

impl BitMask {
    pub fn new(size: ImageSize) -> Self {
        Self {
            size,
            words: vec![0; size.pixel_count().div_ceil(WORD)],
        }
    }

    pub fn full(size: ImageSize) -> Self {
        let mut m = Self::new(size);
        for y in 0..size.height {
            m.set_span(y, 0, size.width);
        }
        m
    }

    pub fn from_fn(size: ImageSize, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(size);
        for y in 0..size.height {
            for x in 0..size.width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Mask with the pixel rectangle `[x0, x1) × [y0, y1)` set, clipped to the frame.
    pub fn from_rect(size: ImageSize, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        let mut m = Self::new(size);
        for y in y0..y1.min(size.height) {
            m.set_span(y, x0, x1);
        }
        m
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn width(&self) -> u32 {
        self.size.width
    }

    pub fn height(&self) -> u32 {
        self.size.height
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.size.width as usize + x as usize
    }

    /// Pixel value; out-of-frame coordinates read as unset.
    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.size.width || y >= self.size.height {
            return false;
        }
        let i = self.index(x, y);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    /// Signed-coordinate read, convenient for neighbourhood walks.
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x <= u32::MAX as i64 && y <= u32::MAX as i64 && self.get(x as u32, y as u32)
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(
            x < self.size.width && y < self.size.height,
            "pixel ({x}, {y}) outside {}",
            self.size
        );
        let i = self.index(x, y);
        let bit = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= bit;
        } else {
            self.words[i / WORD] &= !bit;
        }
    }

    /// Set pixels `[x0, x1)` of row `y`, clipped to the frame.
    pub fn set_span(&mut self, y: u32, x0: u32, x1: u32) {
        if y >= self.size.height {
            return;
        }
        let x1 = x1.min(self.size.width);
        if x0 >= x1 {
            return;
        }
        let mut start = self.index(x0, y);
        let end = self.index(x1 - 1, y) + 1;
        while start < end {
            let word = start / WORD;
            let lo = start % WORD;
            let hi = (end - word * WORD).min(WORD);
            let bits = if hi - lo == WORD {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            self.words[word] |= bits;
            start = word * WORD + hi;
        }
    }

    /// Population count.
    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn check_size(&self, other: &BitMask) -> Result<(), GeometryError> {
        if self.size != other.size {
            return Err(GeometryError::SizeMismatch {
                left: self.size,
                right: other.size,
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BitMask) -> Result<u64, GeometryError> {
        self.check_size(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    pub fn union_count(&self, other: &BitMask) -> Result<u64, GeometryError> {
        self.check_size(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum())
    }

    pub fn and(&self, other: &BitMask) -> Result<BitMask, GeometryError> {
        self.check_size(other)?;
        Ok(BitMask {
            size: self.size,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn or(&self, other: &BitMask) -> Result<BitMask, GeometryError> {
        self.check_size(other)?;
        Ok(BitMask {
            size: self.size,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        })
    }

    /// Whether every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitMask) -> Result<bool, GeometryError> {
        self.check_size(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }

    /// Tight pixel extent `(x0, y0, x1, y1)` with exclusive upper bounds, or
    /// `None` for an empty mask.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.size.width as usize;
        let mut acc: Option<(u32, u32, u32, u32)> = None;
        for (wi, &word) in self.words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let i = wi * WORD + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let (x, y) = ((i % w) as u32, (i / w) as u32);
                acc = Some(match acc {
                    None => (x, y, x + 1, y + 1),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                });
            }
        }
        acc
    }

    /// Iterator over set pixels in raster order.
    pub fn ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.size.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let i = wi * WORD + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    /// Row-major iterator over every pixel value.
    pub fn iter_bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.size.pixel_count()).map(move |i| self.words[i / WORD] >> (i % WORD) & 1 == 1)
    }

    /// Build from a row-major bit iterator of exactly `width * height` items.
    pub fn from_bits(size: ImageSize, bits: impl IntoIterator<Item = bool>) -> Self {
        let mut m = Self::new(size);
        let n = size.pixel_count();
        let mut k = 0;
        for b in bits.into_iter().take(n) {
            if b {
                m.words[k / WORD] |= 1 << (k % WORD);
            }
            k += 1;
        }
        assert_eq!(k, n, "bit stream shorter than frame");
        m
    }
}

/// `|A ∩ B| / |A ∪ B|`; two empty masks score 1.0.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64, GeometryError> {
    let inter = a.intersection_count(b)?;
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.0.
pub fn mask_dice(a: &BitMask, b: &BitMask) -> Result<f64, GeometryError> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
