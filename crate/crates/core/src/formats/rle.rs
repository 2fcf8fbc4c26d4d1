//! Uncompressed run-length masks.
//!
//! Runs are taken over the row-major pixel scan and alternate background,
//! foreground, background, ... The first run is always background and may be
//! zero when the first pixel is set; every later run is non-zero.

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::geometry::{BitMask, ImageSize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub size: ImageSize,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Check the count invariants without decoding.
    pub fn validate(&self) -> Result<(), FormatError> {
        let sum: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.size.pixel_count() as u64;
        if sum != expected {
            return Err(FormatError::RleLength { sum, expected });
        }
        if let Some(index) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(FormatError::RleZeroRun { index: index + 1 });
        }
        Ok(())
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(m: &BitMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for bit in m.iter_bits() {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        size: m.size(),
        counts,
    }
}

pub fn rle_decode(r: &RleMask) -> Result<BitMask, FormatError> {
    r.validate()?;
    let mut m = BitMask::new(r.size);
    let w = r.size.width as u64;
    let mut pos = 0u64;
    for (i, &c) in r.counts.iter().enumerate() {
        let end = pos + c as u64;
        if i % 2 == 1 {
            // Foreground run may wrap across rows.
            let mut p = pos;
            while p < end {
                let (y, x) = (p / w, p % w);
                let row_end = ((y + 1) * w).min(end);
                m.set_span(y as u32, x as u32, (x + row_end - p) as u32);
                p = row_end;
            }
        }
        pos = end;
    }
    Ok(m)
}
