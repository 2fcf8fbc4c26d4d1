//! Pixel-exact geometry: frames, polygons, boxes and binary masks.
//!
//! Conventions used throughout the crate:
//!
//! * Pixel `(x, y)` covers the unit square `[x, x+1) × [y, y+1)`; its center is
//!   `(x + 0.5, y + 0.5)`. `y` grows downwards.
//! * Polygons are closed implicitly (the last vertex connects to the first).
//! * Boxes are center-format `(cx, cy, w, h)`.

mod contour;
mod mask;
mod morph;
mod raster;

pub use contour::{label_components, trace_contours};
pub use mask::{mask_dice, mask_iou, BitMask};
pub use morph::{morph, MorphOp};
pub use raster::rasterize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("image size must be at least 1x1, got {width}x{height}")]
    EmptyFrame { width: u32, height: u32 },
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex {index} is not finite")]
    NonFiniteVertex { index: usize },
    #[error("box extents must be finite and non-negative")]
    InvalidBox,
    #[error("mask size mismatch: {left} vs {right}")]
    SizeMismatch { left: ImageSize, right: ImageSize },
}

/// Frame dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyFrame { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl std::fmt::Display for ImageSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// A simple closed outline with at least three finite vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if let Some(index) = vertices
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(GeometryError::NonFiniteVertex { index });
        }
        Ok(Self { vertices })
    }

    pub fn from_coords<I: IntoIterator<Item = (f64, f64)>>(
        coords: I,
    ) -> Result<Self, GeometryError> {
        Self::new(coords.into_iter().map(Point::from).collect())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Iterator over edges `(from, to)`, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Axis-aligned extent of the vertices as `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    }

    fn map(&self, f: impl Fn(Point) -> Point) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().copied().map(f).collect(),
        }
    }
}

/// Shoelace area, independent of orientation.
pub fn polygon_area(p: &Polygon) -> f64 {
    signed_area(p).abs()
}

/// Signed shoelace area. Positive for counter-clockwise vertex order in a
/// y-up frame, which is clockwise on screen.
pub fn signed_area(p: &Polygon) -> f64 {
    let twice: f64 = p.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
    twice / 2.0
}

/// Scale pixel coordinates into unit coordinates relative to the frame.
pub fn normalize(p: &Polygon, size: ImageSize) -> Polygon {
    let (w, h) = (size.width as f64, size.height as f64);
    // `+ 0.0` turns a negative zero into a positive one.
    p.map(|v| Point::new(v.x / w + 0.0, v.y / h + 0.0))
}

pub fn denormalize(p: &Polygon, size: ImageSize) -> Polygon {
    let (w, h) = (size.width as f64, size.height as f64);
    p.map(|v| Point::new(v.x * w, v.y * h))
}

/// Center-format bounding box in pixels (or unit coordinates, when carried
/// through a normalized interchange document).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let ok = [cx, cy, w, h].iter().all(|v| v.is_finite()) && w >= 0.0 && h >= 0.0;
        if !ok {
            return Err(GeometryError::InvalidBox);
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        Self {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Scale by per-axis factors (pixel <-> unit conversion).
    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            cx: self.cx * sx,
            cy: self.cy * sy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }

    pub fn to_unit(&self, size: ImageSize) -> BBox {
        self.scaled(1.0 / size.width as f64, 1.0 / size.height as f64)
    }

    pub fn to_pixels(&self, size: ImageSize) -> BBox {
        self.scaled(size.width as f64, size.height as f64)
    }
}

/// Intersection over union of two axis-aligned boxes.
///
/// Two zero-area boxes only score 1.0 when they coincide exactly.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0.0);
    let ih = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}
