//! Axis-aligned boxes in center form and the overlap primitives the losses
//! are built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle parameterized by its center and side lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box {
    /// Builds a box, rejecting non-positive or non-finite sides.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box without checking `w > 0 && h > 0`.
    pub const fn new_unchecked(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("cx", self.cx),
            ("cy", self.cy),
            ("w", self.w),
            ("h", self.h),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidBox { field, value: v });
            }
        }
        if self.w <= 0.0 {
            return Err(Error::InvalidBox {
                field: "w",
                value: self.w,
            });
        }
        if self.h <= 0.0 {
            return Err(Error::InvalidBox {
                field: "h",
                value: self.h,
            });
        }
        Ok(())
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Coordinates as `[cx, cy, w, h]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new_unchecked(a[0], a[1], a[2], a[3])
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Scales all four coordinates by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self::new_unchecked(self.cx * k, self.cy * k, self.w * k, self.h * k)
    }

    /// True if `other` lies inside `self` (boundaries may touch).
    pub fn contains(&self, other: &Box) -> bool {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        ax1 <= bx1 && ay1 <= by1 && bx2 <= ax2 && by2 <= ay2
    }
}

/// Smallest axis-aligned box covering two boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enclosure {
    pub c_w: f64,
    pub c_h: f64,
    /// Squared diagonal, `c_w² + c_h²`.
    pub c_sq: f64,
}

impl Enclosure {
    pub fn area(&self) -> f64 {
        self.c_w * self.c_h
    }
}

/// Overlap length of two closed intervals, clamped at zero.
fn overlap(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    (a2.min(b2) - a1.max(b1)).max(0.0)
}

pub fn intersection_area(a: &Box, b: &Box) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    overlap(ax1, ax2, bx1, bx2) * overlap(ay1, ay2, by1, by2)
}

/// Intersection over union. Touching or disjoint boxes give 0.
pub fn iou(a: &Box, b: &Box) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    // Areas from corners, so identical boxes give exactly 1.
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn enclosing(a: &Box, b: &Box) -> Enclosure {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let c_w = ax2.max(bx2) - ax1.min(bx1);
    let c_h = ay2.max(by2) - ay1.min(by1);
    Enclosure {
        c_w,
        c_h,
        c_sq: c_w * c_w + c_h * c_h,
    }
}

/// Squared distance between box centers.
pub fn center_dist_sq(a: &Box, b: &Box) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    dx * dx + dy * dy
}

/// Pixel-counting IOU estimate used to cross-check [`iou`].
///
/// The union enclosure is covered by a `resolution × resolution` grid and a
/// cell counts towards a box when its center lies inside the box.
pub fn raster_iou_oracle(a: &Box, b: &Box, resolution: usize) -> Result<f64> {
    if resolution < 16 {
        return Err(Error::ResolutionTooSmall(resolution));
    }
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let x0 = ax1.min(bx1);
    let y0 = ay1.min(by1);
    let dx = (ax2.max(bx2) - x0) / resolution as f64;
    let dy = (ay2.max(by2) - y0) / resolution as f64;

    // Column and row membership are separable, so count them once.
    let cols: Vec<(bool, bool)> = (0..resolution)
        .map(|i| {
            let x = x0 + (i as f64 + 0.5) * dx;
            (ax1 <= x && x <= ax2, bx1 <= x && x <= bx2)
        })
        .collect();
    let rows: Vec<(bool, bool)> = (0..resolution)
        .map(|j| {
            let y = y0 + (j as f64 + 0.5) * dy;
            (ay1 <= y && y <= ay2, by1 <= y && y <= by2)
        })
        .collect();

    let mut inter = 0u64;
    let mut union = 0u64;
    for &(ra, rb) in &rows {
        for &(ca, cb) in &cols {
            let in_a = ra && ca;
            let in_b = rb && cb;
            inter += u64::from(in_a && in_b);
            union += u64::from(in_a || in_b);
        }
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}
