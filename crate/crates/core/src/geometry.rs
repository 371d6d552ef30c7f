//! Box arithmetic and closed-form bounds relating IoU, anchor scale mismatch,
//! grid stride and the smallest object a strided anchor grid can localize.
//!
//! All coordinates are real-valued pixels with the origin at the top-left
//! corner and `y` growing downward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle given by its top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let bad = |reason| Error::InvalidBox { x, y, w, h, reason };
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(bad("coordinates must be finite"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(bad("width and height must be > 0"));
        }
        if !(w * h).is_finite() || w * h <= 0.0 {
            return Err(bad("area must be finite and > 0"));
        }
        Ok(Self { x, y, w, h })
    }

    /// Box of size `w`×`h` centered on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Box spanning `[x0, x1] × [y0, y1]`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Square root of the area.
    pub fn side(&self) -> f64 {
        self.area().sqrt()
    }

    /// Width over height.
    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    pub fn shape(&self) -> Shape {
        Shape {
            w: self.w,
            h: self.h,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Overlap with positive area, if any. Edge-touching boxes do not intersect.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 > x0 && y1 > y0 {
            BBox::from_corners(x0, y0, x1, y1).ok()
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw > 0.0 && ih > 0.0 {
            iw * ih
        } else {
            0.0
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Translate by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Multiply every coordinate by `factor`.
    pub fn scale(&self, factor: f64) -> Result<BBox> {
        BBox::new(
            self.x * factor,
            self.y * factor,
            self.w * factor,
            self.h * factor,
        )
    }

    /// Euclidean distance between the closest points of two boxes; zero when
    /// they overlap or touch.
    pub fn gap_distance(&self, other: &BBox) -> f64 {
        let (dx, dy) = self.axis_gaps(other);
        dx.hypot(dy)
    }

    /// Per-axis gap between the boxes (zero on an axis where the projections
    /// overlap or touch).
    pub fn axis_gaps(&self, other: &BBox) -> (f64, f64) {
        let dx = (other.x - self.right()).max(self.x - other.right()).max(0.0);
        let dy = (other.y - self.bottom()).max(self.y - other.bottom()).max(0.0);
        (dx, dy)
    }

    /// True when `self` lies inside `[0, width] × [0, height]`, allowing `tol`
    /// of floating-point slack on each edge.
    pub fn within_extent(&self, width: f64, height: f64, tol: f64) -> bool {
        self.x >= -tol && self.y >= -tol && self.right() <= width + tol && self.bottom() <= height + tol
    }
}

/// Width and height of a box without a position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub w: f64,
    pub h: f64,
}

impl Shape {
    pub fn new(w: f64, h: f64) -> Result<Self> {
        BBox::new(0.0, 0.0, w, h).map(|b| b.shape())
    }

    pub fn square(side: f64) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// IoU threshold `t` with `0 < t < 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct IouThreshold(f64);

impl IouThreshold {
    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 && t < 1.0 {
            Ok(Self(t))
        } else {
            Err(Error::InvalidThreshold(t))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Anchor grid stride in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Stride(f64);

impl Stride {
    pub fn new(d: f64) -> Result<Self> {
        if d.is_finite() && d > 0.0 {
            Ok(Self(d))
        } else {
            Err(Error::InvalidStride(d))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Intersection over union. Zero when the boxes share no positive area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    // areas from the same corner differences as the intersection, so a box
    // compared with itself gives exactly 1
    let extent = |r: &BBox| (r.right() - r.x) * (r.bottom() - r.y);
    let union = extent(a) + extent(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of a box contained in a corner-aligned box `alpha` times larger per
/// side with the same aspect ratio: `1 / alpha²`.
pub fn aligned_scale_iou(alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(Error::arg(
            "alpha",
            format!("{alpha} must be >= 1 (orient the ratio so the anchor is the larger box)"),
        ));
    }
    Ok(1.0 / (alpha * alpha))
}

/// IoU of two equal squares of side `side` displaced by half a stride along
/// both axes, the worst placement a stride-`d` grid can produce for a
/// scale-matched anchor.
///
/// Returns 0 once the displacement swallows the overlap (`side <= d/2`).
pub fn worst_case_displaced_iou(side: f64, stride: Stride) -> f64 {
    let d = stride.get();
    let overlap = side - d / 2.0;
    if overlap <= 0.0 {
        return 0.0;
    }
    overlap * overlap / (side * side + d * side - d * d / 4.0)
}

/// Numerical counterpart of [`worst_case_displaced_iou`]: the minimum IoU
/// between a square of side `side` and a copy shifted by `(dx, dy)`, over a
/// `step`-spaced lattice of `[0, d/2]^2` (endpoints included).
pub fn brute_force_worst_case(side: f64, stride: Stride, step: f64) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::arg("step", format!("{step} must be > 0")));
    }
    let gt = BBox::new(0.0, 0.0, side, side)?;
    let half = stride.get() / 2.0;
    let n = (half / step).ceil() as usize;
    let offset = |k: usize| (k as f64 * step).min(half);
    let mut worst = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let anchor = BBox {
                x: offset(i),
                y: offset(j),
                w: side,
                h: side,
            };
            worst = worst.min(gt.iou(&anchor));
        }
    }
    Ok(worst)
}

/// Smallest square side for which the worst-case displaced, scale-matched
/// anchor still reaches IoU `t` on a stride-`d` grid. Inverse of
/// [`worst_case_displaced_iou`] in `side`.
pub fn min_detectable_size(stride: Stride, t: IouThreshold) -> f64 {
    let d = stride.get();
    let t = t.get();
    (d * (t + 1.0) + d * (2.0 * t * (t + 1.0)).sqrt()) / (2.0 - 2.0 * t)
}

/// Next anchor scale in a progression where neighboring scales still reach
/// IoU `t` on each other's matched objects: `s / sqrt(t)`.
pub fn next_anchor_scale(scale: f64, t: IouThreshold) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::arg("scale", format!("{scale} must be > 0")));
    }
    Ok(scale / t.get().sqrt())
}

/// IoU of two boxes that share a center; the best any placement of these two
/// shapes can achieve.
pub fn concentric_iou(a: Shape, b: Shape) -> f64 {
    let inter = a.w.min(b.w) * a.h.min(b.h);
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}
