//! Axis-aligned box arithmetic.
//!
//! Boxes are half-open rectangles `[x, x + w) × [y, y + h)` in pixel units, so two boxes that
//! only share an edge do not intersect.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box given by its top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive sizes.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::invalid(format!("box has non-finite coordinates: {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!("box has non-positive size: {self:?}")));
        }
        Ok(())
    }

    /// Builds a box from corner coordinates; `None` when the span is empty.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Option<Self> {
        (x1 > x0 && y1 > y0).then(|| BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Clips to `[0, img_w) × [0, img_h)`.
    pub fn clip(&self, img_w: f64, img_h: f64) -> Option<BBox> {
        BBox::from_corners(
            self.x.max(0.0),
            self.y.max(0.0),
            self.right().min(img_w),
            self.bottom().min(img_h),
        )
    }

    /// Mirror image about the vertical axis of an image of width `img_w`.
    pub fn flip_horizontal(&self, img_w: f64) -> BBox {
        BBox {
            x: img_w - self.x - self.w,
            ..*self
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }
}

/// Ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(flatten)]
    pub bbox: BBox,
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion_ratio: Option<f64>,
}

impl Annotation {
    pub fn new(bbox: BBox, category: u32) -> Self {
        Annotation {
            bbox,
            category,
            occlusion_ratio: None,
        }
    }

    pub fn with_occlusion(bbox: BBox, category: u32, ratio: f64) -> Self {
        Annotation {
            bbox,
            category,
            occlusion_ratio: Some(ratio),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if let Some(r) = self.occlusion_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("occlusion ratio {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Detector output record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: BBox,
    pub category: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, category: u32, score: f64) -> Self {
        Detection { bbox, category, score }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!("detection score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// Overlap rectangle of two boxes, `None` when they are disjoint or only touch.
pub fn intersection_rect(a: &BBox, b: &BBox) -> Option<BBox> {
    BBox::from_corners(
        a.x.max(b.x),
        a.y.max(b.y),
        a.right().min(b.right()),
        a.bottom().min(b.bottom()),
    )
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        0.0
    } else {
        iw * ih
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of `target`'s area covered by the union of `covers`.
///
/// Computed exactly by coordinate compression: the target is cut along every cover edge that
/// falls inside it, and each elementary cell is tested once for membership in any cover.
pub fn covered_fraction(target: &BBox, covers: &[BBox]) -> f64 {
    let clipped: Vec<BBox> = covers.iter().filter_map(|c| intersection_rect(target, c)).collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs = Vec::with_capacity(2 * clipped.len() + 2);
    let mut ys = Vec::with_capacity(2 * clipped.len() + 2);
    xs.extend([target.x, target.right()]);
    ys.extend([target.y, target.bottom()]);
    for c in &clipped {
        xs.extend([c.x, c.right()]);
        ys.extend([c.y, c.bottom()]);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();

    let mut covered = 0.0;
    for yw in ys.windows(2) {
        let cy = 0.5 * (yw[0] + yw[1]);
        let row: Vec<&BBox> = clipped.iter().filter(|c| c.y <= cy && cy < c.bottom()).collect();
        if row.is_empty() {
            continue;
        }
        let mut row_len = 0.0;
        for xw in xs.windows(2) {
            let cx = 0.5 * (xw[0] + xw[1]);
            if row.iter().any(|c| c.x <= cx && cx < c.right()) {
                row_len += xw[1] - xw[0];
            }
        }
        covered += row_len * (yw[1] - yw[0]);
    }
    (covered / target.area()).clamp(0.0, 1.0)
}

/// Maps a box detected on a `fine_size` rescaled crop of `region` back into source coordinates,
/// clamped to the source image `bounds`. `None` if nothing remains after clamping.
pub fn remap_box(b: &BBox, region: &BBox, fine_size: (f64, f64), bounds: (f64, f64)) -> Option<BBox> {
    let sx = region.w / fine_size.0;
    let sy = region.h / fine_size.1;
    let mapped = BBox {
        x: region.x + b.x * sx,
        y: region.y + b.y * sy,
        w: b.w * sx,
        h: b.h * sy,
    };
    mapped.clip(bounds.0, bounds.1)
}

/// Inverse of [`remap_box`] without clamping: source coordinates into the rescaled crop frame.
pub fn to_region_frame(b: &BBox, region: &BBox, fine_size: (f64, f64)) -> BBox {
    let sx = fine_size.0 / region.w;
    let sy = fine_size.1 / region.h;
    BBox {
        x: (b.x - region.x) * sx,
        y: (b.y - region.y) * sy,
        w: b.w * sx,
        h: b.h * sy,
    }
}
