//! Occlusion confidence maps: truth generation from boxes, blur, and instance scoring.
//!
//! A map covers an `img_w × img_h` pixel image with square cells of `stride` pixels. Cell
//! `(r, c)` spans `[c·stride, (c+1)·stride) × [r·stride, (r+1)·stride)` clipped to the image.
//! A box touches a cell when the two overlap with positive area; this rule is shared by painting
//! and scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersection_rect, Annotation, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthStyle {
    /// Only pairwise box overlaps are painted.
    OcclusionOnly,
    /// Box interiors are painted at a base level and overlaps on top at full strength.
    Highlighted,
}

impl std::str::FromStr for TruthStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occlusion-only" | "occlusion_only" => Ok(TruthStyle::OcclusionOnly),
            "highlighted" | "highlighted-occlusion" => Ok(TruthStyle::Highlighted),
            other => Err(Error::invalid(format!(
                "unknown truth style '{other}', expected 'occlusion-only' or 'highlighted'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub stride: u32,
    pub style: TruthStyle,
    /// Level painted inside boxes for [`TruthStyle::Highlighted`].
    pub highlight_base: f64,
    /// Level painted on box overlaps.
    pub occlusion_value: f64,
    /// Blur standard deviation in map cells; 0 disables blurring.
    pub sigma: f64,
    pub kernel_radius: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            stride: 4,
            style: TruthStyle::Highlighted,
            highlight_base: 0.3,
            occlusion_value: 1.0,
            sigma: 2.0,
            kernel_radius: 5,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("map stride must be at least 1"));
        }
        for (name, v) in [("highlight_base", self.highlight_base), ("occlusion_value", self.occlusion_value)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("blur sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.sigma > 0.0 && self.kernel_radius == 0 {
            return Err(Error::invalid("blur kernel radius must be positive"));
        }
        Ok(())
    }
}

/// Strided grid of occlusion confidences in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMap {
    img_w: u32,
    img_h: u32,
    stride: u32,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl OcclusionMap {
    pub fn zeros(img_w: u32, img_h: u32, stride: u32) -> Result<Self> {
        let (rows, cols) = grid_dims(img_w, img_h, stride)?;
        Ok(OcclusionMap {
            img_w,
            img_h,
            stride,
            rows,
            cols,
            values: vec![0.0; rows * cols],
        })
    }

    pub fn from_values(img_w: u32, img_h: u32, stride: u32, values: Vec<f64>) -> Result<Self> {
        let (rows, cols) = grid_dims(img_w, img_h, stride)?;
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "map of {img_w}x{img_h} at stride {stride} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("map value {v} at index {i} outside [0, 1]")));
        }
        Ok(OcclusionMap {
            img_w,
            img_h,
            stride,
            rows,
            cols,
            values,
        })
    }

    pub fn img_w(&self) -> u32 {
        self.img_w
    }

    pub fn img_h(&self) -> u32 {
        self.img_h
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Applies `f` to every cell and clamps the result back into `[0, 1]`.
    pub fn map_values(mut self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        for (i, v) in self.values.iter_mut().enumerate() {
            let nv = f(i, *v);
            *v = if nv.is_nan() { 0.0 } else { nv.clamp(0.0, 1.0) };
        }
        self
    }

    pub fn same_shape(&self, other: &OcclusionMap) -> bool {
        self.img_w == other.img_w && self.img_h == other.img_h && self.stride == other.stride
    }

    /// Pixel rectangle of a cell, clipped to the image.
    pub fn cell_rect(&self, row: usize, col: usize) -> BBox {
        let s = self.stride as f64;
        let x0 = col as f64 * s;
        let y0 = row as f64 * s;
        BBox {
            x: x0,
            y: y0,
            w: ((col + 1) as f64 * s).min(self.img_w as f64) - x0,
            h: ((row + 1) as f64 * s).min(self.img_h as f64) - y0,
        }
    }

    /// Half-open row and column ranges of the cells a box touches, after clipping to the image.
    pub fn cell_span(&self, b: &BBox) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let clipped = b.clip(self.img_w as f64, self.img_h as f64)?;
        let s = self.stride as f64;
        let c0 = (clipped.x / s).floor() as usize;
        let c1 = ((clipped.right() / s).ceil() as usize).min(self.cols);
        let r0 = (clipped.y / s).floor() as usize;
        let r1 = ((clipped.bottom() / s).ceil() as usize).min(self.rows);
        (c0 < c1 && r0 < r1).then_some((r0..r1, c0..c1))
    }

    /// Mirror about the vertical image axis (cell columns reversed).
    pub fn flip_horizontal(&self) -> OcclusionMap {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.cols) {
            values.extend(row.iter().rev());
        }
        OcclusionMap {
            values,
            ..self.clone()
        }
    }

    /// Nearest-neighbour resample of the grid to `rows × cols` values.
    pub fn resample_nearest(&self, rows: usize, cols: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let si = (i * self.rows / rows.max(1)).min(self.rows - 1);
            for j in 0..cols {
                let sj = (j * self.cols / cols.max(1)).min(self.cols - 1);
                out.push(self.get(si, sj));
            }
        }
        out
    }

    fn paint(&mut self, b: &BBox, value: f64) {
        if let Some((rows, cols)) = self.cell_span(b) {
            for r in rows {
                let row = &mut self.values[r * self.cols..(r + 1) * self.cols];
                for v in &mut row[cols.clone()] {
                    *v = v.max(value);
                }
            }
        }
    }
}

fn grid_dims(img_w: u32, img_h: u32, stride: u32) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::invalid("map stride must be at least 1"));
    }
    if img_w == 0 || img_h == 0 {
        return Err(Error::invalid(format!("image dims must be positive, got {img_w}x{img_h}")));
    }
    Ok((img_h.div_ceil(stride) as usize, img_w.div_ceil(stride) as usize))
}

/// Builds an occlusion truth map from ground-truth boxes.
///
/// Every pairwise overlap of (image-clipped) boxes is painted at `occlusion_value`. The
/// highlighted style first paints all box interiors at `highlight_base`. The result is blurred
/// with `sigma`/`kernel_radius` and clamped to `[0, 1]`.
pub fn generate_truth_map(annotations: &[Annotation], img_w: u32, img_h: u32, params: &MapParams) -> Result<OcclusionMap> {
    params.validate()?;
    let mut map = OcclusionMap::zeros(img_w, img_h, params.stride)?;
    let boxes: Vec<BBox> = annotations
        .iter()
        .filter_map(|a| a.bbox.clip(img_w as f64, img_h as f64))
        .collect();

    if params.style == TruthStyle::Highlighted {
        for b in &boxes {
            map.paint(b, params.highlight_base);
        }
    }
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            if let Some(overlap) = intersection_rect(a, b) {
                map.paint(&overlap, params.occlusion_value);
            }
        }
    }
    Ok(gaussian_blur(&map, params.sigma, params.kernel_radius))
}

/// Normalized 1-D Gaussian kernel of length `2·radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with zero padding. `sigma == 0` returns the map unchanged.
pub fn gaussian_blur(map: &OcclusionMap, sigma: f64, kernel_radius: usize) -> OcclusionMap {
    if sigma <= 0.0 || kernel_radius == 0 {
        return map.clone();
    }
    let k = gaussian_kernel(sigma, kernel_radius);
    let r = kernel_radius as isize;
    let (rows, cols) = (map.rows as isize, map.cols as isize);

    let mut tmp = vec![0.0; map.values.len()];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let jj = j + t as isize - r;
                if (0..cols).contains(&jj) {
                    acc += w * map.values[(i * cols + jj) as usize];
                }
            }
            tmp[(i * cols + j) as usize] = acc;
        }
    }
    let mut out = vec![0.0; map.values.len()];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let ii = i + t as isize - r;
                if (0..rows).contains(&ii) {
                    acc += w * tmp[(ii * cols + j) as usize];
                }
            }
            out[(i * cols + j) as usize] = acc.clamp(0.0, 1.0);
        }
    }
    OcclusionMap {
        values: out,
        ..map.clone()
    }
}

/// Sum of the cells a box touches (box clipped to the image first).
pub fn instance_occlusion_score(b: &BBox, map: &OcclusionMap) -> f64 {
    let Some((rows, cols)) = map.cell_span(b) else {
        return 0.0;
    };
    rows.map(|r| map.values[r * map.cols..(r + 1) * map.cols][cols.clone()].iter().sum::<f64>())
        .sum()
}

/// Hard-example loss weight: 2 when the box's occlusion score reaches `thr_occ`, else 1.
pub fn occlusion_weight(b: &BBox, map: &OcclusionMap, thr_occ: f64) -> f64 {
    if instance_occlusion_score(b, map) >= thr_occ {
        2.0
    } else {
        1.0
    }
}
