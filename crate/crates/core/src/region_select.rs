//! Occlusion sub-region selection.
//!
//! The occlusion map is tiled into windows; windows whose summed confidence exceeds a threshold
//! are marked in a binary mask, the marked cells are grouped by k-means, and each group's
//! bounding rectangle is grown to a minimum size and shifted inside the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::occlusion_map::OcclusionMap;

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOLERANCE: f64 = 1e-6;

/// How the minimum region size is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinSizeRule {
    /// Larger of the absolute minimum and a quarter of the image side.
    #[default]
    Larger,
    /// Absolute minimum only.
    Absolute,
    /// A quarter of the image side only.
    QuarterImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectParams {
    /// Minimum region height in source pixels.
    pub min_region_h: f64,
    /// Minimum region width in source pixels.
    pub min_region_w: f64,
    /// Window height in map cells.
    pub window_h: usize,
    /// Window width in map cells.
    pub window_w: usize,
    /// A window is marked when its cell sum is strictly greater than this.
    pub threshold: f64,
    pub n_regions: usize,
    pub min_size_rule: MinSizeRule,
}

impl Default for SelectParams {
    fn default() -> Self {
        SelectParams {
            min_region_h: 300.0,
            min_region_w: 300.0,
            window_h: 40,
            window_w: 40,
            threshold: 45.0,
            n_regions: 3,
            min_size_rule: MinSizeRule::Larger,
        }
    }
}

impl SelectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_region_h > 0.0 && self.min_region_w > 0.0) {
            return Err(Error::invalid("minimum region size must be positive"));
        }
        if self.window_h == 0 || self.window_w == 0 {
            return Err(Error::invalid("window size must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(format!("window threshold must be positive, got {}", self.threshold)));
        }
        if self.n_regions == 0 {
            return Err(Error::invalid("n_regions must be at least 1"));
        }
        Ok(())
    }

    /// Minimum `(width, height)` for an image of the given size.
    pub fn min_size(&self, img_w: f64, img_h: f64) -> (f64, f64) {
        match self.min_size_rule {
            MinSizeRule::Larger => (self.min_region_w.max(img_w / 4.0), self.min_region_h.max(img_h / 4.0)),
            MinSizeRule::Absolute => (self.min_region_w, self.min_region_h),
            MinSizeRule::QuarterImage => (img_w / 4.0, img_h / 4.0),
        }
    }
}

/// Corrected occlusion sub-region in source-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    pub rect: BBox,
}

/// Binary grid aligned with an occlusion map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub stride: u32,
    pub img_w: u32,
    pub img_h: u32,
    pub cells: Vec<bool>,
}

impl Mask {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// `(row, col)` of every set cell in row-major order.
    pub fn set_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| (i / self.cols, i % self.cols))
            .collect()
    }

    /// Pixel rectangle of a cell, clipped to the image.
    pub fn cell_rect(&self, row: usize, col: usize) -> BBox {
        let s = self.stride as f64;
        let (x0, y0) = (col as f64 * s, row as f64 * s);
        BBox {
            x: x0,
            y: y0,
            w: ((col + 1) as f64 * s).min(self.img_w as f64) - x0,
            h: ((row + 1) as f64 * s).min(self.img_h as f64) - y0,
        }
    }
}

/// Marks every cell of each non-overlapping window (stepping from the origin, ragged edge
/// windows included) whose summed confidence strictly exceeds `params.threshold`.
pub fn occlusion_mask(map: &OcclusionMap, params: &SelectParams) -> Mask {
    let (rows, cols) = (map.rows(), map.cols());
    let (wh, ww) = (params.window_h.max(1), params.window_w.max(1));
    let windows: Vec<(usize, usize)> = (0..rows)
        .step_by(wh)
        .flat_map(|r| (0..cols).step_by(ww).map(move |c| (r, c)))
        .collect();
    let hot: Vec<(usize, usize)> = windows
        .into_par_iter()
        .filter(|&(r0, c0)| {
            let mut sum = 0.0;
            for r in r0..(r0 + wh).min(rows) {
                for c in c0..(c0 + ww).min(cols) {
                    sum += map.get(r, c);
                }
            }
            sum > params.threshold
        })
        .collect();

    let mut cells = vec![false; rows * cols];
    for (r0, c0) in hot {
        for r in r0..(r0 + wh).min(rows) {
            cells[r * cols + c0..r * cols + (c0 + ww).min(cols)].fill(true);
        }
    }
    Mask {
        rows,
        cols,
        stride: map.stride(),
        img_w: map.img_w(),
        img_h: map.img_h(),
        cells,
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dy, dx) = (a[0] - b[0], a[1] - b[1]);
    dy * dy + dx * dx
}

fn nearest(p: [f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, *c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Seeded k-means++ followed by Lloyd iterations. Returns the cluster index of every point.
///
/// Converges when no centroid moves by `1e-6` cells or more, or after 100 iterations. A
/// centroid left without members is moved to the point farthest from its nearest centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return vec![0; points.len()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, c));
        }
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        for (a, &p) in assign.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        let mut moved: f64 = 0.0;
        let mut next = centroids.clone();
        for j in 0..k {
            if counts[j] > 0 {
                next[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (i, nearest(p, &next).1))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                next[j] = points[far.0];
            }
        }
        for (a, b) in centroids.iter().zip(&next) {
            moved = moved.max(dist2(*a, *b).sqrt());
        }
        centroids = next;
        if moved < KMEANS_TOLERANCE {
            break;
        }
    }
    for (a, &p) in assign.iter_mut().zip(points) {
        *a = nearest(p, &centroids).0;
    }
    assign
}

/// Groups the set cells into at most `n` clusters and returns each cluster's bounding
/// rectangle in source pixels (cells scaled by the mask stride, clipped to the image).
pub fn cluster_mask(mask: &Mask, n: usize, seed: u64) -> Vec<BBox> {
    let cells = mask.set_cells();
    if cells.is_empty() || n == 0 {
        return Vec::new();
    }
    let points: Vec<[f64; 2]> = cells.iter().map(|&(r, c)| [r as f64, c as f64]).collect();
    let assign = kmeans(&points, n, seed);
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut bounds: Vec<Option<(usize, usize, usize, usize)>> = vec![None; k];
    for (&a, &(r, c)) in assign.iter().zip(&cells) {
        bounds[a] = Some(match bounds[a] {
            None => (r, r, c, c),
            Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
        });
    }
    bounds
        .into_iter()
        .flatten()
        .map(|(r0, r1, c0, c1)| {
            let top_left = mask.cell_rect(r0, c0);
            let bottom_right = mask.cell_rect(r1, c1);
            BBox {
                x: top_left.x,
                y: top_left.y,
                w: bottom_right.right() - top_left.x,
                h: bottom_right.bottom() - top_left.y,
            }
        })
        .collect()
}

fn fit_span(start: f64, len: f64, min_len: f64, limit: f64) -> (f64, f64) {
    let new_len = len.max(min_len).min(limit);
    let center = start + 0.5 * len;
    let lo = (center - 0.5 * new_len).clamp(0.0, limit - new_len);
    (lo, new_len)
}

/// Grows each rectangle about its centre to the minimum size and shifts it inside the image.
/// A side whose minimum exceeds the image spans the whole image. Order is preserved.
pub fn correct_regions(rects: &[BBox], img_w: f64, img_h: f64, params: &SelectParams) -> Vec<Region> {
    let (min_w, min_h) = params.min_size(img_w, img_h);
    rects
        .iter()
        .map(|r| {
            let (x, w) = fit_span(r.x, r.w, min_w, img_w);
            let (y, h) = fit_span(r.y, r.h, min_h, img_h);
            Region {
                rect: BBox { x, y, w, h },
            }
        })
        .collect()
}

/// Full selection: mask → k-means clusters → corrected regions in an `img_w × img_h` frame.
/// When the frame differs from the map's image size, cluster rectangles are rescaled first.
pub fn select_regions(map: &OcclusionMap, img_w: f64, img_h: f64, params: &SelectParams, seed: u64) -> Vec<Region> {
    let mask = occlusion_mask(map, params);
    let (sx, sy) = (img_w / map.img_w() as f64, img_h / map.img_h() as f64);
    let rects: Vec<BBox> = cluster_mask(&mask, params.n_regions, seed)
        .into_iter()
        .map(|r| BBox {
            x: r.x * sx,
            y: r.y * sy,
            w: r.w * sx,
            h: r.h * sy,
        })
        .collect();
    correct_regions(&rects, img_w, img_h, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn map_with(rows: usize, cols: usize, stride: u32, f: impl Fn(usize, usize) -> f64) -> OcclusionMap {
        let vals = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        OcclusionMap::from_values(cols as u32 * stride, rows as u32 * stride, stride, vals).unwrap()
    }

    #[test]
    fn mask_examples() {
        let p = SelectParams::default();
        assert!(occlusion_mask(&map_with(100, 100, 4, |_, _| 0.0), &p).is_empty());
        let ones = occlusion_mask(&map_with(100, 90, 4, |_, _| 1.0), &p);
        assert_eq!(ones.count(), 100 * 90);
    }

    #[test]
    fn window_sum_equal_to_threshold_is_not_marked() {
        let p = SelectParams::default();
        // 45 unit cells inside the first window, everything else zero
        let m = map_with(80, 80, 4, |r, c| if r < 5 && c < 9 { 1.0 } else { 0.0 });
        assert!(occlusion_mask(&m, &p).is_empty());
        let m = map_with(80, 80, 4, |r, c| if (r < 5 && c < 9) || (r == 5 && c == 0) { 1.0 } else { 0.0 });
        let mask = occlusion_mask(&m, &p);
        assert_eq!(mask.count(), 1600);
        assert!(mask.get(39, 39) && !mask.get(40, 0));
    }

    #[test]
    fn oversized_window_covers_whole_map() {
        let p = SelectParams { window_h: 50, window_w: 50, threshold: 1.0, ..SelectParams::default() };
        let m = map_with(10, 12, 1, |r, c| if r == 9 && c == 11 { 1.0 } else { 0.1 });
        assert_eq!(occlusion_mask(&m, &p).count(), 120);
    }

    #[test]
    fn ragged_windows_included() {
        let p = SelectParams { window_h: 4, window_w: 4, threshold: 0.5, ..SelectParams::default() };
        let m = map_with(10, 10, 1, |r, c| if r == 9 && c == 9 { 1.0 } else { 0.0 });
        let mask = occlusion_mask(&m, &p);
        assert_eq!(mask.count(), 4);
        assert!(mask.get(8, 8) && mask.get(9, 9));
    }

    fn mask_from(rows: usize, cols: usize, stride: u32, set: impl Fn(usize, usize) -> bool) -> Mask {
        Mask {
            rows,
            cols,
            stride,
            img_w: cols as u32 * stride,
            img_h: rows as u32 * stride,
            cells: (0..rows * cols).map(|i| set(i / cols, i % cols)).collect(),
        }
    }

    #[test]
    fn cluster_examples() {
        assert!(cluster_mask(&mask_from(8, 8, 1, |_, _| false), 3, 1).is_empty());

        let blobs = mask_from(60, 60, 2, |r, c| (r < 10 && c < 10) || ((40..50).contains(&r) && (45..55).contains(&c)));
        let mut rects = cluster_mask(&blobs, 2, 7);
        rects.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(rects, vec![BBox { x: 0.0, y: 0.0, w: 20.0, h: 20.0 }, BBox { x: 90.0, y: 80.0, w: 20.0, h: 20.0 }]);

        let one = mask_from(30, 30, 1, |r, c| (5..15).contains(&r) && (8..18).contains(&c));
        let rects = cluster_mask(&one, 3, 3);
        assert!(!rects.is_empty() && rects.len() <= 3);
        for (r, c) in one.set_cells() {
            let cell = one.cell_rect(r, c);
            assert!(rects.iter().any(|b| b.contains(&cell)));
        }
    }

    #[test]
    fn fewer_cells_than_clusters() {
        let m = mask_from(10, 10, 3, |r, c| (r, c) == (1, 1) || (r, c) == (7, 2));
        let rects = cluster_mask(&m, 5, 0);
        assert_eq!(rects.len(), 2);
        assert!(rects.iter().all(|r| r.w == 3.0 && r.h == 3.0));
    }

    #[test]
    fn correction_examples() {
        let p = SelectParams::default();
        let inside = BBox { x: 100.0, y: 100.0, w: 400.0, h: 350.0 };
        assert_eq!(correct_regions(&[inside], 1024.0, 1024.0, &p)[0].rect, inside);

        let center = BBox { x: 507.0, y: 507.0, w: 10.0, h: 10.0 };
        assert_eq!(
            correct_regions(&[center], 1024.0, 1024.0, &p)[0].rect,
            BBox { x: 362.0, y: 362.0, w: 300.0, h: 300.0 }
        );
        let corner = BBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 };
        assert_eq!(
            correct_regions(&[corner], 1024.0, 1024.0, &p)[0].rect,
            BBox { x: 0.0, y: 0.0, w: 300.0, h: 300.0 }
        );
        // quarter-image rule dominates on a large image
        let r = correct_regions(&[center], 2000.0, 1600.0, &p)[0].rect;
        assert_eq!((r.w, r.h), (500.0, 400.0));
        // minimum larger than the image: whole image
        let r = correct_regions(&[corner], 200.0, 250.0, &p)[0].rect;
        assert_eq!(r, BBox { x: 0.0, y: 0.0, w: 200.0, h: 250.0 });
        let abs = SelectParams { min_size_rule: MinSizeRule::Absolute, ..p };
        assert_eq!(correct_regions(&[center], 2000.0, 1600.0, &abs)[0].rect.w, 300.0);
        let quarter = SelectParams { min_size_rule: MinSizeRule::QuarterImage, ..p };
        assert_eq!(correct_regions(&[center], 1024.0, 1024.0, &quarter)[0].rect.w, 256.0);
    }

    #[test]
    fn select_examples() {
        let p = SelectParams::default();
        assert!(select_regions(&map_with(256, 256, 4, |_, _| 0.0), 1024.0, 1024.0, &p, 7).is_empty());

        let blob = |r: usize, c: usize, r0: usize, c0: usize| (r0..r0 + 12).contains(&r) && (c0..c0 + 12).contains(&c);
        let m = map_with(256, 256, 4, |r, c| {
            if blob(r, c, 10, 10) || blob(r, c, 200, 30) || blob(r, c, 100, 220) { 0.8 } else { 0.0 }
        });
        let regions = select_regions(&m, 1024.0, 1024.0, &p, 7);
        assert_eq!(regions.len(), 3);
        for (r0, c0) in [(10usize, 10usize), (200, 30), (100, 220)] {
            let b = BBox { x: c0 as f64 * 4.0, y: r0 as f64 * 4.0, w: 48.0, h: 48.0 };
            assert!(regions.iter().any(|r| r.rect.contains(&b)), "blob at {r0},{c0} not covered");
        }
    }

    #[test]
    fn region_json_shape() {
        let r = Region { rect: BBox { x: 1.0, y: 2.0, w: 3.0, h: 4.0 } };
        assert_eq!(serde_json::to_string(&[r]).unwrap(), r#"[{"x":1.0,"y":2.0,"w":3.0,"h":4.0}]"#);
    }

    fn arb_map() -> impl Strategy<Value = OcclusionMap> {
        (10usize..120, 10usize..120, 1u32..6, any::<u64>()).prop_map(|(rows, cols, stride, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(0..6))
                .map(|_| (rng.random_range(0.0..rows as f64), rng.random_range(0.0..cols as f64), rng.random_range(2.0..15.0)))
                .collect();
            map_with(rows, cols, stride, |r, c| {
                blobs.iter().map(|&(br, bc, s)| {
                    let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                    (-d2 / (2.0 * s * s)).exp()
                }).fold(0.0f64, f64::max)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn regions_inside_and_large_enough(m in arb_map(), seed in any::<u64>()) {
            let p = SelectParams { window_h: 8, window_w: 8, threshold: 4.0, ..SelectParams::default() };
            let (w, h) = (m.img_w() as f64, m.img_h() as f64);
            let (mw, mh) = p.min_size(w, h);
            for r in select_regions(&m, w, h, &p, seed) {
                prop_assert!(r.rect.x >= 0.0 && r.rect.y >= 0.0 && r.rect.right() <= w && r.rect.bottom() <= h);
                prop_assert!(r.rect.w >= mw.min(w) && r.rect.h >= mh.min(h));
            }
        }

        #[test]
        fn raising_threshold_never_adds_cells(m in arb_map(), t1 in 0.5..20.0f64, dt in 0.0..20.0f64) {
            let p1 = SelectParams { window_h: 6, window_w: 7, threshold: t1, ..SelectParams::default() };
            let p2 = SelectParams { threshold: t1 + dt, ..p1 };
            let (a, b) = (occlusion_mask(&m, &p1), occlusion_mask(&m, &p2));
            prop_assert!(a.cells.iter().zip(&b.cells).all(|(x, y)| *x || !*y));
        }
    }
}
