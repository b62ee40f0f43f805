//! Synthetic scenes: placed objects with geometric occlusion ratios, cropping, and a seeded
//! crowded-scene generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{covered_fraction, intersection_rect, to_region_frame, Annotation, BBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    /// Stable identity, preserved through crops.
    pub id: u32,
    pub bbox: BBox,
    pub category: u32,
    /// Fraction of the box covered by objects drawn after it.
    pub occlusion_ratio: f64,
}

/// Objects in draw order over an image; later objects occlude earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub img_w: u32,
    pub img_h: u32,
    pub objects: Vec<SceneObject>,
    /// Part of the root scene this scene shows, in root coordinates.
    pub view: BBox,
}

impl SceneSpec {
    /// Builds a root scene from boxes in draw order; ids are positions, ratios are derived.
    pub fn new(img_w: u32, img_h: u32, objects: Vec<(BBox, u32)>) -> Result<Self> {
        if img_w == 0 || img_h == 0 {
            return Err(Error::invalid(format!("scene dims must be positive, got {img_w}x{img_h}")));
        }
        for (b, _) in &objects {
            b.validate()?;
        }
        let tagged = objects.into_iter().enumerate().map(|(i, (b, c))| (i as u32, b, c)).collect();
        let full = BBox {
            x: 0.0,
            y: 0.0,
            w: img_w as f64,
            h: img_h as f64,
        };
        Ok(Self::with_ids(img_w, img_h, tagged, full))
    }

    /// Root scene from annotations in draw order. Given occlusion ratios are kept, missing
    /// ones are derived from the geometry.
    pub fn from_annotations(img_w: u32, img_h: u32, anns: &[Annotation]) -> Result<Self> {
        let mut scene = Self::new(img_w, img_h, anns.iter().map(|a| (a.bbox, a.category)).collect())?;
        for (o, a) in scene.objects.iter_mut().zip(anns) {
            if let Some(r) = a.occlusion_ratio {
                o.occlusion_ratio = r;
            }
        }
        Ok(scene)
    }

    fn with_ids(img_w: u32, img_h: u32, objects: Vec<(u32, BBox, u32)>, view: BBox) -> Self {
        let ratios = occlusion_ratios(&objects.iter().map(|o| o.1).collect::<Vec<_>>());
        SceneSpec {
            img_w,
            img_h,
            objects: objects
                .into_iter()
                .zip(ratios)
                .map(|((id, bbox, category), occlusion_ratio)| SceneObject {
                    id,
                    bbox,
                    category,
                    occlusion_ratio,
                })
                .collect(),
            view,
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.img_w, self.img_h)
    }

    pub fn full_frame(&self) -> BBox {
        BBox {
            x: 0.0,
            y: 0.0,
            w: self.img_w as f64,
            h: self.img_h as f64,
        }
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.objects
            .iter()
            .map(|o| Annotation::with_occlusion(o.bbox, o.category, o.occlusion_ratio))
            .collect()
    }

    /// The part of the scene inside `region`, rescaled to `out_size`.
    ///
    /// Objects are clipped to the region; those with less than `min_visible` of their area
    /// inside (or none at all) are dropped. Occlusion ratios are re-derived among the survivors.
    pub fn crop(&self, region: &BBox, out_size: (u32, u32), min_visible: f64) -> SceneSpec {
        let fine = (out_size.0 as f64, out_size.1 as f64);
        let kept = self
            .objects
            .iter()
            .filter_map(|o| {
                let clipped = intersection_rect(&o.bbox, region)?;
                if clipped.area() / o.bbox.area() < min_visible {
                    return None;
                }
                let b = to_region_frame(&clipped, region, fine);
                (b.w > 0.0 && b.h > 0.0).then_some((o.id, b, o.category))
            })
            .collect();
        let sx = self.view.w / self.img_w as f64;
        let sy = self.view.h / self.img_h as f64;
        let view = BBox {
            x: self.view.x + region.x * sx,
            y: self.view.y + region.y * sy,
            w: region.w * sx,
            h: region.h * sy,
        };
        Self::with_ids(out_size.0, out_size.1, kept, view)
    }

    /// Whole scene rescaled to `size`.
    pub fn resized(&self, size: (u32, u32)) -> SceneSpec {
        if size == self.dims() {
            return self.clone();
        }
        self.crop(&self.full_frame(), size, 0.0)
    }
}

/// Covered fraction of each box by the union of the boxes drawn after it.
pub fn occlusion_ratios(boxes: &[BBox]) -> Vec<f64> {
    (0..boxes.len())
        .map(|i| {
            let covers: Vec<BBox> = boxes[i + 1..]
                .iter()
                .filter(|b| intersection_rect(&boxes[i], b).is_some())
                .copied()
                .collect();
            covered_fraction(&boxes[i], &covers)
        })
        .collect()
}

/// Generator settings for crowded synthetic scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub img_w: u32,
    pub img_h: u32,
    pub clusters: usize,
    pub objects_per_cluster: usize,
    pub min_side: f64,
    pub max_side: f64,
    /// Standard deviation of object placement around a cluster centre, in pixels.
    pub cluster_spread: f64,
    pub quota_none: f64,
    pub quota_partial: f64,
    pub quota_heavy: f64,
    /// Covered-fraction range used for partially occluded objects.
    pub partial_range: (f64, f64),
    /// Covered-fraction range used for heavily occluded objects.
    pub heavy_range: (f64, f64),
    pub num_categories: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            img_w: 1920,
            img_h: 1080,
            clusters: 5,
            objects_per_cluster: 15,
            min_side: 16.0,
            max_side: 48.0,
            cluster_spread: 60.0,
            quota_none: 0.7,
            quota_partial: 0.2,
            quota_heavy: 0.1,
            partial_range: (0.1, 0.45),
            heavy_range: (0.55, 0.95),
            num_categories: 10,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.img_w == 0 || self.img_h == 0 {
            return Err(Error::invalid("synthetic image dims must be positive"));
        }
        if !(self.min_side > 0.0 && self.max_side >= self.min_side) {
            return Err(Error::invalid(format!(
                "object side range [{}, {}] is invalid",
                self.min_side, self.max_side
            )));
        }
        if self.max_side * 2.0 >= self.img_w.min(self.img_h) as f64 {
            return Err(Error::invalid("objects too large for the image"));
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::invalid("cluster spread must be positive"));
        }
        let quotas = [self.quota_none, self.quota_partial, self.quota_heavy];
        if quotas.iter().any(|q| !(0.0..=1.0).contains(q)) || (quotas.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("occlusion quotas {quotas:?} must be in [0, 1] and sum to 1")));
        }
        let (p0, p1) = self.partial_range;
        let (h0, h1) = self.heavy_range;
        if !(0.0 < p0 && p0 <= p1 && p1 <= 0.5) {
            return Err(Error::invalid("partial_range must lie inside (0, 0.5]"));
        }
        if !(0.5 < h0 && h0 <= h1 && h1 <= 1.0) {
            return Err(Error::invalid("heavy_range must lie inside (0.5, 1]"));
        }
        if self.num_categories == 0 {
            return Err(Error::invalid("num_categories must be positive"));
        }
        if self.clusters > 0 {
            let m = self.objects_per_cluster as f64;
            let occluded = (self.quota_partial * m).ceil() + (self.quota_heavy * m).ceil();
            // every occluded object needs its own unoccluded occluder in the same cluster
            if 2.0 * occluded > m {
                return Err(Error::invalid(format!(
                    "quota needs {occluded} occluded objects per cluster, but only {} occluders fit in {} objects",
                    (m - occluded).max(0.0),
                    self.objects_per_cluster
                )));
            }
        }
        Ok(())
    }
}

/// `count` scenes; scene `i` is generated from a seed derived from `(seed, i)`.
pub fn synth_corpus(params: &SynthParams, count: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    params.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| synth_scene(params, super::oracle::mix_seed(&[seed, i as u64])))
        .collect()
}

#[derive(Clone, Copy)]
enum Unit {
    Single,
    Pair { coverage: f64 },
}

fn stochastic_round(x: f64, rng: &mut ChaCha8Rng) -> usize {
    let base = x.floor();
    base as usize + usize::from(rng.random::<f64>() < x - base)
}

/// Seeded crowded scene: objects scattered around cluster centres, with occluded objects
/// produced by placing a later-drawn occluder that covers a chosen fraction of the target.
/// All other objects are kept disjoint, so every ratio is exactly the designed one.
pub fn synth_scene(params: &SynthParams, seed: u64) -> Result<SceneSpec> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (iw, ih) = (params.img_w as f64, params.img_h as f64);
    let mut placed: Vec<(BBox, u32)> = Vec::with_capacity(params.clusters * params.objects_per_cluster);

    for _ in 0..params.clusters {
        let m = params.objects_per_cluster;
        let n_heavy = stochastic_round(params.quota_heavy * m as f64, &mut rng);
        let n_partial = stochastic_round(params.quota_partial * m as f64, &mut rng);
        let n_pairs = n_heavy + n_partial;
        let mut units = Vec::with_capacity(m);
        for i in 0..n_pairs {
            let (lo, hi) = if i < n_heavy { params.heavy_range } else { params.partial_range };
            units.push(Unit::Pair {
                coverage: rng.random_range(lo..=hi),
            });
        }
        units.extend(std::iter::repeat_n(Unit::Single, m.saturating_sub(2 * n_pairs)));
        units.shuffle(&mut rng);

        let margin = (2.0 * params.cluster_spread).min(iw / 2.0 - params.max_side).max(params.max_side);
        let center = (
            rng.random_range(margin.min(iw - margin)..=(iw - margin).max(margin)),
            rng.random_range(margin.min(ih - margin)..=(ih - margin).max(margin)),
        );
        for unit in units {
            place_unit(unit, center, params, &mut placed, &mut rng)?;
        }
    }
    SceneSpec::new(params.img_w, params.img_h, placed)
}

const PLACEMENT_TRIES: usize = 400;

fn place_unit(
    unit: Unit,
    center: (f64, f64),
    params: &SynthParams,
    placed: &mut Vec<(BBox, u32)>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (iw, ih) = (params.img_w as f64, params.img_h as f64);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for attempt in 0..PLACEMENT_TRIES {
        let spread = params.cluster_spread * (1.0 + attempt as f64 / 40.0);
        let w = rng.random_range(params.min_side..=params.max_side);
        let h = rng.random_range(params.min_side..=params.max_side);
        let cx = center.0 + spread * unit_normal.sample(rng);
        let cy = center.1 + spread * unit_normal.sample(rng);
        let target = BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        };
        let mut new_boxes = vec![target];
        if let Unit::Pair { coverage } = unit {
            new_boxes.push(occluder_for(&target, coverage, params, rng));
        }
        let inside = new_boxes
            .iter()
            .all(|b| b.x >= 0.0 && b.y >= 0.0 && b.right() <= iw && b.bottom() <= ih);
        let clear = inside
            && placed
                .iter()
                .all(|(p, _)| new_boxes.iter().all(|b| intersection_rect(p, b).is_none()));
        if clear {
            for b in new_boxes {
                placed.push((b, rng.random_range(0..params.num_categories)));
            }
            return Ok(());
        }
    }
    Err(Error::invalid(format!(
        "could not place object near ({:.0}, {:.0}) after {PLACEMENT_TRIES} tries; scene too crowded",
        center.0, center.1
    )))
}

/// Box overlapping `target` from one side so that exactly `coverage` of it is hidden.
fn occluder_for(target: &BBox, coverage: f64, params: &SynthParams, rng: &mut ChaCha8Rng) -> BBox {
    let side = rng.random_range(0..4u8);
    let horizontal = side < 2;
    let (along, across) = if horizontal { (target.w, target.h) } else { (target.h, target.w) };
    let overlap = coverage * along;
    let len = rng.random_range(params.min_side..=params.max_side).max(overlap);
    let thick = across * rng.random_range(1.0..1.3);
    let offset = (thick - across) * rng.random::<f64>();
    let (a0, a_start) = if horizontal { (target.x, target.y) } else { (target.y, target.x) };
    let start = if side % 2 == 0 {
        a0 + along - overlap
    } else {
        a0 + overlap - len
    };
    let across_start = a_start - offset;
    if horizontal {
        BBox {
            x: start,
            y: across_start,
            w: len,
            h: thick,
        }
    } else {
        BBox {
            x: across_start,
            y: start,
            w: thick,
            h: len,
        }
    }
}
