//! Two-phase progressive refinement: a coarse pass over the whole image, occlusion-guided
//! sub-region selection, fine passes over rescaled crops, and an NMS merge of everything.

mod nms;
mod oracle;
mod scene;

pub use nms::{nms, NmsParams};
pub(crate) use nms::score_order;
pub use oracle::{oracle_detect, OracleDetector, OracleDetectorParams};
pub use scene::{occlusion_ratios, synth_corpus, synth_scene, SceneObject, SceneSpec, SynthParams};

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{remap_box, BBox, Detection};
use crate::occlusion_map::OcclusionMap;
use crate::region_select::{select_regions, Region, SelectParams};

pub type DetectorError = Box<dyn std::error::Error + Send + Sync>;

/// Detector plugged into the pipeline.
///
/// Implementations return detections in the `input_size` frame together with an occlusion
/// map covering that frame.
pub trait DetectorPort<I: ?Sized>: Sync {
    fn detect(&self, image: &I, input_size: (u32, u32)) -> Result<(Vec<Detection>, OcclusionMap), DetectorError>;
}

/// Image handle the pipeline can crop.
pub trait ImageSource: Sync {
    fn dims(&self) -> (u32, u32);

    /// `region` (source pixels) rescaled to `out_size`.
    fn crop(&self, region: &BBox, out_size: (u32, u32)) -> Self;
}

impl ImageSource for SceneSpec {
    fn dims(&self) -> (u32, u32) {
        (self.img_w, self.img_h)
    }

    fn crop(&self, region: &BBox, out_size: (u32, u32)) -> Self {
        SceneSpec::crop(self, region, out_size, 0.0)
    }
}

/// Which detector pass produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Coarse,
    Fine(usize),
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pass::Coarse => write!(f, "coarse"),
            Pass::Fine(q) => write!(f, "fine[{q}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TppParams {
    pub select: SelectParams,
    pub nms: NmsParams,
    /// Number of fine sub-images; overrides `select.n_regions`.
    pub n_sub: usize,
    pub coarse_size: (u32, u32),
    pub fine_size: (u32, u32),
}

impl Default for TppParams {
    fn default() -> Self {
        TppParams {
            select: SelectParams::default(),
            nms: NmsParams::default(),
            n_sub: 3,
            coarse_size: (1024, 1024),
            fine_size: (1024, 1024),
        }
    }
}

impl TppParams {
    pub fn validate(&self) -> Result<()> {
        self.select.validate()?;
        self.nms.validate()?;
        for (name, (w, h)) in [("coarse_size", self.coarse_size), ("fine_size", self.fine_size)] {
            if w == 0 || h == 0 {
                return Err(Error::invalid(format!("{name} must be positive, got {w}x{h}")));
            }
        }
        Ok(())
    }
}

/// Everything one pipeline run produced, before and after the merge.
#[derive(Debug, Clone, PartialEq)]
pub struct TppTrace {
    /// Coarse detections in source coordinates.
    pub coarse: Vec<Detection>,
    pub coarse_map: OcclusionMap,
    pub regions: Vec<Region>,
    /// Fine detections per region, in source coordinates.
    pub fine: Vec<Vec<Detection>>,
    pub merged: Vec<Detection>,
}

fn to_source(dets: Vec<Detection>, frame: &BBox, input: (u32, u32), src: (u32, u32)) -> Vec<Detection> {
    let input = (input.0 as f64, input.1 as f64);
    let bounds = (src.0 as f64, src.1 as f64);
    dets.into_iter()
        .filter_map(|d| {
            remap_box(&d.bbox, frame, input, bounds).map(|bbox| Detection { bbox, ..d })
        })
        .collect()
}

fn full_frame(dims: (u32, u32)) -> BBox {
    BBox {
        x: 0.0,
        y: 0.0,
        w: dims.0 as f64,
        h: dims.1 as f64,
    }
}

fn coarse_pass<I: ImageSource, D: DetectorPort<I>>(image: &I, detector: &D, params: &TppParams) -> Result<(Vec<Detection>, OcclusionMap)> {
    let (dets, map) = detector
        .detect(image, params.coarse_size)
        .map_err(|source| Error::Detector { pass: Pass::Coarse, source })?;
    let src = image.dims();
    Ok((to_source(dets, &full_frame(src), params.coarse_size, src), map))
}

/// Runs both phases and keeps the intermediate results.
///
/// Fine passes may run concurrently; their outputs are merged in the fixed order
/// coarse, fine₀, …, fine_{Q−1}, so the result does not depend on scheduling.
pub fn run_tpp_traced<I: ImageSource, D: DetectorPort<I>>(image: &I, detector: &D, params: &TppParams, seed: u64) -> Result<TppTrace> {
    params.validate()?;
    let src = image.dims();
    let (coarse, coarse_map) = coarse_pass(image, detector, params)?;

    let select = SelectParams {
        n_regions: params.n_sub,
        ..params.select
    };
    let regions = if params.n_sub == 0 {
        Vec::new()
    } else {
        select_regions(&coarse_map, src.0 as f64, src.1 as f64, &select, seed)
    };

    let fine: Vec<Vec<Detection>> = regions
        .par_iter()
        .enumerate()
        .map(|(q, region)| {
            let crop = image.crop(&region.rect, params.fine_size);
            let (dets, _) = detector
                .detect(&crop, params.fine_size)
                .map_err(|source| Error::Detector { pass: Pass::Fine(q), source })?;
            Ok(to_source(dets, &region.rect, params.fine_size, src))
        })
        .collect::<Result<_>>()?;

    let mut all = coarse.clone();
    for f in &fine {
        all.extend_from_slice(f);
    }
    let merged = nms(&all, &params.nms);
    Ok(TppTrace {
        coarse,
        coarse_map,
        regions,
        fine,
        merged,
    })
}

/// Coarse detection plus occlusion-guided fine detection, merged by NMS.
pub fn run_tpp<I: ImageSource, D: DetectorPort<I>>(image: &I, detector: &D, params: &TppParams, seed: u64) -> Result<Vec<Detection>> {
    Ok(run_tpp_traced(image, detector, params, seed)?.merged)
}

/// Single-phase baseline: the coarse pass alone, after NMS.
pub fn run_coarse<I: ImageSource, D: DetectorPort<I>>(image: &I, detector: &D, params: &TppParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let (coarse, _) = coarse_pass(image, detector, params)?;
    Ok(nms(&coarse, &params.nms))
}

/// Occlusion-selected crops of a scene as extra training samples.
///
/// Regions are selected on `map` (rescaled to the scene frame when sizes differ). Each crop is
/// rescaled to `fine_size`; annotations with less than `min_visible` of their area inside the
/// region are dropped and occlusion ratios are re-derived inside the crop.
pub fn augment_crops(
    scene: &SceneSpec,
    map: &OcclusionMap,
    select: &SelectParams,
    fine_size: (u32, u32),
    min_visible: f64,
    seed: u64,
) -> Result<Vec<SceneSpec>> {
    select.validate()?;
    if fine_size.0 == 0 || fine_size.1 == 0 {
        return Err(Error::invalid("fine size must be positive"));
    }
    if !(0.0..=1.0).contains(&min_visible) {
        return Err(Error::invalid(format!("visibility cutoff must lie in [0, 1], got {min_visible}")));
    }
    Ok(select_regions(map, scene.img_w as f64, scene.img_h as f64, select, seed)
        .into_iter()
        .map(|r| scene.crop(&r.rect, fine_size, min_visible))
        .collect())
}
