//! Test-double detector over synthetic scenes.
//!
//! Each object is found with probability `min(1, area / a_ref) · (1 − kappa · occlusion_ratio)`
//! measured in the detector's input frame, so small and occluded objects are missed more
//! often, and enlarging a crop raises their chance. The returned occlusion map is the
//! highlighted truth map of the scaled annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;
use super::{DetectorError, DetectorPort};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::occlusion_map::{generate_truth_map, MapParams, OcclusionMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleDetectorParams {
    pub seed: u64,
    /// Input-frame pixel area at which an unoccluded object is always found.
    pub a_ref: f64,
    /// Recall penalty per unit of occlusion ratio.
    pub kappa: f64,
    /// Box noise standard deviation as a fraction of the box side.
    pub jitter_sigma: f64,
    pub score_floor: f64,
    /// Standard deviation of multiplicative noise applied to the returned map.
    pub map_noise: f64,
    pub map: MapParams,
}

impl Default for OracleDetectorParams {
    fn default() -> Self {
        OracleDetectorParams {
            seed: 0,
            a_ref: 2000.0,
            kappa: 0.6,
            jitter_sigma: 0.03,
            score_floor: 0.05,
            map_noise: 0.0,
            map: MapParams::default(),
        }
    }
}

impl OracleDetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_ref > 0.0 && self.a_ref.is_finite()) {
            return Err(Error::invalid(format!("a_ref must be positive, got {}", self.a_ref)));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::invalid(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::invalid("jitter_sigma must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::invalid("score_floor must lie in [0, 1]"));
        }
        if !(self.map_noise >= 0.0 && self.map_noise.is_finite()) {
            return Err(Error::invalid("map_noise must be finite and >= 0"));
        }
        self.map.validate()
    }

    /// Detection probability of an object of `area` input pixels with the given occlusion ratio.
    pub fn detection_probability(&self, area: f64, occlusion_ratio: f64) -> f64 {
        (area / self.a_ref).min(1.0) * (1.0 - self.kappa * occlusion_ratio)
    }
}

/// SplitMix64 finalizer folded over `words`; stable across platforms and releases.
pub(crate) fn mix_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

fn view_key(scene: &SceneSpec, input_size: (u32, u32)) -> [u64; 6] {
    [
        scene.view.x.to_bits(),
        scene.view.y.to_bits(),
        scene.view.w.to_bits(),
        scene.view.h.to_bits(),
        input_size.0 as u64,
        input_size.1 as u64,
    ]
}

/// Simulated detection of `scene` at `input_size`. Draws depend only on the seed, the
/// object's id and the scene's view, so results are independent of call order.
pub fn oracle_detect(scene: &SceneSpec, input_size: (u32, u32), params: &OracleDetectorParams) -> Result<(Vec<Detection>, OcclusionMap)> {
    params.validate()?;
    if input_size.0 == 0 || input_size.1 == 0 {
        return Err(Error::invalid("detector input size must be positive"));
    }
    let scaled = scene.resized(input_size);
    let (fw, fh) = (input_size.0 as f64, input_size.1 as f64);
    let key = view_key(scene, input_size);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut dets = Vec::new();
    for obj in &scaled.objects {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.seed, obj.id as u64, key[0], key[1], key[2], key[3], key[4], key[5]]));
        let p = params.detection_probability(obj.bbox.area(), obj.occlusion_ratio);
        if rng.random::<f64>() >= p {
            continue;
        }
        let b = obj.bbox;
        let s = params.jitter_sigma;
        let jit = [
            s * b.w * normal.sample(&mut rng),
            s * b.h * normal.sample(&mut rng),
            s * b.w * normal.sample(&mut rng),
            s * b.h * normal.sample(&mut rng),
        ];
        let jittered = BBox {
            x: b.x + jit[0],
            y: b.y + jit[1],
            w: (b.w + jit[2]).max(0.1 * b.w),
            h: (b.h + jit[3]).max(0.1 * b.h),
        };
        let Some(bbox) = jittered.clip(fw, fh) else {
            continue;
        };
        let penalty = (jit[0].abs() / b.w + jit[1].abs() / b.h + jit[2].abs() / b.w + jit[3].abs() / b.h) / 4.0;
        let score = (p - penalty).max(params.score_floor).clamp(0.0, 1.0);
        dets.push(Detection::new(bbox, obj.category, score));
    }

    let map_params = MapParams {
        style: crate::occlusion_map::TruthStyle::Highlighted,
        ..params.map
    };
    let mut map = generate_truth_map(&scaled.annotations(), input_size.0, input_size.1, &map_params)?;
    if params.map_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.seed, u64::MAX, key[0], key[1], key[2], key[3], key[4], key[5]]));
        let noise = params.map_noise;
        map = map.map_values(|_, v| v * (1.0 + noise * normal.sample(&mut rng)));
    }
    Ok((dets, map))
}

/// [`DetectorPort`] backed by [`oracle_detect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDetector {
    pub params: OracleDetectorParams,
}

impl OracleDetector {
    pub fn new(params: OracleDetectorParams) -> Result<Self> {
        params.validate()?;
        Ok(OracleDetector { params })
    }
}

impl DetectorPort<SceneSpec> for OracleDetector {
    fn detect(&self, image: &SceneSpec, input_size: (u32, u32)) -> Result<(Vec<Detection>, OcclusionMap), DetectorError> {
        oracle_detect(image, input_size, &self.params).map_err(|e| Box::new(e) as DetectorError)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneSpec {
        SceneSpec::new(
            400,
            300,
            vec![
                (BBox { x: 10.0, y: 10.0, w: 30.0, h: 30.0 }, 1),
                (BBox { x: 25.0, y: 10.0, w: 30.0, h: 30.0 }, 2),
                (BBox { x: 200.0, y: 100.0, w: 50.0, h: 20.0 }, 3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn perfect_oracle_finds_everything_exactly() {
        let p = OracleDetectorParams { a_ref: 1e-9, kappa: 0.0, jitter_sigma: 0.0, ..Default::default() };
        let s = scene();
        let (dets, map) = oracle_detect(&s, (400, 300), &p).unwrap();
        assert_eq!(dets.len(), 3);
        for (d, o) in dets.iter().zip(&s.objects) {
            assert_eq!(d.bbox, o.bbox);
            assert_eq!(d.category, o.category);
        }
        assert!(!map.is_all_zero());
    }

    #[test]
    fn fully_occluded_never_found_with_full_penalty() {
        let s = SceneSpec::new(100, 100, vec![(BBox { x: 10.0, y: 10.0, w: 10.0, h: 10.0 }, 0), (BBox { x: 5.0, y: 5.0, w: 20.0, h: 20.0 }, 0)]).unwrap();
        assert_eq!(s.objects[0].occlusion_ratio, 1.0);
        for seed in 0..200 {
            let p = OracleDetectorParams { seed, a_ref: 1e-9, kappa: 1.0, jitter_sigma: 0.0, ..Default::default() };
            let (dets, _) = oracle_detect(&s, (100, 100), &p).unwrap();
            assert_eq!(dets.len(), 1);
            assert_eq!(dets[0].bbox, s.objects[1].bbox);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = OracleDetectorParams { seed: 3, a_ref: 900.0, ..Default::default() };
        let s = scene();
        assert_eq!(oracle_detect(&s, (512, 512), &p).unwrap(), oracle_detect(&s, (512, 512), &p).unwrap());
    }

    #[test]
    fn map_noise_stays_in_range() {
        let p = OracleDetectorParams { map_noise: 0.5, seed: 1, ..Default::default() };
        let (_, map) = oracle_detect(&scene(), (400, 300), &p).unwrap();
        assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_params() {
        let p = OracleDetectorParams { kappa: 1.5, ..Default::default() };
        assert!(oracle_detect(&scene(), (10, 10), &p).is_err());
    }
}
