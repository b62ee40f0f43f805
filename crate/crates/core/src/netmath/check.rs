//! Self-check suite behind the `netcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    decouple_features, l_cls_terms, l_loc_terms, l_occ, l_total, oem_forward, pixel_shuffle, pixel_unshuffle,
    DecoupleWeights, LossWeights, OemWeights, Tensor4,
};
use crate::geometry::BBox;
use crate::occlusion_map::OcclusionMap;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// Runs the shape and gradient checks with weights and inputs derived from `seed`.
pub fn run_netcheck(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check_shuffle(&mut rng),
        check_oem(&mut rng),
        check_decouple(&mut rng),
        check_l_occ_gradient(&mut rng),
        check_weight_linearity(&mut rng),
        check_l_total(),
    ]
}

fn check_shuffle(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let x = Tensor4::random((2, 8, 3, 5), rng.random());
    let ok = pixel_shuffle(&x, 2)
        .and_then(|y| pixel_unshuffle(&y, 2))
        .map(|z| z == x)
        .unwrap_or(false);
    outcome("pixel_shuffle round trip", ok, "(2,8,3,5), r=2".into())
}

fn check_oem(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let f = Tensor4::random((1, 16, 4, 4), rng.random());
    let res = OemWeights::seeded(16, 2, rng.random()).and_then(|w| oem_forward(&f, 2, &w));
    match res {
        Ok(maps) => {
            let m = &maps[0];
            let ok = m.rows() == 16 && m.cols() == 16 && m.values().iter().all(|v| (0.0..=1.0).contains(v));
            outcome("oem_forward P=2 shape/range", ok, format!("4x4 -> {}x{}", m.rows(), m.cols()))
        }
        Err(e) => outcome("oem_forward P=2 shape/range", false, e.to_string()),
    }
}

fn check_decouple(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let f = Tensor4::random((1, 8, 16, 16), rng.random());
    let occ = OcclusionMap::from_values(16, 16, 1, (0..256).map(|_| rng.random_range(0.0..1.0)).collect())
        .expect("valid map");
    let res = DecoupleWeights::seeded(8, 8, 13, rng.random())
        .map(DecoupleWeights::with_identity_lk)
        .and_then(|w| decouple_features(&f, &occ, &w, 13));
    match res {
        Ok((cls, loc)) => outcome("decoupled paths, identity LK", cls == loc, format!("{:?}", cls.dims())),
        Err(e) => outcome("decoupled paths, identity LK", false, e.to_string()),
    }
}

fn check_l_occ_gradient(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let pred: Vec<f64> = (0..64).map(|_| rng.random_range(0.01..0.99)).collect();
        let truth: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = OcclusionMap::from_values(8, 8, 1, truth).expect("valid map");
        let p = OcclusionMap::from_values(8, 8, 1, pred.clone()).expect("valid map");
        let (_, grad) = l_occ(&p, &t).expect("same dims");
        for i in 0..64 {
            let mut plus = pred.clone();
            let mut minus = pred.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = l_occ(&OcclusionMap::from_values(8, 8, 1, plus).expect("valid"), &t).expect("dims").0;
            let lm = l_occ(&OcclusionMap::from_values(8, 8, 1, minus).expect("valid"), &t).expect("dims").0;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1e-6));
        }
    }
    outcome("l_occ gradient vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e}"))
}

fn check_weight_linearity(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let n = 16;
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let pred: Vec<BBox> = (0..n)
        .map(|_| BBox {
            x: rng.random_range(0.0..10.0),
            y: rng.random_range(0.0..10.0),
            w: rng.random_range(1.0..10.0),
            h: rng.random_range(1.0..10.0),
        })
        .collect();
    let gt: Vec<BBox> = pred
        .iter()
        .map(|b| BBox {
            x: b.x + rng.random_range(-2.0..2.0),
            ..*b
        })
        .collect();
    let ones = vec![1.0; n];
    let twos = vec![2.0; n];
    let ok = (|| -> crate::Result<bool> {
        let c1 = l_cls_terms(&probs, &labels, &ones)?;
        let c2 = l_cls_terms(&probs, &labels, &twos)?;
        let b1 = l_loc_terms(&pred, &gt, &ones, 1.0)?;
        let b2 = l_loc_terms(&pred, &gt, &twos, 1.0)?;
        Ok(c1.iter().zip(&c2).all(|(a, b)| 2.0 * a == *b) && b1.iter().zip(&b2).all(|(a, b)| 2.0 * a == *b))
    })()
    .unwrap_or(false);
    outcome("l_cls/l_loc linear in occlusion weight", ok, format!("{n} samples"))
}

fn check_l_total() -> CheckOutcome {
    let w = LossWeights::default();
    let fixtures = [((1.0, 1.0, 1.0), 2.5), ((0.0, 0.0, 0.0), 0.0), ((0.2, 0.5, 4.0), 2.7)];
    let ok = fixtures
        .iter()
        .all(|&((o, c, l), want)| (l_total(o, c, l, &w) - want).abs() < 1e-12);
    outcome("l_total default weights", ok, "lambda = {1.0, 1.0, 0.5}".into())
}
