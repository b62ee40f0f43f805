//! Acceptance gate. Every criterion runs at its stated tolerance and prints one PASS/FAIL
//! line; the process exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use occdet::eval::{ar_occ, coco_ap, dataset_stats, match_greedy, recall, EvalReport, OccBin, OcclusionBins};
use occdet::geometry::{covered_fraction, iou, BBox, Detection};
use occdet::netmath::{decouple_features, l_cls_terms, l_loc_terms, l_occ, l_total, oem_forward, pixel_shuffle, pixel_unshuffle};
use occdet::netmath::{DecoupleWeights, LossWeights, OemWeights, Tensor4};
use occdet::occlusion_map::{generate_truth_map, MapParams, OcclusionMap, TruthStyle};
use occdet::region_select::{occlusion_mask, select_regions, SelectParams};
use occdet::tpp::{nms, run_coarse, run_tpp, synth_corpus, DetectorError, DetectorPort, NmsParams, OracleDetector, OracleDetectorParams};
use occdet::tpp::{SceneSpec, SynthParams, TppParams};
use occdet::Annotation;

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let el = t.elapsed();
    o.detail = format!("{}; {:.2}s (limit {}s)", o.detail, el.as_secs_f64(), limit.as_secs());
    if el >= limit {
        o.passed = false;
    }
    o
}

// 1 ---------------------------------------------------------------------------------------

/// Grid of 1/8-pixel cells over [0, 100)²; box coordinates are drawn on the same lattice, so
/// counting cells gives exact areas.
const Q: f64 = 8.0;
const CANVAS: usize = 800;

fn lattice_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(8..=320) as f64 / Q;
    let h = rng.random_range(8..=320) as f64 / Q;
    let x = rng.random_range(0..=(CANVAS as i64 - (w * Q) as i64)) as f64 / Q;
    let y = rng.random_range(0..=(CANVAS as i64 - (h * Q) as i64)) as f64 / Q;
    BBox { x, y, w, h }
}

fn cell_range(b: &BBox) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let c0 = (b.x * Q).round() as usize;
    let r0 = (b.y * Q).round() as usize;
    (r0..r0 + (b.h * Q).round() as usize, c0..c0 + (b.w * Q).round() as usize)
}

/// ORs `bit` into the cells of `b`; `bit == 0` clears them.
fn paint(grid: &mut [u8], b: &BBox, bit: u8) {
    let (rows, cols) = cell_range(b);
    for r in rows {
        for v in &mut grid[r * CANVAS + cols.start..r * CANVAS + cols.end] {
            *v = if bit == 0 { 0 } else { *v | bit };
        }
    }
}

fn count_in(grid: &[u8], b: &BBox, pred: impl Fn(u8) -> bool) -> usize {
    let (rows, cols) = cell_range(b);
    rows.map(|r| grid[r * CANVAS + cols.start..r * CANVAS + cols.end].iter().filter(|&&v| pred(v)).count())
        .sum()
}

fn criterion_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut grid = vec![0u8; CANVAS * CANVAS];
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let boxes: Vec<BBox> = (0..n).map(|_| lattice_box(&mut rng)).collect();
        let (target, covers) = boxes.split_first().unwrap();

        for c in covers {
            paint(&mut grid, c, 1);
        }
        let raster = count_in(&grid, target, |v| v != 0) as f64 / count_in(&grid, target, |_| true) as f64;
        worst = worst.max((covered_fraction(target, covers) - raster).abs());
        for c in covers {
            paint(&mut grid, c, 0);
        }

        let other = covers.first().copied().unwrap_or_else(|| lattice_box(&mut rng));
        paint(&mut grid, target, 1);
        paint(&mut grid, &other, 2);
        let hull = BBox::from_corners(target.x.min(other.x), target.y.min(other.y), target.right().max(other.right()), target.bottom().max(other.bottom())).unwrap();
        let both = count_in(&grid, &hull, |v| v == 3) as f64;
        let any = count_in(&grid, &hull, |v| v != 0) as f64;
        paint(&mut grid, &hull, 0);
        worst = worst.max((iou(target, &other) - both / any).abs());
    }
    check(worst < 1e-3, format!("max |exact - raster| = {worst:.2e} over 1000 instances"))
}

// 2 ---------------------------------------------------------------------------------------

fn random_annotations(rng: &mut ChaCha8Rng, img: (u32, u32)) -> Vec<Annotation> {
    let n = rng.random_range(0..12);
    (0..n)
        .map(|_| {
            let w = rng.random_range(4.0..80.0);
            let h = rng.random_range(4.0..80.0);
            // allow boxes to stick out of the image; generation clips them
            let x = rng.random_range(-20.0..img.0 as f64 - 10.0);
            let y = rng.random_range(-20.0..img.1 as f64 - 10.0);
            Annotation::new(BBox { x, y, w, h }, 0)
        })
        .collect()
}

/// Cells touching any pairwise overlap of the clipped boxes with positive area.
fn brute_overlap_cells(anns: &[Annotation], img: (u32, u32), stride: u32) -> Vec<bool> {
    let clipped: Vec<BBox> = anns.iter().filter_map(|a| a.bbox.clip(img.0 as f64, img.1 as f64)).collect();
    let mut inters = Vec::new();
    for i in 0..clipped.len() {
        for j in i + 1..clipped.len() {
            let (a, b) = (clipped[i], clipped[j]);
            let (x0, y0) = (a.x.max(b.x), a.y.max(b.y));
            let (x1, y1) = (a.right().min(b.right()), a.bottom().min(b.bottom()));
            if x1 > x0 && y1 > y0 {
                inters.push((x0, y0, x1, y1));
            }
        }
    }
    let rows = img.1.div_ceil(stride) as usize;
    let cols = img.0.div_ceil(stride) as usize;
    let s = stride as f64;
    let mut out = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (cx0, cy0) = (c as f64 * s, r as f64 * s);
            let (cx1, cy1) = ((cx0 + s).min(img.0 as f64), (cy0 + s).min(img.1 as f64));
            out[r * cols + c] = inters.iter().any(|&(x0, y0, x1, y1)| x0.max(cx0) < x1.min(cx1) && y0.max(cy0) < y1.min(cy1));
        }
    }
    out
}

fn criterion_truth_map() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = MapParams {
        style: TruthStyle::OcclusionOnly,
        sigma: 0.0,
        ..MapParams::default()
    };
    let mut support_bad = 0;
    let mut flip_bad = 0;
    for _ in 0..200 {
        let img = (rng.random_range(10..60) * 4, rng.random_range(10..60) * 4);
        let anns = random_annotations(&mut rng, img);
        let map = generate_truth_map(&anns, img.0, img.1, &params).unwrap();
        let got: Vec<bool> = map.values().iter().map(|&v| v != 0.0).collect();
        if got != brute_overlap_cells(&anns, img, params.stride) {
            support_bad += 1;
        }
        let flipped: Vec<Annotation> = anns
            .iter()
            .map(|a| Annotation {
                bbox: a.bbox.flip_horizontal(img.0 as f64),
                ..*a
            })
            .collect();
        let fmap = generate_truth_map(&flipped, img.0, img.1, &params).unwrap();
        if fmap != map.flip_horizontal() {
            flip_bad += 1;
        }
    }
    check(
        support_bad == 0 && flip_bad == 0,
        format!("200 sets: support mismatches {support_bad}, flip mismatches {flip_bad}"),
    )
}

// 3 ---------------------------------------------------------------------------------------

fn map8(vals: Vec<f64>) -> OcclusionMap {
    OcclusionMap::from_values(8, 8, 1, vals).unwrap()
}

fn criterion_losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p: Vec<f64> = (0..64).map(|_| rng.random_range(0.01..0.99)).collect();
        let t: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..=1.0)).collect();
        let truth = map8(t);
        let (_, grad) = l_occ(&map8(p.clone()), &truth).unwrap();
        for k in 0..64 {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (l_occ(&map8(up), &truth).unwrap().0 - l_occ(&map8(dn), &truth).unwrap().0) / (2.0 * h);
            worst = worst.max((grad[k] - fd).abs() / grad[k].abs().max(1e-6));
        }
    }

    // per-sample linearity in the occlusion weight
    let n = 32;
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let pred: Vec<BBox> = (0..n).map(|_| BBox { x: rng.random_range(0.0..50.0), y: rng.random_range(0.0..50.0), w: 10.0, h: 12.0 }).collect();
    let gt: Vec<BBox> = pred.iter().map(|b| BBox { x: b.x + rng.random_range(-3.0..3.0), y: b.y + rng.random_range(-0.5..0.5), ..*b }).collect();
    let ones = vec![1.0; n];
    let w: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 2.0 } else { 1.0 }).collect();
    let (c1, cw) = (l_cls_terms(&probs, &labels, &ones).unwrap(), l_cls_terms(&probs, &labels, &w).unwrap());
    let (l1, lw) = (l_loc_terms(&pred, &gt, &ones, 1.0).unwrap(), l_loc_terms(&pred, &gt, &w, 1.0).unwrap());
    let linear = (0..n).all(|i| cw[i] == w[i] * c1[i] && lw[i] == w[i] * l1[i]);

    // l_total against hand arithmetic with lambda = {1.0, 1.0, 0.5}
    let lw_default = LossWeights::default();
    let fixtures = [((0.125, 0.75, 2.0), 1.875), ((0.0, 1.5, 0.5), 1.75), ((0.25, 0.0, 3.0), 1.75)];
    let totals_ok = (lw_default.lambda_occ, lw_default.lambda_cls, lw_default.lambda_loc) == (1.0, 1.0, 0.5)
        && fixtures.iter().all(|&((o, c, l), want)| l_total(o, c, l, &lw_default) == want);
    // one fixture built from the loss functions themselves: l_occ of a 2x2 pair is 0.125
    let small = OcclusionMap::from_values(2, 2, 1, vec![0.5; 4]).unwrap();
    let small_t = OcclusionMap::from_values(2, 2, 1, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
    let occ_ok = l_occ(&small, &small_t).unwrap().0 == 0.125;

    check(
        worst < 1e-5 && linear && totals_ok && occ_ok,
        format!("max FD rel err {worst:.2e} over 50 maps; linearity {linear}; l_total fixtures {}", totals_ok && occ_ok),
    )
}

// 4 ---------------------------------------------------------------------------------------

fn blob_map(rng: &mut ChaCha8Rng, img: (u32, u32)) -> OcclusionMap {
    let map = OcclusionMap::zeros(img.0, img.1, 4).unwrap();
    let (rows, cols) = (map.rows(), map.cols());
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(0..6))
        .map(|_| {
            (
                rng.random_range(0.0..rows as f64),
                rng.random_range(0.0..cols as f64),
                rng.random_range(3.0..25.0),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    let noise = rng.random_range(0.0..0.05);
    let mut nrng = ChaCha8Rng::seed_from_u64(rng.random());
    map.map_values(|i, _| {
        let (r, c) = ((i / cols) as f64, (i % cols) as f64);
        let v: f64 = blobs
            .iter()
            .map(|&(br, bc, s, a)| a * (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
            .sum();
        v + noise * nrng.random::<f64>()
    })
}

/// 8-connected components of the mask.
fn components(mask: &occdet::region_select::Mask) -> usize {
    let mut seen = vec![false; mask.rows * mask.cols];
    let mut n = 0;
    for start in 0..seen.len() {
        if seen[start] || !mask.cells[start] {
            continue;
        }
        n += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / mask.cols) as i64, (i % mask.cols) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= mask.rows as i64 || nc >= mask.cols as i64 {
                        continue;
                    }
                    let j = nr as usize * mask.cols + nc as usize;
                    if mask.cells[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    n
}

fn criterion_region_select() -> Outcome {
    let params = SelectParams::default();
    let defaults_ok = (params.min_region_h, params.min_region_w, params.window_h, params.window_w, params.threshold, params.n_regions)
        == (300.0, 300.0, 40, 40, 45.0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut bounds_bad, mut coverage_bad, mut coverage_checked, mut nondeterministic) = (0, 0, 0, 0);
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let mut maps = Vec::new();
    for _ in 0..500 {
        let img = (rng.random_range(1200..2400u32), rng.random_range(1200..2000u32));
        maps.push((blob_map(&mut rng, img), img, rng.random::<u64>()));
    }
    for (map, img, seed) in &maps {
        let (w, h) = (img.0 as f64, img.1 as f64);
        let regions = select_regions(map, w, h, &params, *seed);
        let (min_w, min_h) = params.min_size(w, h);
        for r in &regions {
            let b = r.rect;
            if b.x < 0.0 || b.y < 0.0 || b.right() > w + 1e-9 || b.bottom() > h + 1e-9 || b.w < min_w - 1e-9 || b.h < min_h - 1e-9 {
                bounds_bad += 1;
            }
        }
        let mask = occlusion_mask(map, &params);
        if !mask.is_empty() && params.n_regions >= components(&mask) {
            coverage_checked += 1;
            let cells = mask.set_cells();
            let inside = cells
                .iter()
                .filter(|&&(r, c)| {
                    let cell = mask.cell_rect(r, c);
                    regions.iter().any(|g| g.rect.contains(&cell))
                })
                .count();
            if (inside as f64) < 0.95 * cells.len() as f64 {
                coverage_bad += 1;
            }
        }
        let again = select_regions(map, w, h, &params, *seed);
        let one = pool1.install(|| select_regions(map, w, h, &params, *seed));
        let four = pool4.install(|| select_regions(map, w, h, &params, *seed));
        if again != regions || one != regions || four != regions {
            nondeterministic += 1;
        }
    }

    // window sum exactly at the threshold is not selected; one more unit is
    let boundary = |extra: bool| {
        OcclusionMap::zeros(640, 640, 4).unwrap().map_values(|i, _| {
            let (r, c) = (i / 160, i % 160);
            if (r < 5 && c < 9) || (extra && r == 5 && c == 0) { 1.0 } else { 0.0 }
        })
    };
    let boundary_ok = occlusion_mask(&boundary(false), &params).is_empty() && !occlusion_mask(&boundary(true), &params).is_empty();

    check(
        defaults_ok && bounds_bad == 0 && coverage_bad == 0 && nondeterministic == 0 && boundary_ok,
        format!(
            "500 maps: out-of-bounds/undersized {bounds_bad}, coverage failures {coverage_bad}/{coverage_checked} checked, \
             nondeterministic {nondeterministic}, boundary case {boundary_ok}"
        ),
    )
}

// 5 ---------------------------------------------------------------------------------------

fn brute_nms(dets: &[Detection], p: &NmsParams) -> Vec<Detection> {
    let mut remaining: Vec<(usize, Detection)> = dets.iter().copied().enumerate().collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for j in 1..remaining.len() {
            let (bi, bd) = remaining[best];
            let (ji, jd) = remaining[j];
            if jd.score > bd.score || (jd.score == bd.score && ji < bi) {
                best = j;
            }
        }
        let (_, top) = remaining.remove(best);
        out.push(top);
        remaining.retain(|(_, d)| d.category != top.category || iou(&d.bbox, &top.bbox) <= p.iou_threshold);
    }
    out.truncate(p.max_detections);
    out
}

fn criterion_nms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut mismatch, mut not_idem) = (0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(0..=50);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let b = BBox {
                    x: rng.random_range(0.0..80.0),
                    y: rng.random_range(0.0..80.0),
                    w: rng.random_range(2.0..30.0),
                    h: rng.random_range(2.0..30.0),
                };
                // coarse scores so that ties occur
                Detection::new(b, rng.random_range(0..3), rng.random_range(0..20) as f64 / 20.0)
            })
            .collect();
        let p = NmsParams {
            iou_threshold: rng.random_range(0.1..0.9),
            max_detections: rng.random_range(1..60),
        };
        let got = nms(&dets, &p);
        if got != brute_nms(&dets, &p) {
            mismatch += 1;
        }
        if nms(&got, &p) != got {
            not_idem += 1;
        }
    }
    check(mismatch == 0 && not_idem == 0, format!("1000 sets: reference mismatches {mismatch}, idempotence failures {not_idem}"))
}

// 6 ---------------------------------------------------------------------------------------

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_tpp_direction() -> Outcome {
    let scenes = synth_corpus(&SynthParams::default(), 100, 7).unwrap();
    let oracle = OracleDetector::new(OracleDetectorParams::default()).unwrap();
    let params = TppParams::default();
    let bins = OcclusionBins::default();
    let (mut tpp_heavy, mut coarse_heavy, mut tpp_no, mut coarse_no) = (vec![], vec![], vec![], vec![]);
    let (mut heavy_found, mut heavy_total) = (0, 0);
    for (i, s) in scenes.iter().enumerate() {
        let gts = vec![s.annotations()];
        let fine = run_tpp(s, &oracle, &params, i as u64).unwrap();
        let coarse = run_coarse(s, &oracle, &params).unwrap();
        let rt = ar_occ(&[fine], &gts, &bins, 0.5, 500).unwrap();
        let rc = ar_occ(&[coarse], &gts, &bins, 0.5, 500).unwrap();
        if let (Some(a), Some(b)) = (rt.recall(OccBin::Heavy), rc.recall(OccBin::Heavy)) {
            tpp_heavy.push(a);
            coarse_heavy.push(b);
        }
        if let (Some(a), Some(b)) = (rt.recall(OccBin::No), rc.recall(OccBin::No)) {
            tpp_no.push(a);
            coarse_no.push(b);
        }
        heavy_found += rc.get(OccBin::Heavy).matched;
        heavy_total += rc.get(OccBin::Heavy).total;
    }
    let coarse_heavy_recall = heavy_found as f64 / heavy_total as f64;
    let gain = mean(&tpp_heavy) - mean(&coarse_heavy);
    let no_change = mean(&tpp_no) - mean(&coarse_no);
    check(
        coarse_heavy_recall < 0.5 && gain >= 0.15 && no_change >= -0.01,
        format!(
            "coarse heavy recall {coarse_heavy_recall:.3}; AR_occ heavy {:.3} -> {:.3} (gain {gain:+.3}); no-occlusion {:.3} -> {:.3} ({no_change:+.3})",
            mean(&coarse_heavy),
            mean(&tpp_heavy),
            mean(&coarse_no),
            mean(&tpp_no)
        ),
    )
}

// 7 ---------------------------------------------------------------------------------------

/// Oracle detections with an all-zero occlusion map.
struct BlindOracle(OracleDetector);

impl DetectorPort<SceneSpec> for BlindOracle {
    fn detect(&self, image: &SceneSpec, input_size: (u32, u32)) -> Result<(Vec<Detection>, OcclusionMap), DetectorError> {
        let (dets, map) = self.0.detect(image, input_size)?;
        Ok((dets, OcclusionMap::zeros(map.img_w(), map.img_h(), map.stride())?))
    }
}

fn criterion_degradation() -> Outcome {
    let scenes = synth_corpus(&SynthParams::default(), 50, 11).unwrap();
    let det = BlindOracle(OracleDetector::new(OracleDetectorParams::default()).unwrap());
    let params = TppParams::default();
    let differing = scenes
        .iter()
        .filter(|s| run_tpp(*s, &det, &params, 3).unwrap() != run_coarse(*s, &det, &params).unwrap())
        .count();
    check(differing == 0, format!("50 scenes: {differing} differ from nms(coarse)"))
}

// 8 ---------------------------------------------------------------------------------------

fn criterion_evaluator() -> Outcome {
    let scenes = synth_corpus(&SynthParams::default(), 100, 13).unwrap();
    let gts: Vec<Vec<Annotation>> = scenes.iter().map(SceneSpec::annotations).collect();
    let perfect: Vec<Vec<Detection>> = gts
        .iter()
        .map(|g| g.iter().enumerate().map(|(i, a)| Detection::new(a.bbox, a.category, 1.0 - i as f64 * 1e-3)).collect())
        .collect();
    let ap = coco_ap(&perfect, &gts, 500).unwrap();

    let oracle = OracleDetector::new(OracleDetectorParams::default()).unwrap();
    let mut partition_bad = 0;
    for s in &scenes {
        let (dets, _) = oracle.detect(s, s.dims()).unwrap();
        let g = vec![s.annotations()];
        let d = vec![dets];
        let occ = ar_occ(&d, &g, &OcclusionBins::default(), 0.5, 500).unwrap();
        let plain = recall(&d, &g, 0.5, 500).unwrap();
        let weighted: f64 = OccBin::ALL
            .iter()
            .filter_map(|&b| occ.recall(b).map(|r| r * occ.get(b).total as f64))
            .sum::<f64>();
        let direct = match_greedy(&d[0], &g[0], 0.5).matched_gt();
        if occ.overall() != plain || weighted.round() as usize != plain.matched || direct != plain.matched {
            partition_bad += 1;
        }
    }

    let stats = dataset_stats(&gts, 0.5);
    let objects: usize = gts.iter().map(Vec::len).sum();
    let mut pairs = 0usize;
    for g in &gts {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                pairs += (iou(&g[i].bbox, &g[j].bbox) > 0.5) as usize;
            }
        }
    }
    let stats_ok = stats.objects_per_image == objects as f64 / 100.0 && stats.overlaps_per_image == pairs as f64 / 100.0;

    check(
        ap == Some(1.0) && partition_bad == 0 && stats_ok,
        format!(
            "perfect AP {ap:?}; partition identity failures {partition_bad}/100; stats ({}, {}) vs oracle ({}, {})",
            stats.objects_per_image,
            stats.overlaps_per_image,
            objects as f64 / 100.0,
            pairs as f64 / 100.0
        ),
    )
}

// 9 ---------------------------------------------------------------------------------------

fn criterion_netmath() -> Outcome {
    let f = Tensor4::random((2, 16, 6, 5), 9);
    let maps = OemWeights::seeded(16, 2, 10).and_then(|w| oem_forward(&f, 2, &w)).unwrap();
    let shape_ok = maps.len() == 2 && maps.iter().all(|m| m.rows() == 24 && m.cols() == 20);
    let range_ok = maps.iter().all(|m| m.values().iter().all(|v| (0.0..=1.0).contains(v)));

    let x = Tensor4::random((2, 12, 5, 7), 11);
    let shuffle_ok = pixel_shuffle(&x, 2).and_then(|y| pixel_unshuffle(&y, 2)).unwrap() == x;

    let feat = Tensor4::random((1, 8, 12, 12), 12);
    let occ = OcclusionMap::zeros(48, 48, 4).unwrap().map_values(|i, _| (i % 7) as f64 / 7.0);
    let w = DecoupleWeights::seeded(8, 6, 7, 13).unwrap().with_identity_lk();
    let (cls, loc) = decouple_features(&feat, &occ, &w, 7).unwrap();
    let decouple_ok = cls == loc;

    check(
        shape_ok && range_ok && shuffle_ok && decouple_ok,
        format!("oem P=2 6x5 -> 24x20 {shape_ok}, range {range_ok}; shuffle round trip {shuffle_ok}; identity-LK paths equal {decouple_ok}"),
    )
}

// 10 --------------------------------------------------------------------------------------

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_occdet"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn criterion_cli() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 4] = [
        &["synth", "--count", "100", "--seed", "7", "--out", "scenes.json"],
        &["gen-maps", "--gt", "scenes.json", "--out-dir", "maps"],
        &["run-tpp", "--scenes", "scenes.json", "--n-sub", "3", "--out", "dets.json"],
        &["eval", "--gt", "scenes.json", "--dets", "dets.json", "--report", "report.json", "--csv", "report.csv"],
    ];
    for s in steps {
        if let Err(e) = run_cli(d, s) {
            return check(false, e);
        }
    }
    let n_maps = std::fs::read_dir(d.join("maps")).map(|r| r.count()).unwrap_or(0);
    let text = std::fs::read_to_string(d.join("report.json")).unwrap_or_default();
    let parsed: Result<EvalReport, _> = serde_json::from_str(&text);
    // every field must be present (Option fields too), so compare against the key set
    let keys_ok = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.len()))
        == parsed.as_ref().ok().and_then(|r| serde_json::to_value(r).ok()).and_then(|v| v.as_object().map(|o| o.len()));
    match parsed {
        Ok(r) => {
            let valid = r.validate();
            check(
                valid.is_ok() && keys_ok && r.n_images == 100 && n_maps == 100 && r.ar_occ.is_some(),
                format!("100 scenes, {n_maps} maps; report AP {:.3}, schema {:?}", r.ap.unwrap_or(f64::NAN), valid.map_err(|e| e.to_string())),
            )
        }
        Err(e) => check(false, format!("report does not parse: {e}")),
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("1 geometry vs raster oracle", Duration::from_secs(10), criterion_geometry),
        ("2 truth-map support and flip equivariance", Duration::from_secs(600), criterion_truth_map),
        ("3 loss gradient, weight linearity, l_total", Duration::from_secs(600), criterion_losses),
        ("4 sub-region selection suite", Duration::from_secs(600), criterion_region_select),
        ("5 NMS vs brute force, idempotence", Duration::from_secs(600), criterion_nms),
        ("6 TPP improves heavy-occlusion recall", Duration::from_secs(60), criterion_tpp_direction),
        ("7 zero map degrades to nms(coarse)", Duration::from_secs(600), criterion_degradation),
        ("8 evaluator sanity", Duration::from_secs(600), criterion_evaluator),
        ("9 netmath shapes", Duration::from_secs(600), criterion_netmath),
        ("10 CLI end to end", Duration::from_secs(120), criterion_cli),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let o = timed(limit, f);
        println!("{} [{name}] {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
