//! Detection evaluation: COCO-style AP, scale-stratified AP/AR, recall restricted to
//! occlusion-ratio bins, and dataset crowding statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Annotation, Detection};
use crate::tpp::score_order;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// Occlusion-ratio bins: exactly 0, partial `(0, heavy_from)`, heavy `[heavy_from, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionBins {
    pub heavy_from: f64,
}

impl Default for OcclusionBins {
    fn default() -> Self {
        OcclusionBins { heavy_from: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccBin {
    No,
    Partial,
    Heavy,
}

impl OccBin {
    pub const ALL: [OccBin; 3] = [OccBin::No, OccBin::Partial, OccBin::Heavy];

    fn index(self) -> usize {
        self as usize
    }
}

impl OcclusionBins {
    pub fn validate(&self) -> Result<()> {
        if !(self.heavy_from > 0.0 && self.heavy_from <= 1.0) {
            return Err(Error::invalid(format!("heavy bin edge must lie in (0, 1], got {}", self.heavy_from)));
        }
        Ok(())
    }

    pub fn bin(&self, ratio: f64) -> OccBin {
        if ratio <= 0.0 {
            OccBin::No
        } else if ratio < self.heavy_from {
            OccBin::Partial
        } else {
            OccBin::Heavy
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Detections kept per image, by score.
    pub max_dets: usize,
    /// IoU threshold for occlusion-binned recall.
    pub ar_occ_iou: f64,
    /// Upper area bound (pixels²) of the small stratum.
    pub small_area: f64,
    /// Upper area bound of the medium stratum.
    pub medium_area: f64,
    pub bins: OcclusionBins,
    /// Pairs above this IoU count as overlaps in dataset statistics.
    pub stats_iou: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            max_dets: 500,
            ar_occ_iou: 0.5,
            small_area: 32.0 * 32.0,
            medium_area: 96.0 * 96.0,
            bins: OcclusionBins::default(),
            stats_iou: 0.5,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_dets == 0 {
            return Err(Error::invalid("max_dets must be positive"));
        }
        if !(self.ar_occ_iou > 0.0 && self.ar_occ_iou <= 1.0) {
            return Err(Error::invalid(format!("ar_occ_iou must lie in (0, 1], got {}", self.ar_occ_iou)));
        }
        if !(self.small_area > 0.0 && self.medium_area > self.small_area && self.medium_area.is_finite()) {
            return Err(Error::invalid("area cutoffs must satisfy 0 < small_area < medium_area"));
        }
        if !(0.0..1.0).contains(&self.stats_iou) {
            return Err(Error::invalid(format!("stats_iou must lie in [0, 1), got {}", self.stats_iou)));
        }
        self.bins.validate()
    }

    fn strata(&self) -> [AreaRange; 3] {
        [
            AreaRange { lo: 0.0, hi: self.small_area },
            AreaRange { lo: self.small_area, hi: self.medium_area },
            AreaRange { lo: self.medium_area, hi: f64::INFINITY },
        ]
    }
}

/// Half-open area interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AreaRange {
    lo: f64,
    hi: f64,
}

impl AreaRange {
    const ALL: AreaRange = AreaRange { lo: 0.0, hi: f64::INFINITY };

    fn contains(&self, area: f64) -> bool {
        area >= self.lo && area < self.hi
    }
}

/// One-to-one assignment between detections and ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub det_to_gt: Vec<Option<usize>>,
    pub gt_to_det: Vec<Option<usize>>,
}

impl Matching {
    pub fn matched_gt(&self) -> usize {
        self.gt_to_det.iter().filter(|m| m.is_some()).count()
    }
}

/// Greedy matching: detections in descending score order (stable), each taking the
/// unmatched same-category ground truth of highest IoU, provided that IoU ≥ `iou_thr`.
/// IoU ties go to the lower ground-truth index.
pub fn match_greedy(dets: &[Detection], gts: &[Annotation], iou_thr: f64) -> Matching {
    let mut m = Matching {
        det_to_gt: vec![None; dets.len()],
        gt_to_det: vec![None; gts.len()],
    };
    for i in score_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.category != d.category || m.gt_to_det[j].is_some() {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            m.det_to_gt[i] = Some(j);
            m.gt_to_det[j] = Some(i);
        }
    }
    m
}

/// The `k` highest-scoring detections, in score order.
pub fn top_k(dets: &[Detection], k: usize) -> Vec<Detection> {
    score_order(dets).into_iter().take(k).map(|i| dets[i]).collect()
}

/// 101-point interpolated average precision of a score-ranked list of true/false positives.
pub fn interpolated_ap(ranked_tp: &[bool], n_pos: usize) -> f64 {
    if n_pos == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_pos as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for t in 0..=100 {
        let r = t as f64 / 100.0;
        while k < recall.len() && recall[k] < r {
            k += 1;
        }
        if k == recall.len() {
            break;
        }
        sum += precision[k];
    }
    sum / 101.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Per-category tally for one IoU threshold and area range.
#[derive(Debug, Default, Clone)]
struct CategoryTally {
    n_pos: usize,
    /// (score, image, rank within image, is true positive)
    hits: Vec<(f64, usize, usize, bool)>,
}

fn check_pairs(dets: &[Vec<Detection>], gts: &[Vec<Annotation>]) -> Result<()> {
    if dets.len() != gts.len() {
        return Err(Error::invalid(format!("{} detection lists for {} images", dets.len(), gts.len())));
    }
    Ok(())
}

/// Matches every image and classifies each kept detection. Ground truth outside `range` is
/// ignored: detections matched to it, and unmatched detections whose own area is outside the
/// range, count neither as hits nor as false positives.
fn tally(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], iou_thr: f64, range: AreaRange, max_dets: usize) -> BTreeMap<u32, CategoryTally> {
    let per_image: Vec<(Vec<(u32, f64, usize, Outcome)>, Vec<u32>)> = dets
        .par_iter()
        .zip(gts.par_iter())
        .map(|(d, g)| {
            let top = top_k(d, max_dets);
            let m = match_greedy(&top, g, iou_thr);
            let outcomes = top
                .iter()
                .enumerate()
                .map(|(rank, det)| {
                    let o = match m.det_to_gt[rank] {
                        Some(j) if range.contains(g[j].bbox.area()) => Outcome::Tp,
                        Some(_) => Outcome::Ignored,
                        None if range.contains(det.bbox.area()) => Outcome::Fp,
                        None => Outcome::Ignored,
                    };
                    (det.category, det.score, rank, o)
                })
                .collect();
            let pos = g.iter().filter(|a| range.contains(a.bbox.area())).map(|a| a.category).collect();
            (outcomes, pos)
        })
        .collect();

    let mut out: BTreeMap<u32, CategoryTally> = BTreeMap::new();
    for (img, (outcomes, pos)) in per_image.into_iter().enumerate() {
        for c in pos {
            out.entry(c).or_default().n_pos += 1;
        }
        for (c, score, rank, o) in outcomes {
            if o != Outcome::Ignored {
                out.entry(c).or_default().hits.push((score, img, rank, o == Outcome::Tp));
            }
        }
    }
    out
}

struct PrSummary {
    ap: Option<f64>,
    recall: Option<f64>,
}

fn summarize(mut tallies: BTreeMap<u32, CategoryTally>) -> PrSummary {
    let mut aps = Vec::new();
    let mut recalls = Vec::new();
    for t in tallies.values_mut().filter(|t| t.n_pos > 0) {
        t.hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let ranked: Vec<bool> = t.hits.iter().map(|h| h.3).collect();
        aps.push(interpolated_ap(&ranked, t.n_pos));
        recalls.push(ranked.iter().filter(|&&h| h).count() as f64 / t.n_pos as f64);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    PrSummary {
        ap: mean(&aps),
        recall: mean(&recalls),
    }
}

/// AP at one IoU threshold, averaged over categories present in the ground truth.
/// `None` when there is no ground truth at all.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], iou_thr: f64, max_dets: usize) -> Result<Option<f64>> {
    check_pairs(dets, gts)?;
    Ok(summarize(tally(dets, gts, iou_thr, AreaRange::ALL, max_dets)).ap)
}

/// AP averaged over IoU thresholds 0.50:0.05:0.95.
pub fn coco_ap(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], max_dets: usize) -> Result<Option<f64>> {
    check_pairs(dets, gts)?;
    Ok(mean_over_thresholds(dets, gts, AreaRange::ALL, max_dets).0)
}

fn mean_over_thresholds(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], range: AreaRange, max_dets: usize) -> (Option<f64>, Option<f64>) {
    let mut aps = Vec::new();
    let mut recalls = Vec::new();
    for thr in coco_iou_thresholds() {
        let s = summarize(tally(dets, gts, thr, range, max_dets));
        aps.extend(s.ap);
        recalls.extend(s.recall);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (mean(&aps), mean(&recalls))
}

/// Matched and total ground-truth counts of one subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallCount {
    pub matched: usize,
    pub total: usize,
}

impl RecallCount {
    /// `None` for an empty subset.
    pub fn recall(&self) -> Option<f64> {
        (self.total > 0).then(|| self.matched as f64 / self.total as f64)
    }

    fn add(&mut self, other: RecallCount) {
        self.matched += other.matched;
        self.total += other.total;
    }
}

/// Recall over all ground truth: share of objects matched by the top `max_dets` detections.
pub fn recall(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], iou_thr: f64, max_dets: usize) -> Result<RecallCount> {
    check_pairs(dets, gts)?;
    Ok(dets
        .par_iter()
        .zip(gts.par_iter())
        .map(|(d, g)| RecallCount {
            matched: match_greedy(&top_k(d, max_dets), g, iou_thr).matched_gt(),
            total: g.len(),
        })
        .reduce(RecallCount::default, |mut a, b| {
            a.add(b);
            a
        }))
}

/// Per-bin counts; index with [`OccBin`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OccRecall(pub [RecallCount; 3]);

impl OccRecall {
    pub fn get(&self, bin: OccBin) -> RecallCount {
        self.0[bin.index()]
    }

    pub fn recall(&self, bin: OccBin) -> Option<f64> {
        self.get(bin).recall()
    }

    /// Counts summed over all bins.
    pub fn overall(&self) -> RecallCount {
        let mut t = RecallCount::default();
        for c in self.0 {
            t.add(c);
        }
        t
    }
}

fn image_ar_occ(dets: &[Detection], gts: &[Annotation], bins: &OcclusionBins, iou_thr: f64, max_dets: usize) -> Result<OccRecall> {
    let m = match_greedy(&top_k(dets, max_dets), gts, iou_thr);
    let mut out = OccRecall::default();
    for (j, g) in gts.iter().enumerate() {
        let ratio = g
            .occlusion_ratio
            .ok_or_else(|| Error::invalid(format!("ground truth #{j} has no occlusion ratio")))?;
        let c = &mut out.0[bins.bin(ratio).index()];
        c.total += 1;
        c.matched += m.gt_to_det[j].is_some() as usize;
    }
    Ok(out)
}

/// Recall restricted to each occlusion bin.
///
/// Detections are matched against all ground truth first and only matches to in-bin objects
/// are counted, so detections of out-of-bin objects are neither credited nor penalized.
pub fn ar_occ(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], bins: &OcclusionBins, iou_thr: f64, max_dets: usize) -> Result<OccRecall> {
    check_pairs(dets, gts)?;
    bins.validate()?;
    let per: Vec<OccRecall> = dets
        .par_iter()
        .zip(gts.par_iter())
        .map(|(d, g)| image_ar_occ(d, g, bins, iou_thr, max_dets))
        .collect::<Result<_>>()?;
    let mut out = OccRecall::default();
    for p in per {
        for (a, b) in out.0.iter_mut().zip(p.0) {
            a.add(b);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub objects_per_image: f64,
    pub overlaps_per_image: f64,
}

/// Unordered pairs with IoU strictly above `iou_thr`. Sweeps boxes sorted by left edge so
/// only horizontally overlapping pairs are compared.
pub fn overlapping_pairs(anns: &[Annotation], iou_thr: f64) -> usize {
    let mut order: Vec<usize> = (0..anns.len()).collect();
    order.sort_by(|&a, &b| anns[a].bbox.x.total_cmp(&anns[b].bbox.x));
    let mut n = 0;
    for (k, &i) in order.iter().enumerate() {
        let right = anns[i].bbox.right();
        for &j in &order[k + 1..] {
            if anns[j].bbox.x >= right {
                break;
            }
            if iou(&anns[i].bbox, &anns[j].bbox) > iou_thr {
                n += 1;
            }
        }
    }
    n
}

/// Mean object count and mean overlapping-pair count per image.
pub fn dataset_stats(images: &[Vec<Annotation>], iou_thr: f64) -> DatasetStats {
    if images.is_empty() {
        return DatasetStats {
            objects_per_image: 0.0,
            overlaps_per_image: 0.0,
        };
    }
    let objects: usize = images.iter().map(Vec::len).sum();
    let pairs: usize = images.par_iter().map(|a| overlapping_pairs(a, iou_thr)).sum();
    let n = images.len() as f64;
    DatasetStats {
        objects_per_image: objects as f64 / n,
        overlaps_per_image: pairs as f64 / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinReport {
    pub matched: usize,
    pub total: usize,
    pub recall: Option<f64>,
}

impl From<RecallCount> for BinReport {
    fn from(c: RecallCount) -> Self {
        BinReport {
            matched: c.matched,
            total: c.total,
            recall: c.recall(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArOccReport {
    pub iou: f64,
    pub no: BinReport,
    pub partial: BinReport,
    pub heavy: BinReport,
    pub all: BinReport,
}

/// Full evaluation summary. Metrics over empty subsets are `None` (`null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n_images: usize,
    pub max_dets: usize,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub ar: Option<f64>,
    pub ar_s: Option<f64>,
    pub ar_m: Option<f64>,
    pub ar_l: Option<f64>,
    /// Absent when the ground truth carries no occlusion ratios.
    pub ar_occ: Option<ArOccReport>,
    pub objects_per_image: f64,
    pub overlaps_per_image: f64,
}

impl EvalReport {
    /// Checks ranges and internal consistency of a (possibly deserialized) report.
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("ap", self.ap),
            ("ap50", self.ap50),
            ("ap75", self.ap75),
            ("ap_s", self.ap_s),
            ("ap_m", self.ap_m),
            ("ap_l", self.ap_l),
            ("ar", self.ar),
            ("ar_s", self.ar_s),
            ("ar_m", self.ar_m),
            ("ar_l", self.ar_l),
        ];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Format(format!("{name} = {v} outside [0, 1]")));
                }
            }
        }
        if let Some(occ) = &self.ar_occ {
            let bins = [("no", occ.no), ("partial", occ.partial), ("heavy", occ.heavy), ("all", occ.all)];
            for (name, b) in bins {
                if b.matched > b.total {
                    return Err(Error::Format(format!("ar_occ.{name}: matched {} > total {}", b.matched, b.total)));
                }
                if b.recall != (RecallCount { matched: b.matched, total: b.total }).recall() {
                    return Err(Error::Format(format!("ar_occ.{name}: recall does not equal matched/total")));
                }
            }
            if occ.no.total + occ.partial.total + occ.heavy.total != occ.all.total
                || occ.no.matched + occ.partial.matched + occ.heavy.matched != occ.all.matched
            {
                return Err(Error::Format("ar_occ bins do not sum to the overall counts".into()));
            }
        }
        if !(self.objects_per_image >= 0.0 && self.overlaps_per_image >= 0.0) {
            return Err(Error::Format("dataset statistics must be non-negative".into()));
        }
        Ok(())
    }

    /// `metric,value` lines; undefined metrics are left empty.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut rows: Vec<(String, String)> = vec![
            ("n_images".into(), self.n_images.to_string()),
            ("max_dets".into(), self.max_dets.to_string()),
            ("ap".into(), fmt(self.ap)),
            ("ap50".into(), fmt(self.ap50)),
            ("ap75".into(), fmt(self.ap75)),
            ("ap_s".into(), fmt(self.ap_s)),
            ("ap_m".into(), fmt(self.ap_m)),
            ("ap_l".into(), fmt(self.ap_l)),
            ("ar".into(), fmt(self.ar)),
            ("ar_s".into(), fmt(self.ar_s)),
            ("ar_m".into(), fmt(self.ar_m)),
            ("ar_l".into(), fmt(self.ar_l)),
        ];
        if let Some(occ) = &self.ar_occ {
            for (name, b) in [("no", occ.no), ("partial", occ.partial), ("heavy", occ.heavy), ("all", occ.all)] {
                rows.push((format!("ar_occ_{name}"), fmt(b.recall)));
                rows.push((format!("ar_occ_{name}_total"), b.total.to_string()));
            }
        }
        rows.push(("objects_per_image".into(), self.objects_per_image.to_string()));
        rows.push(("overlaps_per_image".into(), self.overlaps_per_image.to_string()));
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            out.push_str(&k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// Computes every metric of [`EvalReport`] for per-image detections and ground truth.
pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<Annotation>], params: &EvalParams) -> Result<EvalReport> {
    params.validate()?;
    check_pairs(dets, gts)?;
    let md = params.max_dets;
    let [small, medium, large] = params.strata();
    let (ap, ar) = mean_over_thresholds(dets, gts, AreaRange::ALL, md);
    let (ap_s, ar_s) = mean_over_thresholds(dets, gts, small, md);
    let (ap_m, ar_m) = mean_over_thresholds(dets, gts, medium, md);
    let (ap_l, ar_l) = mean_over_thresholds(dets, gts, large, md);

    let with_ratio = gts.iter().flatten().filter(|a| a.occlusion_ratio.is_some()).count();
    let total = gts.iter().map(Vec::len).sum::<usize>();
    let ar_occ = if with_ratio == 0 {
        None
    } else {
        let r = ar_occ(dets, gts, &params.bins, params.ar_occ_iou, md)?;
        debug_assert_eq!(with_ratio, total);
        Some(ArOccReport {
            iou: params.ar_occ_iou,
            no: r.get(OccBin::No).into(),
            partial: r.get(OccBin::Partial).into(),
            heavy: r.get(OccBin::Heavy).into(),
            all: r.overall().into(),
        })
    };
    let stats = dataset_stats(gts, params.stats_iou);
    Ok(EvalReport {
        n_images: gts.len(),
        max_dets: md,
        ap,
        ap50: average_precision(dets, gts, 0.5, md)?,
        ap75: average_precision(dets, gts, 0.75, md)?,
        ap_s,
        ap_m,
        ap_l,
        ar,
        ar_s,
        ar_m,
        ar_l,
        ar_occ,
        objects_per_image: stats.objects_per_image,
        overlaps_per_image: stats.overlaps_per_image,
    })
}
