use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsParams {
    pub iou_threshold: f64,
    pub max_detections: usize,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            iou_threshold: 0.5,
            max_detections: 500,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::invalid(format!("NMS IoU threshold must lie in (0, 1], got {}", self.iou_threshold)));
        }
        if self.max_detections == 0 {
            return Err(Error::invalid("NMS max_detections must be positive"));
        }
        Ok(())
    }
}

/// Indices of `dets` ordered by descending score, ties broken by input position.
pub(crate) fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Class-aware greedy NMS.
///
/// Detections are visited by descending score (stable on ties); one is dropped when its IoU
/// with an already kept detection of the same category exceeds the threshold. The survivors,
/// still in score order, are truncated to `max_detections`.
pub fn nms(dets: &[Detection], params: &NmsParams) -> Vec<Detection> {
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_by_cat: std::collections::HashMap<u32, Vec<usize>> = std::collections::HashMap::new();
    for i in score_order(dets) {
        if kept.len() == params.max_detections {
            break;
        }
        let d = &dets[i];
        let same = kept_by_cat.entry(d.category).or_default();
        if same.iter().all(|&k| iou(&dets[k].bbox, &d.bbox) <= params.iou_threshold) {
            same.push(i);
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}
