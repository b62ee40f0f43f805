//! Training losses: occlusion-map MSE, occlusion-weighted cross-entropy and smooth-L1, and the
//! weighted total.
//!
//! Per-sample terms are reduced with [`pairwise_sum`], a fixed binary tree over the input
//! order, so totals do not depend on how a caller batches or parallelizes the terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::occlusion_map::OcclusionMap;

const PROB_FLOOR: f64 = 1e-12;
const DIST_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_occ: f64,
    pub lambda_cls: f64,
    pub lambda_loc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_occ: 1.0,
            lambda_cls: 1.0,
            lambda_loc: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_occ", self.lambda_occ),
            ("lambda_cls", self.lambda_cls),
            ("lambda_loc", self.lambda_loc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sum by recursive halving. Deterministic for a given slice order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Mean squared error between two maps and its gradient with respect to `pred`.
pub fn l_occ(pred: &OcclusionMap, truth: &OcclusionMap) -> Result<(f64, Vec<f64>)> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(Error::invalid(format!(
            "map dims differ: {}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    let n = pred.values().len() as f64;
    let diffs: Vec<f64> = pred.values().iter().zip(truth.values()).map(|(p, t)| p - t).collect();
    let squares: Vec<f64> = diffs.iter().map(|d| d * d).collect();
    let loss = pairwise_sum(&squares) / n;
    let grad = diffs.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, grad))
}

/// Per-sample terms `-w_n · log p_n[label_n]` (before averaging).
pub fn l_cls_terms(probs: &[Vec<f64>], labels: &[usize], w_occ: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != labels.len() || probs.len() != w_occ.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} distributions, {} labels, {} weights",
            probs.len(),
            labels.len(),
            w_occ.len()
        )));
    }
    probs
        .iter()
        .zip(labels)
        .zip(w_occ)
        .enumerate()
        .map(|(n, ((dist, &label), &w))| {
            let total: f64 = dist.iter().sum();
            if (total - 1.0).abs() > DIST_TOLERANCE {
                return Err(Error::invalid(format!("sample {n}: probabilities sum to {total}, not 1")));
            }
            let p = *dist.get(label).ok_or_else(|| {
                Error::invalid(format!("sample {n}: label {label} outside 0..{}", dist.len()))
            })?;
            Ok(-(w * p.max(PROB_FLOOR).ln()))
        })
        .collect()
}

/// Occlusion-weighted cross-entropy averaged over samples.
pub fn l_cls(probs: &[Vec<f64>], labels: &[usize], w_occ: &[f64]) -> Result<f64> {
    let terms = l_cls_terms(probs, labels, w_occ)?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Smooth-L1 with transition point `beta`.
#[inline]
pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

/// Per-sample terms `w_n · Σ_k smooth_l1(pred_k − gt_k)` over `(x, y, w, h)`.
pub fn l_loc_terms(pred: &[BBox], gt: &[BBox], w_occ: &[f64], beta: f64) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || pred.len() != w_occ.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions, {} targets, {} weights",
            pred.len(),
            gt.len(),
            w_occ.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("smooth-L1 beta must be positive, got {beta}")));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .zip(w_occ)
        .map(|((p, g), &w)| {
            let s = smooth_l1(p.x - g.x, beta)
                + smooth_l1(p.y - g.y, beta)
                + smooth_l1(p.w - g.w, beta)
                + smooth_l1(p.h - g.h, beta);
            w * s
        })
        .collect())
}

/// Occlusion-weighted smooth-L1 summed (not averaged) over samples.
pub fn l_loc(pred: &[BBox], gt: &[BBox], w_occ: &[f64], beta: f64) -> Result<f64> {
    Ok(pairwise_sum(&l_loc_terms(pred, gt, w_occ, beta)?))
}

pub fn l_total(l_occ: f64, l_cls: f64, l_loc: f64, weights: &LossWeights) -> f64 {
    weights.lambda_occ * l_occ + weights.lambda_cls * l_cls + weights.lambda_loc * l_loc
}
