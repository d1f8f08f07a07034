//! Tracking evaluation: CLEAR, identity (IDF1), HOTA and verification TPR@FAR.

mod clear;
mod hota;
mod identity;
mod report;
mod verification;

use std::collections::BTreeMap;

pub use clear::{clear_metrics, ClearMetrics};
pub use hota::{hota_metrics, HotaAlpha, HotaMetrics, HOTA_ALPHAS};
pub use identity::{id_metrics, IdMetrics};
pub use report::{evaluate_sequence, MetricsReport, MetricsRow, REPORT_COLUMNS};
pub use verification::{tpr_at_far, VerificationSet, DEFAULT_FAR_LEVELS};

use crate::assoc::{solve_assignment, CostMatrix};
use crate::distance::iou;
use crate::error::{Error, Result};
use crate::types::{BBox, GtEntry, TrackOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Drop predictions that match an inactive (ignore-region) GT box instead
    /// of counting them as false positives.
    pub suppress_ignored_fp: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { iou_threshold: 0.5, suppress_ignored_fp: true }
    }
}

/// Per-frame boxes with dense per-sequence indices for identities.
#[derive(Debug, Clone, Default)]
pub(crate) struct FrameData {
    pub gt: Vec<(usize, BBox)>,
    pub pred: Vec<(usize, BBox)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Prepared {
    pub frames: BTreeMap<u32, FrameData>,
    pub gt_ids: Vec<u32>,
    pub pred_ids: Vec<u32>,
    pub total_gt: usize,
    pub total_pred: usize,
}

impl Prepared {
    /// IoU matrix of one frame, rows = GT, cols = predictions.
    pub fn iou_matrix(frame: &FrameData) -> Vec<Vec<f64>> {
        frame
            .gt
            .iter()
            .map(|(_, g)| frame.pred.iter().map(|(_, p)| iou(g, p)).collect())
            .collect()
    }
}

/// Removes ignore regions and the predictions that cover them, then indexes
/// identities densely.
pub(crate) fn prepare(gt: &[GtEntry], pred: &[TrackOutput], opts: &EvalOptions) -> Result<Prepared> {
    let mut raw: BTreeMap<u32, (Vec<GtEntry>, Vec<TrackOutput>)> = BTreeMap::new();
    for g in gt {
        raw.entry(g.frame).or_default().0.push(*g);
    }
    for p in pred {
        raw.entry(p.frame).or_default().1.push(*p);
    }

    let mut gt_index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pred_index: BTreeMap<u32, usize> = BTreeMap::new();
    for g in gt.iter().filter(|g| g.active) {
        let n = gt_index.len();
        gt_index.entry(g.identity).or_insert(n);
    }

    let mut out = Prepared::default();
    let mut kept_preds: Vec<(u32, Vec<TrackOutput>)> = Vec::new();
    for (frame, (gts, preds)) in raw {
        let keep: Vec<TrackOutput> = if opts.suppress_ignored_fp && gts.iter().any(|g| !g.active) && !preds.is_empty() {
            let mut cost = CostMatrix::new(gts.len(), preds.len());
            for (i, g) in gts.iter().enumerate() {
                for (j, p) in preds.iter().enumerate() {
                    let s = iou(&g.bbox, &p.bbox);
                    cost.set(i, j, 1.0 - s);
                    if s < opts.iou_threshold {
                        cost.mask(i, j);
                    }
                }
            }
            let a = solve_assignment(&cost, f64::INFINITY);
            let mut drop = vec![false; preds.len()];
            for (i, j) in a.matches {
                if !gts[i].active {
                    drop[j] = true;
                }
            }
            preds.into_iter().zip(drop).filter(|(_, d)| !d).map(|(p, _)| p).collect()
        } else {
            preds
        };
        let active: Vec<&GtEntry> = gts.iter().filter(|g| g.active).collect();
        let fd = out.frames.entry(frame).or_default();
        fd.gt = active.iter().map(|g| (gt_index[&g.identity], g.bbox)).collect();
        out.total_gt += fd.gt.len();
        kept_preds.push((frame, keep));
    }
    // prediction ids are indexed in first-appearance order of the kept rows
    for (frame, preds) in kept_preds {
        let mut seen = std::collections::HashSet::new();
        let fd = out.frames.get_mut(&frame).expect("frame inserted above");
        for p in preds {
            if !seen.insert(p.id) {
                return Err(Error::Config(format!("prediction id {} repeated in frame {frame}", p.id)));
            }
            let n = pred_index.len();
            let idx = *pred_index.entry(p.id).or_insert(n);
            fd.pred.push((idx, p.bbox));
        }
        out.total_pred += fd.pred.len();
    }
    let mut gt_ids = vec![0; gt_index.len()];
    for (id, i) in gt_index {
        gt_ids[i] = id;
    }
    let mut pred_ids = vec![0; pred_index.len()];
    for (id, i) in pred_index {
        pred_ids[i] = id;
    }
    out.gt_ids = gt_ids;
    out.pred_ids = pred_ids;
    if out.total_gt == 0 {
        return Err(Error::NoGroundTruth("sequence has no active ground-truth boxes".into()));
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::types::{BBox, GtEntry, TrackOutput};

    pub fn bx(x: f64) -> BBox {
        BBox { left: x, top: 0.0, width: 10.0, height: 20.0 }
    }

    pub fn g(frame: u32, identity: u32, x: f64) -> GtEntry {
        GtEntry { frame, identity, bbox: bx(x), visibility: 1.0, active: true }
    }

    pub fn p(frame: u32, id: u32, x: f64) -> TrackOutput {
        TrackOutput { frame, id, bbox: bx(x), confidence: 1.0 }
    }

    /// Two targets over five frames with exactly one FP, one FN and one ID
    /// switch.
    pub fn mota_07() -> (Vec<GtEntry>, Vec<TrackOutput>) {
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        for f in 1..=5 {
            gt.push(g(f, 1, 0.0));
            gt.push(g(f, 2, 100.0));
            pred.push(p(f, 1, 0.0));
        }
        pred.push(p(1, 2, 100.0));
        pred.push(p(2, 2, 100.0));
        pred.push(p(3, 3, 100.0));
        pred.push(p(4, 3, 100.0));
        pred.push(p(1, 9, 500.0));
        (gt, pred)
    }

    /// Every GT box reproduced with the GT identity.
    pub fn perfect(gt: &[GtEntry]) -> Vec<TrackOutput> {
        gt.iter()
            .map(|g| TrackOutput { frame: g.frame, id: g.identity, bbox: g.bbox, confidence: 1.0 })
            .collect()
    }
}
