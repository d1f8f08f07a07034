use super::{prepare, EvalOptions, FrameData, Prepared};
use crate::assoc::{solve_assignment, CostMatrix};
use crate::error::Result;
use crate::types::{GtEntry, TrackOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearMetrics {
    pub mota: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub gt_count: usize,
    pub matches: usize,
}

/// Matches one frame: correspondences from earlier frames that still overlap
/// are kept, the rest is solved optimally on `1 - IoU`.
pub(crate) fn match_frame(
    frame: &FrameData,
    last_match: &[Option<usize>],
    threshold: f64,
) -> Vec<(usize, usize)> {
    let ious = Prepared::iou_matrix(frame);
    let mut gt_used = vec![false; frame.gt.len()];
    let mut pred_used = vec![false; frame.pred.len()];
    let mut pairs = Vec::new();
    for (gi, (g, _)) in frame.gt.iter().enumerate() {
        let Some(prev) = last_match[*g] else { continue };
        if let Some(pj) = frame.pred.iter().position(|(p, _)| *p == prev) {
            if !pred_used[pj] && ious[gi][pj] >= threshold {
                gt_used[gi] = true;
                pred_used[pj] = true;
                pairs.push((gi, pj));
            }
        }
    }
    let free_g: Vec<usize> = (0..frame.gt.len()).filter(|&i| !gt_used[i]).collect();
    let free_p: Vec<usize> = (0..frame.pred.len()).filter(|&j| !pred_used[j]).collect();
    let mut cost = CostMatrix::new(free_g.len(), free_p.len());
    for (r, &gi) in free_g.iter().enumerate() {
        for (c, &pj) in free_p.iter().enumerate() {
            cost.set(r, c, 1.0 - ious[gi][pj]);
            if ious[gi][pj] < threshold {
                cost.mask(r, c);
            }
        }
    }
    for (r, c) in solve_assignment(&cost, f64::INFINITY).matches {
        pairs.push((free_g[r], free_p[c]));
    }
    pairs
}

pub(crate) fn clear_from_prepared(data: &Prepared, opts: &EvalOptions) -> ClearMetrics {
    let mut last_match: Vec<Option<usize>> = vec![None; data.gt_ids.len()];
    let (mut fp, mut misses, mut switches, mut matched) = (0, 0, 0, 0);
    for frame in data.frames.values() {
        let pairs = match_frame(frame, &last_match, opts.iou_threshold);
        for &(gi, pj) in &pairs {
            let (g, p) = (frame.gt[gi].0, frame.pred[pj].0);
            if matches!(last_match[g], Some(prev) if prev != p) {
                switches += 1;
            }
            last_match[g] = Some(p);
        }
        matched += pairs.len();
        misses += frame.gt.len() - pairs.len();
        fp += frame.pred.len() - pairs.len();
    }
    let gt_count = data.total_gt;
    ClearMetrics {
        mota: 1.0 - (misses + fp + switches) as f64 / gt_count as f64,
        false_positives: fp,
        false_negatives: misses,
        id_switches: switches,
        gt_count,
        matches: matched,
    }
}

pub fn clear_metrics(gt: &[GtEntry], pred: &[TrackOutput], opts: &EvalOptions) -> Result<ClearMetrics> {
    Ok(clear_from_prepared(&prepare(gt, pred, opts)?, opts))
}
