use super::{prepare, EvalOptions, Prepared};
use crate::assoc::{solve_assignment, CostMatrix};
use crate::error::Result;
use crate::types::{GtEntry, TrackOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdMetrics {
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Frames in which each (GT, prediction) pair overlaps above the threshold.
pub(crate) fn overlap_counts(data: &Prepared, threshold: f64) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; data.pred_ids.len()]; data.gt_ids.len()];
    for frame in data.frames.values() {
        let ious = Prepared::iou_matrix(frame);
        for (gi, (g, _)) in frame.gt.iter().enumerate() {
            for (pj, (p, _)) in frame.pred.iter().enumerate() {
                if ious[gi][pj] >= threshold {
                    counts[*g][*p] += 1;
                }
            }
        }
    }
    counts
}

pub(crate) fn id_from_prepared(data: &Prepared, opts: &EvalOptions) -> IdMetrics {
    let counts = overlap_counts(data, opts.iou_threshold);
    // one-to-one trajectory pairing maximizing identity-consistent frames
    let mut cost = CostMatrix::new(data.gt_ids.len(), data.pred_ids.len());
    for (g, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            // zero-overlap pairs stay allowed so cardinality never outranks weight
            cost.set(g, p, -(c as f64));
        }
    }
    let idtp: usize = solve_assignment(&cost, f64::INFINITY)
        .matches
        .iter()
        .map(|&(g, p)| counts[g][p])
        .sum();
    finish(idtp, data.total_gt, data.total_pred)
}

pub(crate) fn finish(idtp: usize, total_gt: usize, total_pred: usize) -> IdMetrics {
    let idfn = total_gt - idtp;
    let idfp = total_pred - idtp;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    IdMetrics {
        idf1: ratio(2 * idtp, total_gt + total_pred),
        idp: ratio(idtp, total_pred),
        idr: ratio(idtp, total_gt),
        idtp,
        idfp,
        idfn,
    }
}

pub fn id_metrics(gt: &[GtEntry], pred: &[TrackOutput], opts: &EvalOptions) -> Result<IdMetrics> {
    Ok(id_from_prepared(&prepare(gt, pred, opts)?, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fixtures::*;

    #[test]
    fn perfect_tracking() {
        let (gt, _) = mota_07();
        let m = id_metrics(&gt, &perfect(&gt), &EvalOptions::default()).unwrap();
        assert_eq!((m.idf1, m.idp, m.idr), (1.0, 1.0, 1.0));
    }

    #[test]
    fn split_trajectory_halves_idf1() {
        let gt: Vec<_> = (1..=4).map(|f| g(f, 1, 0.0)).collect();
        let pred = vec![p(1, 1, 0.0), p(2, 1, 0.0), p(3, 2, 0.0), p(4, 2, 0.0)];
        let m = id_metrics(&gt, &pred, &EvalOptions::default()).unwrap();
        assert_eq!(m.idtp, 2);
        assert_eq!(m.idf1, 0.5);
    }

    #[test]
    fn empty_prediction() {
        let (gt, _) = mota_07();
        let m = id_metrics(&gt, &[], &EvalOptions::default()).unwrap();
        assert_eq!(m.idf1, 0.0);
        assert_eq!(m.idfn, 10);
    }

    #[test]
    fn crafted_fixture_counts() {
        // GT 1 <-> pred 1 for 5 frames, GT 2 <-> pred 2 or 3 for 2 frames
        let (gt, pred) = mota_07();
        let m = id_metrics(&gt, &pred, &EvalOptions::default()).unwrap();
        assert_eq!(m.idtp, 7);
        assert_eq!(m.idfn, 3);
        assert_eq!(m.idfp, 3);
        assert!((m.idf1 - 14.0 / 20.0).abs() < 1e-12);
    }
}
