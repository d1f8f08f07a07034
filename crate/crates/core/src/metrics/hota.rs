use super::{prepare, EvalOptions, Prepared};
use crate::assoc::{solve_assignment, CostMatrix};
use crate::error::Result;
use crate::types::{GtEntry, TrackOutput};

/// Localization thresholds 0.05, 0.10, ..., 0.95.
pub const HOTA_ALPHAS: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80,
    0.85, 0.90, 0.95,
];

/// Raw counts at one threshold; enough to re-aggregate across sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HotaAlpha {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    /// Sum over true positives of their association score.
    pub ass_sum: f64,
}

impl HotaAlpha {
    pub fn det_a(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_ + self.fp).max(1) as f64
    }

    pub fn ass_a(&self) -> f64 {
        self.ass_sum / self.tp.max(1) as f64
    }

    pub fn hota(&self) -> f64 {
        (self.det_a() * self.ass_a()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotaMetrics {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub per_alpha: Vec<HotaAlpha>,
}

impl HotaMetrics {
    pub fn from_alphas(per_alpha: Vec<HotaAlpha>) -> Self {
        let n = per_alpha.len() as f64;
        let mean = |f: fn(&HotaAlpha) -> f64| per_alpha.iter().map(f).sum::<f64>() / n;
        HotaMetrics {
            hota: mean(HotaAlpha::hota),
            det_a: mean(HotaAlpha::det_a),
            ass_a: mean(HotaAlpha::ass_a),
            per_alpha,
        }
    }

    /// Pools counts of several sequences before averaging over thresholds.
    pub fn combine<'a>(parts: impl IntoIterator<Item = &'a HotaMetrics>) -> Self {
        let mut acc = vec![HotaAlpha::default(); HOTA_ALPHAS.len()];
        for part in parts {
            for (a, p) in acc.iter_mut().zip(&part.per_alpha) {
                a.tp += p.tp;
                a.fn_ += p.fn_;
                a.fp += p.fp;
                a.ass_sum += p.ass_sum;
            }
        }
        HotaMetrics::from_alphas(acc)
    }
}

pub(crate) fn hota_from_prepared(data: &Prepared) -> HotaMetrics {
    let (ng, np) = (data.gt_ids.len(), data.pred_ids.len());
    let eps = f64::EPSILON;

    // global alignment between every GT and predicted trajectory
    let mut potential = vec![vec![0.0; np]; ng];
    let mut gt_count = vec![0usize; ng];
    let mut pred_count = vec![0usize; np];
    let mut similarities = Vec::with_capacity(data.frames.len());
    for frame in data.frames.values() {
        let sim = Prepared::iou_matrix(frame);
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..frame.pred.len()).map(|j| sim.iter().map(|r| r[j]).sum()).collect();
        for (i, (g, _)) in frame.gt.iter().enumerate() {
            for (j, (p, _)) in frame.pred.iter().enumerate() {
                let denom = row_sum[i] + col_sum[j] - sim[i][j];
                if denom > eps {
                    potential[*g][*p] += sim[i][j] / denom;
                }
            }
        }
        for (g, _) in &frame.gt {
            gt_count[*g] += 1;
        }
        for (p, _) in &frame.pred {
            pred_count[*p] += 1;
        }
        similarities.push(sim);
    }
    let global: Vec<Vec<f64>> = (0..ng)
        .map(|g| {
            (0..np)
                .map(|p| {
                    let d = gt_count[g] as f64 + pred_count[p] as f64 - potential[g][p];
                    if d > 0.0 { potential[g][p] / d } else { 0.0 }
                })
                .collect()
        })
        .collect();

    let na = HOTA_ALPHAS.len();
    let mut alphas = vec![HotaAlpha::default(); na];
    let mut match_counts = vec![vec![vec![0usize; np]; ng]; na];
    for (frame, sim) in data.frames.values().zip(&similarities) {
        let (fg, fp) = (frame.gt.len(), frame.pred.len());
        if fg == 0 || fp == 0 {
            for a in alphas.iter_mut() {
                a.fn_ += fg;
                a.fp += fp;
            }
            continue;
        }
        let mut cost = CostMatrix::new(fg, fp);
        for (i, (g, _)) in frame.gt.iter().enumerate() {
            for (j, (p, _)) in frame.pred.iter().enumerate() {
                cost.set(i, j, -(global[*g][*p] * sim[i][j]));
            }
        }
        let pairs = solve_assignment(&cost, f64::INFINITY).matches;
        for (ai, alpha) in HOTA_ALPHAS.iter().enumerate() {
            let mut n = 0;
            for &(i, j) in &pairs {
                if sim[i][j] >= alpha - eps {
                    n += 1;
                    match_counts[ai][frame.gt[i].0][frame.pred[j].0] += 1;
                }
            }
            alphas[ai].tp += n;
            alphas[ai].fn_ += fg - n;
            alphas[ai].fp += fp - n;
        }
    }
    for (ai, a) in alphas.iter_mut().enumerate() {
        let mut sum = 0.0;
        for g in 0..ng {
            for p in 0..np {
                let m = match_counts[ai][g][p];
                if m > 0 {
                    let denom = (gt_count[g] + pred_count[p] - m).max(1) as f64;
                    sum += m as f64 * (m as f64 / denom);
                }
            }
        }
        a.ass_sum = sum;
    }
    HotaMetrics::from_alphas(alphas)
}

pub fn hota_metrics(gt: &[GtEntry], pred: &[TrackOutput], opts: &EvalOptions) -> Result<HotaMetrics> {
    Ok(hota_from_prepared(&prepare(gt, pred, opts)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fixtures::*;
    use crate::types::BBox;

    #[test]
    fn perfect_tracking() {
        let (gt, _) = mota_07();
        let m = hota_metrics(&gt, &perfect(&gt), &EvalOptions::default()).unwrap();
        assert!((m.hota - 1.0).abs() < 1e-12);
        assert!((m.det_a - 1.0).abs() < 1e-12);
        assert!((m.ass_a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction() {
        let (gt, _) = mota_07();
        let m = hota_metrics(&gt, &[], &EvalOptions::default()).unwrap();
        assert_eq!(m.hota, 0.0);
    }

    #[test]
    fn one_missed_frame() {
        // one target, two frames, detected only in frame 1 with IoU 1
        let gt = vec![g(1, 1, 0.0), g(2, 1, 0.0)];
        let pred = vec![p(1, 4, 0.0)];
        let m = hota_metrics(&gt, &pred, &EvalOptions::default()).unwrap();
        for a in &m.per_alpha {
            assert_eq!(a.det_a(), 0.5);
            assert_eq!(a.ass_a(), 0.5);
        }
        assert!((m.hota - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_overlap_counts_only_low_thresholds() {
        // IoU of the single match is 1/3 (x shifted by half a width); alphas
        // 0.05..0.30 accept it, the other 13 do not
        let gt = vec![g(1, 1, 0.0), g(2, 1, 0.0)];
        let shifted = TrackOutput { bbox: BBox { left: 5.0, ..fixture_box() }, ..p(1, 4, 0.0) };
        let m = hota_metrics(&gt, &[shifted], &EvalOptions::default()).unwrap();
        let accepted = m.per_alpha.iter().filter(|a| a.tp == 1).count();
        assert_eq!(accepted, 6);
        assert!((m.hota - 6.0 * 0.5 / 19.0).abs() < 1e-12);
    }

    fn fixture_box() -> BBox {
        bx(0.0)
    }
}
