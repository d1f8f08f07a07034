//! A quick end-to-end pass over the library's invariants and oracles.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assoc::{solve_assignment, CostMatrix};
use crate::attributes::NUM_ATTRIBUTES;
use crate::fusion::{
    adaptor_forward, attention_weights, cross_attention_forward, grad_check, identity_loss, weighted_bce_loss,
    A1Source, BceWeighting, FusionDims, FusionParams, FusionStrategy, LossSettings, TrainSample,
};
use crate::metrics::{clear_metrics, hota_metrics, id_metrics, tpr_at_far, EvalOptions, VerificationSet};
use crate::motio::{read_detections, read_ground_truth, write_detections, write_ground_truth, DetRecord};
use crate::pipeline::{simulate_benchmark, BenchmarkConfig};
use crate::types::{BBox, GtEntry, TrackOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<24} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn brute_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.len()])
}

fn assignment() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for n in 1..=5 {
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let mut cm = CostMatrix::new(n, n);
            for (r, row) in rows.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    cm.set(r, c, *v);
                }
            }
            let a = solve_assignment(&cm, f64::INFINITY);
            let total: f64 = a.matches.iter().map(|&(r, c)| rows[r][c]).sum();
            worst = worst.max((total - brute_min(&rows)).abs());
        }
    }
    check("assignment-oracle", worst < 1e-9, format!("max gap {worst:.2e} over 100 matrices"))
}

fn gradients() -> Check {
    let mut worst: f64 = 0.0;
    for strategy in FusionStrategy::ALL {
        for seed in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = FusionDims { dim: 8, tokens: 2, classes: 3 };
            let Ok(mut p) = FusionParams::init(dims, strategy, seed) else {
                return check("gradient-check", false, format!("{strategy}: init failed"));
            };
            p.a1_source = A1Source::LinearHead;
            let e: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sample = TrainSample {
                embedding: e,
                attr_obs: (0..NUM_ATTRIBUTES).map(|_| rng.random()).collect(),
                label: rng.random_range(0..3),
                target: (0..NUM_ATTRIBUTES).map(|_| f64::from(rng.random_bool(0.4))).collect(),
            };
            let settings = LossSettings { lambda_id: 0.5, ..LossSettings::uniform(0.5) };
            worst = worst.max(grad_check(&p, &sample, &settings, 1e-4));
        }
    }
    check("gradient-check", worst <= 1e-4, format!("max relative error {worst:.2e}"))
}

fn attention() -> Check {
    let dims = FusionDims { dim: 12, tokens: 3, classes: 2 };
    let p = FusionParams::init(dims, FusionStrategy::PreprocAttr, 4).expect("valid dims");
    let e: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    let a: Vec<f64> = (0..NUM_ATTRIBUTES).map(|j| (j % 3) as f64 / 2.0).collect();
    let w = attention_weights(&e, &a, &p).expect("dims match");
    let row_err = w.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);

    let zero = FusionParams::zeros(dims, FusionStrategy::PreprocAttr).expect("valid dims");
    let ident = adaptor_forward(&e, &zero).expect("dims match") == e;

    let one = FusionDims { dim: 12, tokens: 1, classes: 2 };
    let p1 = FusionParams::init(one, FusionStrategy::PreprocAttr, 4).expect("valid dims");
    let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
    let degenerate = cross_attention_forward(&e, &a, &p1).ok() == cross_attention_forward(&e, &b, &p1).ok();
    check(
        "attention-exactness",
        row_err <= 1e-9 && ident && degenerate,
        format!("row sum error {row_err:.1e}, zero adaptor identity {ident}, single token {degenerate}"),
    )
}

fn losses() -> Check {
    let half = [0.5; NUM_ATTRIBUTES];
    let ones = [1.0; NUM_ATTRIBUTES];
    let ln2 = std::f64::consts::LN_2;
    let u = weighted_bce_loss(&half, &ones, &[0.5; NUM_ATTRIBUTES], 1.0, BceWeighting::Uniform).unwrap_or(f64::NAN);
    let w = weighted_bce_loss(&half, &ones, &[0.1; NUM_ATTRIBUTES], 1.0, BceWeighting::Frequency).unwrap_or(f64::NAN);
    let dims = FusionDims { dim: 4, tokens: 1, classes: 7 };
    let p = FusionParams::zeros(dims, FusionStrategy::PreprocAttr).expect("valid dims");
    let id = identity_loss(&[0.3, -0.2, 0.1, 0.0], 2, &p).unwrap_or(f64::NAN);
    let ok = (u - ln2).abs() <= 1e-9 && (w - 0.9f64.exp() * ln2).abs() <= 1e-6 && (id - 7f64.ln()).abs() <= 1e-9;
    check("loss-anchors", ok, format!("uniform {u:.9}, weighted {w:.6}, identity {id:.9}"))
}

fn metrics() -> Check {
    let b = |x: f64| BBox { left: x, top: 0.0, width: 50.0, height: 100.0 };
    let g = |frame, identity, x| GtEntry { frame, identity, bbox: b(x), active: true, visibility: 1.0 };
    let p = |frame, id, x| TrackOutput { frame, id, bbox: b(x), confidence: 1.0 };
    let gt: Vec<GtEntry> = (1..=4).map(|f| g(f, 1, 0.0)).collect();
    let opts = EvalOptions::default();

    let perfect: Vec<TrackOutput> = gt.iter().map(|e| p(e.frame, 1, 0.0)).collect();
    let c = clear_metrics(&gt, &perfect, &opts);
    let i = id_metrics(&gt, &perfect, &opts);
    let h = hota_metrics(&gt, &perfect, &opts);
    let perfect_ok = matches!((c, i, h), (Ok(c), Ok(i), Ok(h)) if c.mota == 1.0 && i.idf1 == 1.0 && (h.hota - 1.0).abs() < 1e-12);

    let split = vec![p(1, 1, 0.0), p(2, 1, 0.0), p(3, 2, 0.0), p(4, 2, 0.0)];
    let idf1 = id_metrics(&gt, &split, &opts).map(|m| m.idf1).unwrap_or(f64::NAN);
    let idsw = clear_metrics(&gt, &split, &opts).map(|m| m.id_switches).unwrap_or(usize::MAX);
    check(
        "metrics-fixtures",
        perfect_ok && idf1 == 0.5 && idsw == 1,
        format!("perfect scores 1.0: {perfect_ok}, split trajectory IDF1 {idf1}, IDSW {idsw}"),
    )
}

fn verification() -> Check {
    let set = VerificationSet {
        positives: (0..100).map(|i| 0.9 + i as f64 * 1e-4).collect(),
        negatives: (0..1000).map(|i| i as f64 * 1e-4).collect(),
    };
    let res = tpr_at_far(&set, &[0.1, 0.01, 0.001]);
    let ok = matches!(&res, Ok(r) if r.iter().all(|&(_, t)| t == 1.0));
    check("tpr-at-far", ok, format!("{res:?}"))
}

fn determinism() -> Check {
    let mut cfg = BenchmarkConfig { sequences: 2, seed: 11, ..Default::default() };
    cfg.world.n_frames = 30;
    cfg.world.embedding.dim = 16;
    let render = || -> Option<Vec<(Vec<u8>, Vec<u8>)>> {
        let seqs = simulate_benchmark(&cfg).ok()?;
        seqs.iter()
            .map(|s| {
                let (mut gt, mut det) = (Vec::new(), Vec::new());
                write_ground_truth(&mut gt, &s.gt).ok()?;
                let recs: Vec<DetRecord> = s
                    .frames
                    .iter()
                    .flat_map(|(_, d)| d)
                    .map(|d| DetRecord { frame: d.frame, bbox: d.bbox, confidence: d.confidence })
                    .collect();
                write_detections(&mut det, &recs).ok()?;
                Some((gt, det))
            })
            .collect()
    };
    let (a, b) = (render(), render());
    let same = a.is_some() && a == b;
    let round_trip = a.as_ref().is_some_and(|files| {
        files.iter().all(|(gt, det)| {
            let mut gt2 = Vec::new();
            let mut det2 = Vec::new();
            read_ground_truth(&gt[..]).and_then(|g| write_ground_truth(&mut gt2, &g)).is_ok()
                && read_detections(&det[..]).and_then(|d| write_detections(&mut det2, &d)).is_ok()
                && gt2 == *gt
                && det2 == *det
        })
    });
    check("determinism", same && round_trip, format!("identical output {same}, parse/write round trip {round_trip}"))
}

/// Runs every check; none of them touches the file system.
pub fn run_all() -> Vec<Check> {
    vec![assignment(), gradients(), attention(), losses(), metrics(), verification(), determinism()]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{c}");
        }
    }
}
