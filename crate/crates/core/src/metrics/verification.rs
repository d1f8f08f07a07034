use crate::error::{Error, Result};

pub const DEFAULT_FAR_LEVELS: [f64; 3] = [0.1, 0.01, 0.001];

/// Similarity scores (higher = more alike) of same-identity and
/// different-identity pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl VerificationSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        VerificationSet { positives, negatives }
    }
}

/// True positive rate at each false acceptance rate. The acceptance threshold
/// is the ⌈far·N⌉-th highest negative score.
pub fn tpr_at_far(vset: &VerificationSet, far_levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    if vset.positives.is_empty() || vset.negatives.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if vset.positives.iter().chain(&vset.negatives).any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite similarity score".into()));
    }
    let mut neg = vset.negatives.clone();
    neg.sort_by(|a, b| b.total_cmp(a));
    let n = neg.len();
    far_levels
        .iter()
        .map(|&far| {
            if !(far > 0.0 && far <= 1.0) {
                return Err(Error::Config(format!("far level {far} outside (0, 1]")));
            }
            let expected = far * n as f64;
            if expected < 1.0 - 1e-9 {
                return Err(Error::InsufficientNegatives {
                    far,
                    needed: (1.0 / far).ceil() as usize,
                    have: n,
                });
            }
            let needed = ((expected - 1e-9).ceil() as usize).clamp(1, n);
            let threshold = neg[needed - 1];
            let hits = vset.positives.iter().filter(|&&s| s >= threshold).count();
            Ok((far, hits as f64 / vset.positives.len() as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_scores() {
        let v = VerificationSet::new(vec![0.9; 50], (0..2000).map(|i| i as f64 / 4000.0).collect());
        for (_, tpr) in tpr_at_far(&v, &DEFAULT_FAR_LEVELS).unwrap() {
            assert_eq!(tpr, 1.0);
        }
    }

    #[test]
    fn exchangeable_scores_give_tpr_near_far() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let neg = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let t = tpr_at_far(&VerificationSet::new(pos, neg), &[0.1]).unwrap();
        assert!((t[0].1 - 0.1).abs() <= 0.02, "{t:?}");
    }

    #[test]
    fn too_few_negatives() {
        let v = VerificationSet::new(vec![1.0], vec![0.0; 500]);
        let err = tpr_at_far(&v, &[0.001]).unwrap_err();
        assert!(err.to_string().contains("insufficient negatives"));
    }

    #[test]
    fn threshold_rank() {
        // 10 negatives, far 0.2 -> second-highest negative (0.8) is the bar
        let neg: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let v = VerificationSet::new(vec![0.75, 0.8, 0.85, 0.95], neg);
        assert_eq!(tpr_at_far(&v, &[0.2]).unwrap()[0].1, 0.75);
    }

    proptest! {
        #[test]
        fn monotone_in_far(pos in proptest::collection::vec(0.0f64..1.0, 1..40),
                           neg in proptest::collection::vec(0.0f64..1.0, 10..200)) {
            let levels = [0.1, 0.2, 0.5, 1.0];
            let t = tpr_at_far(&VerificationSet::new(pos, neg), &levels).unwrap();
            for w in t.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }
    }
}
