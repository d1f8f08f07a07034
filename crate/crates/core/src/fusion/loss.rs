use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::sigmoid;
use super::params::FusionParams;
use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BceWeighting {
    /// Positive term scaled by `exp((1 - p)/σ²)`, negative by `exp(p/σ²)`.
    #[default]
    Frequency,
    Uniform,
}

fn bce_weights(freq: f64, sigma: f64, weighting: BceWeighting) -> (f64, f64) {
    match weighting {
        BceWeighting::Uniform => (1.0, 1.0),
        BceWeighting::Frequency => {
            let s2 = sigma * sigma;
            (((1.0 - freq) / s2).exp(), (freq / s2).exp())
        }
    }
}

/// Mean weighted binary cross-entropy over the attributes.
pub fn weighted_bce_loss(
    pred: &[f64],
    target: &[f64],
    pos_freq: &[f64],
    sigma: f64,
    weighting: BceWeighting,
) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: target.len() });
    }
    if pos_freq.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: pos_freq.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for ((p, y), f) in pred.iter().zip(target).zip(pos_freq) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let (wp, wn) = bce_weights(*f, sigma, weighting);
        sum -= wp * y * p.ln() + wn * (1.0 - y) * (1.0 - p).ln();
    }
    Ok(sum / pred.len() as f64)
}

/// Per-attribute contributions to the mean loss.
pub(crate) fn bce_terms(logits: &[f64], target: &[f64], pos_freq: &[f64], sigma: f64, weighting: BceWeighting) -> Vec<f64> {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(target)
        .zip(pos_freq)
        .map(|((z, y), f)| {
            let pc = sigmoid(*z).clamp(BCE_EPS, 1.0 - BCE_EPS);
            let (wp, wn) = bce_weights(*f, sigma, weighting);
            -(wp * y * pc.ln() + wn * (1.0 - y) * (1.0 - pc).ln()) / n
        })
        .collect()
}

/// Loss over attribute logits and its gradient with respect to them.
pub(crate) fn bce_from_logits(
    logits: &[f64],
    target: &[f64],
    pos_freq: &[f64],
    sigma: f64,
    weighting: BceWeighting,
) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .zip(pos_freq)
        .map(|((z, y), f)| {
            let p = sigmoid(*z);
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let (wp, wn) = bce_weights(*f, sigma, weighting);
            loss -= wp * y * pc.ln() + wn * (1.0 - y) * (1.0 - pc).ln();
            if pc != p {
                0.0
            } else {
                (-wp * y * (1.0 - p) + wn * (1.0 - y) * p) / n
            }
        })
        .collect();
    (loss / n, grad)
}

/// Softmax cross-entropy and its gradient.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / sum - f64::from(u8::from(i == label)))
        .collect();
    (loss, grad)
}

pub(crate) fn id_logits(params: &FusionParams, e_out: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &params.tensors.id_w * e_out;
    for mut col in z.column_iter_mut() {
        col += params.tensors.id_b.column(0);
    }
    z
}

/// Identity classification loss of an output embedding.
pub fn identity_loss(e_out: &[f64], label: usize, params: &FusionParams) -> Result<f64> {
    let k = params.dims.classes;
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    if e_out.len() != params.dims.dim {
        return Err(Error::DimensionMismatch { expected: params.dims.dim, got: e_out.len() });
    }
    let z = id_logits(params, &DMatrix::from_column_slice(e_out.len(), 1, e_out));
    Ok(cross_entropy(z.as_slice(), label).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::params::{FusionDims, FusionStrategy};

    #[test]
    fn uniform_half_is_ln2() {
        let l = weighted_bce_loss(&[0.5; 32], &[1.0; 32], &[0.3; 32], 1.0, BceWeighting::Uniform).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn weighted_single_attribute() {
        let l = weighted_bce_loss(&[0.5], &[1.0], &[0.1], 1.0, BceWeighting::Frequency).unwrap();
        assert!((l - 0.9f64.exp() * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let t: Vec<f64> = (0..32).map(|i| f64::from(i % 2)).collect();
        let l = weighted_bce_loss(&t, &t, &[0.5; 32], 1.0, BceWeighting::Uniform).unwrap();
        assert!((0.0..=1.1e-7).contains(&l));
    }

    #[test]
    fn length_mismatch() {
        assert!(weighted_bce_loss(&[0.5; 3], &[1.0; 2], &[0.5; 3], 1.0, BceWeighting::Uniform).is_err());
    }

    #[test]
    fn logit_path_matches_probability_path() {
        let z: Vec<f64> = (0..32).map(|i| (i as f64 - 16.0) / 3.0).collect();
        let y: Vec<f64> = (0..32).map(|i| f64::from(i % 3 == 0)).collect();
        let f: Vec<f64> = (0..32).map(|i| 0.05 + i as f64 / 40.0).collect();
        let p: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
        let a = weighted_bce_loss(&p, &y, &f, 0.8, BceWeighting::Frequency).unwrap();
        let (b, _) = bce_from_logits(&z, &y, &f, 0.8, BceWeighting::Frequency);
        assert!((a - b).abs() < 1e-14);
    }

    fn id_params(k: usize) -> FusionParams {
        FusionParams::zeros(FusionDims { dim: 4, tokens: 1, classes: k }, FusionStrategy::PreprocAttr).unwrap()
    }

    #[test]
    fn identity_loss_anchors() {
        let l = identity_loss(&[0.3, -1.0, 2.0, 0.0], 2, &id_params(4)).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert_eq!(identity_loss(&[0.3, -1.0, 2.0, 0.0], 0, &id_params(1)).unwrap(), 0.0);
        assert!(identity_loss(&[0.0; 4], 4, &id_params(4)).is_err());
    }

    #[test]
    fn identity_loss_falls_with_margin() {
        let mut p = id_params(3);
        let mut prev = f64::INFINITY;
        for margin in [1.0, 2.0, 4.0] {
            p.tensors.id_b[0] = margin;
            let l = identity_loss(&[0.0; 4], 0, &p).unwrap();
            assert!(l < prev && l > 0.0);
            prev = l;
        }
    }
}
