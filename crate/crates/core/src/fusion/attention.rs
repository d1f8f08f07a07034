use nalgebra::{DMatrix, DVector};

use super::params::{Attn, FusionParams};
use crate::error::{Error, Result};

/// Intermediate values of one attention call kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    qp: DMatrix<f64>,
    kp: DMatrix<f64>,
    vp: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

pub(crate) fn softmax_rows(s: &mut DMatrix<f64>) {
    for mut row in s.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// `softmax(scale · (Q Wq^T)(K Wk^T)^T) (K Wv^T)`; rows of the result follow
/// the rows of `q`.
pub(crate) fn attn_forward(w: &Attn, q: &DMatrix<f64>, k: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, AttnCache) {
    let qp = q * w.wq.transpose();
    let kp = k * w.wk.transpose();
    let vp = k * w.wv.transpose();
    let mut p = &qp * kp.transpose();
    if scale != 1.0 {
        p *= scale;
    }
    softmax_rows(&mut p);
    let out = &p * &vp;
    (out, AttnCache { q: q.clone(), k: k.clone(), qp, kp, vp, p })
}

/// Accumulates weight gradients into `g` and returns `(dQ, dK)`.
pub(crate) fn attn_backward(
    w: &Attn,
    c: &AttnCache,
    d_out: &DMatrix<f64>,
    scale: f64,
    g: &mut Attn,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let dp = d_out * c.vp.transpose();
    let dvp = c.p.transpose() * d_out;
    let mut ds = c.p.component_mul(&dp);
    for (mut row, p_row) in ds.row_iter_mut().zip(c.p.row_iter()) {
        let s = row.sum();
        row -= p_row * s;
    }
    if scale != 1.0 {
        ds *= scale;
    }
    let dqp = &ds * &c.kp;
    let dkp = ds.transpose() * &c.qp;
    g.wq += dqp.transpose() * &c.q;
    g.wk += dkp.transpose() * &c.k;
    g.wv += dvp.transpose() * &c.k;
    let dq = dqp * &w.wq;
    let dk = dkp * &w.wk + dvp * &w.wv;
    (dq, dk)
}

pub(crate) fn attention_scale(params: &FusionParams) -> f64 {
    if params.scaled_attention {
        1.0 / (params.dims.token_dim() as f64).sqrt()
    } else {
        1.0
    }
}

/// Splits an embedding into `tokens` consecutive rows.
pub(crate) fn tokenize(e: &[f64], tokens: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(tokens, e.len() / tokens, e)
}

pub(crate) fn untokenize(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

/// Query tokens: attribute value times its learned embedding row.
pub(crate) fn query_tokens(a1: &[f64], attr_embed: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = attr_embed.clone();
    for (mut row, a) in q.row_iter_mut().zip(a1) {
        row *= *a;
    }
    q
}

pub(crate) fn check_dim(params: &FusionParams, e: &[f64]) -> Result<()> {
    if e.len() != params.dims.dim {
        return Err(Error::DimensionMismatch { expected: params.dims.dim, got: e.len() });
    }
    Ok(())
}

/// Residual MLP block: `ReLU(W2 (W1 e + b1) + b2) + e`.
pub fn adaptor_forward(e1: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    check_dim(params, e1)?;
    let t = &params.tensors;
    let e = DVector::from_column_slice(e1);
    let h1 = &t.w1 * &e + t.b1.column(0);
    let h2 = &t.w2 * h1 + t.b2.column(0);
    Ok(h2.iter().zip(e1).map(|(h, x)| h.max(0.0) + x).collect())
}

/// Attention rows of the main block for one embedding and attribute query.
pub fn attention_weights(e2: &[f64], a1: &[f64], params: &FusionParams) -> Result<DMatrix<f64>> {
    check_dim(params, e2)?;
    let x = tokenize(e2, params.dims.tokens);
    let q = query_tokens(a1, &params.tensors.attr_embed);
    Ok(attn_forward(&params.tensors.main, &q, &x, attention_scale(params)).1.p)
}

/// Main cross-attention followed by the per-token attribute head.
pub fn cross_attention_forward(e2: &[f64], a1: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    check_dim(params, e2)?;
    let x = tokenize(e2, params.dims.tokens);
    let q = query_tokens(a1, &params.tensors.attr_embed);
    let (o, _) = attn_forward(&params.tensors.main, &q, &x, attention_scale(params));
    Ok(head_forward(&o, params))
}

pub(crate) fn head_forward(o: &DMatrix<f64>, params: &FusionParams) -> Vec<f64> {
    let t = &params.tensors;
    o.row_iter()
        .zip(t.head_h.row_iter())
        .zip(t.head_c.iter())
        .map(|((o, h), c)| o.dot(&h) + c)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::params::{FusionDims, FusionStrategy};

    fn params(d: usize, tokens: usize) -> FusionParams {
        FusionParams::init(FusionDims { dim: d, tokens, classes: 3 }, FusionStrategy::PreprocAttr, 9).unwrap()
    }

    #[test]
    fn zero_adaptor_is_identity() {
        let p = FusionParams::zeros(FusionDims { dim: 8, tokens: 2, classes: 1 }, FusionStrategy::PreprocAttr).unwrap();
        let e: Vec<f64> = (0..8).map(|i| (i as f64 - 3.3) * 0.731).collect();
        assert_eq!(adaptor_forward(&e, &p).unwrap(), e);
    }

    #[test]
    fn identity_adaptor_doubles_positive_input() {
        let mut p = params(6, 2);
        p.tensors.w1 = DMatrix::identity(6, 6);
        p.tensors.w2 = DMatrix::identity(6, 6);
        p.tensors.b1.fill(0.0);
        p.tensors.b2.fill(0.0);
        let e = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let out = adaptor_forward(&e, &p).unwrap();
        for (o, x) in out.iter().zip(&e) {
            assert_eq!(*o, 2.0 * x);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let p = params(16, 4);
        let e: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let a: Vec<f64> = (0..32).map(|i| (i % 3) as f64 / 2.0).collect();
        let w = attention_weights(&e, &a, &p).unwrap();
        assert_eq!(w.shape(), (32, 4));
        for row in w.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token_ignores_queries() {
        let p = params(8, 1);
        let e: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let a = cross_attention_forward(&e, &[0.0; 32], &p).unwrap();
        let b = cross_attention_forward(&e, &[1.0; 32], &p).unwrap();
        assert_eq!(a, b);
        // with one key every output token is W_V times that token
        let v = &p.tensors.main.wv * DVector::from_column_slice(&e);
        for j in 0..32 {
            let expect = p.tensors.head_h.row(j).transpose().dot(&v) + p.tensors.head_c[j];
            assert!((a[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn tokens_round_trip() {
        let e: Vec<f64> = (0..12).map(f64::from).collect();
        let x = tokenize(&e, 3);
        assert_eq!(x.row(1).iter().copied().collect::<Vec<_>>(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(untokenize(&x), e);
    }
}
