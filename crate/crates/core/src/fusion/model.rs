use nalgebra::{DMatrix, DVector};

use super::attention::{
    attention_scale, attn_backward, attn_forward, check_dim, head_forward, query_tokens, tokenize, untokenize,
    AttnCache,
};
use super::params::{A1Source, FusionParams, FusionStrategy, Tensors};
use crate::attributes::{AttributeVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::types::Embedding;

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

enum Stage {
    Main(AttnCache),
    Both { sa: AttnCache, main: AttnCache },
    Cross(Vec<(AttnCache, AttnCache)>),
    SelfEnhance { rounds: Vec<(AttnCache, AttnCache)>, main: AttnCache },
    Concat(AttnCache),
}

struct SampleTrace {
    a1: Vec<f64>,
    stage: Stage,
    o: DMatrix<f64>,
}

/// Forward values of a batch; columns are samples.
pub(crate) struct BatchTrace {
    e1: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    linear_a1: bool,
    samples: Vec<SampleTrace>,
    pub logits: DMatrix<f64>,
}

fn add_bias(m: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        col += b.column(0);
    }
}

fn linear_a1(params: &FusionParams, e1: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &params.tensors.a1_w * e1;
    add_bias(&mut z, &params.tensors.a1_b);
    z.map(sigmoid)
}

/// Attribute queries for one embedding according to the configured source.
pub fn a1_raw(params: &FusionParams, e1: &[f64], observed: &AttributeVector) -> Result<Vec<f64>> {
    check_dim(params, e1)?;
    Ok(match params.a1_source {
        A1Source::Observed => observed.values().to_vec(),
        A1Source::LinearHead => {
            linear_a1(params, &DMatrix::from_column_slice(e1.len(), 1, e1)).iter().copied().collect()
        }
    })
}

fn stage_forward(
    params: &FusionParams,
    strategy: FusionStrategy,
    x0: DMatrix<f64>,
    q0: DMatrix<f64>,
) -> (Stage, DMatrix<f64>) {
    let t = &params.tensors;
    let s = attention_scale(params);
    match strategy {
        FusionStrategy::AttrOnly | FusionStrategy::PreprocAttr => {
            let (o, c) = attn_forward(&t.main, &q0, &x0, s);
            (Stage::Main(c), o)
        }
        FusionStrategy::PreprocBoth => {
            let (sa_out, sa) = attn_forward(&t.sa_attr, &q0, &q0, s);
            let q1 = q0 + sa_out;
            let (o, main) = attn_forward(&t.main, &q1, &x0, s);
            (Stage::Both { sa, main }, o)
        }
        FusionStrategy::CrossFertilize(r) => {
            let (mut q, mut x) = (q0, x0);
            let mut caches = Vec::with_capacity(r as usize);
            for _ in 0..r {
                let (dq, cm) = attn_forward(&t.main, &q, &x, s);
                let (dx, cr) = attn_forward(&t.rev, &x, &q, s);
                q += dq;
                x += dx;
                caches.push((cm, cr));
            }
            (Stage::Cross(caches), q)
        }
        FusionStrategy::SelfEnhance(r) => {
            let (mut q, mut x) = (q0, x0);
            let mut rounds = Vec::with_capacity(r as usize);
            for _ in 0..r {
                let (dq, ca) = attn_forward(&t.sa_attr, &q, &q, s);
                let (dx, ce) = attn_forward(&t.sa_emb, &x, &x, s);
                q += dq;
                x += dx;
                rounds.push((ca, ce));
            }
            let (o, main) = attn_forward(&t.main, &q, &x, s);
            (Stage::SelfEnhance { rounds, main }, o)
        }
        FusionStrategy::ConcatThenSelf => {
            let n = x0.nrows();
            let mut z = DMatrix::zeros(n + NUM_ATTRIBUTES, x0.ncols());
            z.rows_mut(0, n).copy_from(&x0);
            z.rows_mut(n, NUM_ATTRIBUTES).copy_from(&q0);
            let (dz, c) = attn_forward(&t.sa_joint, &z, &z, s);
            let out = (z + dz).rows(n, NUM_ATTRIBUTES).into_owned();
            (Stage::Concat(c), out)
        }
    }
}

/// Returns `(dX0, dQ0)`.
fn stage_backward(
    params: &FusionParams,
    stage: &Stage,
    d_o: DMatrix<f64>,
    tokens: usize,
    g: &mut Tensors,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = &params.tensors;
    let s = attention_scale(params);
    match stage {
        Stage::Main(c) => {
            let (dq, dx) = attn_backward(&t.main, c, &d_o, s, &mut g.main);
            (dx, dq)
        }
        Stage::Both { sa, main } => {
            let (dq1, dx) = attn_backward(&t.main, main, &d_o, s, &mut g.main);
            let (a, b) = attn_backward(&t.sa_attr, sa, &dq1, s, &mut g.sa_attr);
            (dx, dq1 + a + b)
        }
        Stage::Cross(caches) => {
            let mut dq = d_o;
            let mut dx = DMatrix::zeros(tokens, dq.ncols());
            for (cm, cr) in caches.iter().rev() {
                let (mq, mk) = attn_backward(&t.main, cm, &dq, s, &mut g.main);
                let (rx, rk) = attn_backward(&t.rev, cr, &dx, s, &mut g.rev);
                dq += mq + rk;
                dx += mk + rx;
            }
            (dx, dq)
        }
        Stage::SelfEnhance { rounds, main } => {
            let (mut dq, mut dx) = attn_backward(&t.main, main, &d_o, s, &mut g.main);
            for (ca, ce) in rounds.iter().rev() {
                let (a, b) = attn_backward(&t.sa_attr, ca, &dq, s, &mut g.sa_attr);
                let (c, d) = attn_backward(&t.sa_emb, ce, &dx, s, &mut g.sa_emb);
                dq += a + b;
                dx += c + d;
            }
            (dx, dq)
        }
        Stage::Concat(c) => {
            let mut dz = DMatrix::zeros(tokens + NUM_ATTRIBUTES, d_o.ncols());
            dz.rows_mut(tokens, NUM_ATTRIBUTES).copy_from(&d_o);
            let (a, b) = attn_backward(&t.sa_joint, c, &dz, s, &mut g.sa_joint);
            let dz = dz + a + b;
            (dz.rows(0, tokens).into_owned(), dz.rows(tokens, NUM_ATTRIBUTES).into_owned())
        }
    }
}

/// Runs the head on a batch. `a1` gives the query values per column; when
/// `None` they come from the learned linear head.
pub(crate) fn forward_batch(
    params: &FusionParams,
    strategy: FusionStrategy,
    e1: DMatrix<f64>,
    a1: Option<&[Vec<f64>]>,
) -> BatchTrace {
    let tn = &params.tensors;
    let (h1, h2, e2) = if strategy.uses_adaptor() {
        let mut h1 = &tn.w1 * &e1;
        add_bias(&mut h1, &tn.b1);
        let mut h2 = &tn.w2 * &h1;
        add_bias(&mut h2, &tn.b2);
        let e2 = h2.map(|v| v.max(0.0)) + &e1;
        (h1, h2, e2)
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), e1.clone())
    };
    let linear = a1.is_none();
    let a1_cols: Vec<Vec<f64>> = match a1 {
        Some(a) => a.to_vec(),
        None => linear_a1(params, &e1).column_iter().map(|c| c.iter().copied().collect()).collect(),
    };
    let mut logits = DMatrix::zeros(NUM_ATTRIBUTES, e1.ncols());
    let samples = e2
        .column_iter()
        .zip(a1_cols)
        .enumerate()
        .map(|(i, (col, a1))| {
            let x0 = tokenize(col.as_slice(), params.dims.tokens);
            let q0 = query_tokens(&a1, &tn.attr_embed);
            let (stage, o) = stage_forward(params, strategy, x0, q0);
            logits.set_column(i, &DVector::from_vec(head_forward(&o, params)));
            SampleTrace { a1, stage, o }
        })
        .collect();
    BatchTrace { e1, h1, h2, e2, linear_a1: linear, samples, logits }
}

/// Backpropagates attribute-logit gradients plus an optional gradient on the
/// output embedding.
pub(crate) fn backward_batch(
    params: &FusionParams,
    trace: &BatchTrace,
    d_logits: &DMatrix<f64>,
    d_e_out: Option<&DMatrix<f64>>,
    g: &mut Tensors,
) {
    let tn = &params.tensors;
    let (d, b) = trace.e1.shape();
    let tokens = params.dims.tokens;
    let mut d_e2 = match d_e_out {
        Some(m) => m.clone(),
        None => DMatrix::zeros(d, b),
    };
    let mut d_a1 = DMatrix::zeros(NUM_ATTRIBUTES, b);
    for (i, s) in trace.samples.iter().enumerate() {
        let dl = d_logits.column(i);
        let mut d_o = tn.head_h.clone();
        for (j, mut row) in d_o.row_iter_mut().enumerate() {
            row *= dl[j];
        }
        for j in 0..NUM_ATTRIBUTES {
            for c in 0..s.o.ncols() {
                g.head_h[(j, c)] += dl[j] * s.o[(j, c)];
            }
            g.head_c[j] += dl[j];
        }
        let (dx0, dq0) = stage_backward(params, &s.stage, d_o, tokens, g);
        for j in 0..NUM_ATTRIBUTES {
            let dq = dq0.row(j);
            for c in 0..dq.len() {
                g.attr_embed[(j, c)] += s.a1[j] * dq[c];
            }
            d_a1[(j, i)] = dq.dot(&tn.attr_embed.row(j));
        }
        let mut col = d_e2.column_mut(i);
        for (c, v) in col.iter_mut().zip(untokenize(&dx0)) {
            *c += v;
        }
    }
    if trace.linear_a1 {
        let mut dz = d_a1;
        for (i, s) in trace.samples.iter().enumerate() {
            for j in 0..NUM_ATTRIBUTES {
                let a = s.a1[j];
                dz[(j, i)] *= a * (1.0 - a);
            }
        }
        g.a1_w += &dz * trace.e1.transpose();
        g.a1_b += row_sums(&dz);
    }
    if trace.h2.nrows() > 0 {
        let dh2 = d_e2.zip_map(&trace.h2, |g, h| if h > 0.0 { g } else { 0.0 });
        g.w2 += &dh2 * trace.h1.transpose();
        g.b2 += row_sums(&dh2);
        let dh1 = tn.w2.transpose() * &dh2;
        g.w1 += &dh1 * trace.e1.transpose();
        g.b1 += row_sums(&dh1);
    }
}

fn row_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(m.nrows(), 1, m.row_iter().map(|r| r.sum()))
}

/// Attribute probabilities and the adapted embedding for one detection.
pub fn predict_attributes(
    e1: &[f64],
    a1_raw: &[f64],
    strategy: FusionStrategy,
    params: &FusionParams,
) -> Result<(AttributeVector, Embedding)> {
    check_dim(params, e1)?;
    strategy.validate()?;
    if a1_raw.len() != NUM_ATTRIBUTES {
        return Err(Error::DimensionMismatch { expected: NUM_ATTRIBUTES, got: a1_raw.len() });
    }
    let trace = forward_batch(params, strategy, DMatrix::from_column_slice(e1.len(), 1, e1), Some(&[a1_raw.to_vec()]));
    let probs = AttributeVector::prob_from_slice(&trace.logits.iter().map(|z| sigmoid(*z)).collect::<Vec<_>>())?;
    Ok((probs, Embedding(trace.e2.iter().copied().collect())))
}

/// Concatenation `[E; A2]` used by the feature-concatenation association mode.
pub fn fuse_for_association(e: &Embedding, a2: &AttributeVector) -> Embedding {
    let mut v = e.0.clone();
    v.extend_from_slice(a2.values());
    Embedding(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::attention::{adaptor_forward, cross_attention_forward};
    use crate::fusion::params::FusionDims;
    use crate::distance::cosine_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
        let e = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = (0..NUM_ATTRIBUTES).map(|_| rng.random::<f64>()).collect();
        (e, a)
    }

    #[test]
    fn zero_adaptor_path_is_plain_cross_attention() {
        let dims = FusionDims { dim: 16, tokens: 4, classes: 2 };
        let mut p = FusionParams::init(dims, FusionStrategy::PreprocAttr, 3).unwrap();
        for m in [&mut p.tensors.w1, &mut p.tensors.w2, &mut p.tensors.b1, &mut p.tensors.b2] {
            m.fill(0.0);
        }
        let (e, a) = random_input(&mut ChaCha8Rng::seed_from_u64(1), 16);
        let (probs, e_out) = predict_attributes(&e, &a, FusionStrategy::PreprocAttr, &p).unwrap();
        let logits = cross_attention_forward(&e, &a, &p).unwrap();
        for (pr, z) in probs.values().iter().zip(logits) {
            assert_eq!(*pr, sigmoid(z));
        }
        assert_eq!(e_out.0, e);
        let (only, _) = predict_attributes(&e, &a, FusionStrategy::AttrOnly, &p).unwrap();
        assert_eq!(only, probs);
    }

    #[test]
    fn outputs_are_strict_probabilities() {
        let dims = FusionDims { dim: 8, tokens: 2, classes: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in FusionStrategy::ALL {
            let p = FusionParams::init(dims, s, 7).unwrap();
            let (e, a) = random_input(&mut rng, 8);
            let (probs, e_out) = predict_attributes(&e, &a, s, &p).unwrap();
            assert!(probs.values().iter().all(|v| *v > 0.0 && *v < 1.0));
            assert_eq!(e_out.dim(), 8);
            if s.uses_adaptor() {
                assert_eq!(e_out.0, adaptor_forward(&e, &p).unwrap());
            }
        }
    }

    #[test]
    fn extra_rounds_change_the_output() {
        let dims = FusionDims { dim: 16, tokens: 4, classes: 2 };
        for seed in 0..100 {
            let p = FusionParams::init(dims, FusionStrategy::CrossFertilize(1), seed).unwrap();
            let (e, a) = random_input(&mut ChaCha8Rng::seed_from_u64(seed + 1000), 16);
            let one = predict_attributes(&e, &a, FusionStrategy::CrossFertilize(1), &p).unwrap().0;
            let two = predict_attributes(&e, &a, FusionStrategy::CrossFertilize(2), &p).unwrap().0;
            assert_ne!(one, two, "seed {seed}");
        }
    }

    #[test]
    fn fused_dimensions() {
        let a2 = AttributeVector::splat(0.25).unwrap();
        assert_eq!(fuse_for_association(&Embedding::zeros(512), &a2).dim(), 544);
        assert_eq!(fuse_for_association(&Embedding::zeros(16), &a2).dim(), 48);
    }

    #[test]
    fn zero_attributes_keep_embedding_geometry() {
        let zero = AttributeVector::splat(0.0).unwrap();
        let u = Embedding(vec![1.0, 2.0, -0.5]);
        let v = Embedding(vec![0.3, -1.0, 2.0]);
        let fused = cosine_distance(&fuse_for_association(&u, &zero), &fuse_for_association(&v, &zero)).unwrap();
        let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
        let direct = 1.0 - dot / (u.norm() * v.norm());
        assert!((fused - direct).abs() < 1e-12);
    }

    #[test]
    fn dimension_is_checked() {
        let dims = FusionDims { dim: 8, tokens: 2, classes: 2 };
        let p = FusionParams::init(dims, FusionStrategy::PreprocAttr, 1).unwrap();
        assert!(predict_attributes(&[0.0; 7], &[0.0; 32], FusionStrategy::PreprocAttr, &p).is_err());
    }
}
