use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_from_logits, bce_terms, cross_entropy, id_logits, BceWeighting};
use super::model::{backward_batch, forward_batch, sigmoid};
use super::params::{A1Source, FusionDims, FusionParams, FusionStrategy, Tensors};
use crate::attributes::NUM_ATTRIBUTES;
use crate::error::{Error, Result};
use crate::synthgen::{derive_seed, observe_frame_labeled, simulate_sequence, WorldConfig};

/// One labeled detection crop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub embedding: Vec<f64>,
    pub attr_obs: Vec<f64>,
    pub label: usize,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<TrainSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.embedding.len();
        for s in &samples {
            if s.embedding.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.embedding.len() });
            }
            for v in [&s.attr_obs, &s.target] {
                if v.len() != NUM_ATTRIBUTES {
                    return Err(Error::DimensionMismatch { expected: NUM_ATTRIBUTES, got: v.len() });
                }
            }
        }
        let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
        Ok(Dataset { samples, classes })
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.embedding.len())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples where each attribute is set.
    pub fn pos_freq(&self) -> Vec<f64> {
        let mut f = vec![0.0; NUM_ATTRIBUTES];
        for s in &self.samples {
            for (a, t) in f.iter_mut().zip(&s.target) {
                *a += t;
            }
        }
        f.iter().map(|v| v / self.samples.len().max(1) as f64).collect()
    }

    /// Crops of true targets from freshly simulated sequences until `n` are
    /// collected. Labels number (sequence, identity) pairs densely.
    pub fn synthesize(config: &WorldConfig, n: usize) -> Result<Self> {
        config.validate()?;
        let mut samples = Vec::with_capacity(n);
        let mut labels: BTreeMap<(u64, u32), usize> = BTreeMap::new();
        let mut seq = 0u64;
        while samples.len() < n {
            let mut cfg = config.clone();
            cfg.seed = derive_seed(config.seed, seq);
            let bundle = simulate_sequence(&cfg)?;
            let before = samples.len();
            for frame in 1..=bundle.n_frames() {
                for l in observe_frame_labeled(&bundle, frame, &cfg) {
                    let Some(id) = l.identity else { continue };
                    if samples.len() == n {
                        break;
                    }
                    let next = labels.len();
                    let label = *labels.entry((seq, id)).or_insert(next);
                    let card = bundle.card(id).expect("detections come from known identities");
                    samples.push(TrainSample {
                        embedding: l.detection.embedding.0,
                        attr_obs: l.detection.attr_obs.values().to_vec(),
                        label,
                        target: card.attributes.values().to_vec(),
                    });
                }
            }
            if samples.len() == before {
                return Err(Error::EmptyDataset);
            }
            seq += 1;
        }
        Dataset::new(samples)
    }

    /// Splits off every `k`-th sample as a held-out set.
    pub fn split_every(&self, k: usize) -> (Dataset, Dataset) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, s) in self.samples.iter().enumerate() {
            if k > 0 && i % k == k - 1 { b.push(s.clone()) } else { a.push(s.clone()) }
        }
        (Dataset { samples: a, classes: self.classes }, Dataset { samples: b, classes: self.classes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub sigma: f64,
    pub weighting: BceWeighting,
    /// Weight of the identity loss; 0 disables it.
    pub lambda_id: f64,
    pub seed: u64,
    /// Keep the identity loss from shaping the adapted embedding; it then
    /// trains only the identity classifier.
    pub freeze_embedding: bool,
    pub tokens: usize,
    pub scaled_attention: bool,
    pub a1_source: A1Source,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 0.05,
            iterations: 2400,
            batch_size: 16,
            sigma: 1.0,
            weighting: BceWeighting::Frequency,
            lambda_id: 0.1,
            seed: 1,
            freeze_embedding: true,
            tokens: 8,
            scaled_attention: false,
            a1_source: A1Source::Observed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be finite and non-negative");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.lambda_id >= 0.0 && self.lambda_id.is_finite()) {
            return bad("lambda_id must be non-negative");
        }
        if self.batch_size == 0 || self.tokens == 0 {
            return bad("batch_size and tokens must be at least 1");
        }
        Ok(())
    }

    pub fn loss_settings(&self, dataset: &Dataset) -> LossSettings {
        LossSettings {
            pos_freq: dataset.pos_freq(),
            sigma: self.sigma,
            weighting: self.weighting,
            lambda_id: self.lambda_id,
            freeze_embedding: self.freeze_embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSettings {
    pub pos_freq: Vec<f64>,
    pub sigma: f64,
    pub weighting: BceWeighting,
    pub lambda_id: f64,
    pub freeze_embedding: bool,
}

impl LossSettings {
    pub fn uniform(lambda_id: f64) -> Self {
        LossSettings {
            pos_freq: vec![0.5; NUM_ATTRIBUTES],
            sigma: 1.0,
            weighting: BceWeighting::Uniform,
            lambda_id,
            freeze_embedding: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub iteration: usize,
    pub bce: f64,
    pub id_loss: f64,
    pub total: f64,
}

/// Mean loss of a batch and, on request, its gradient.
pub(crate) fn batch_loss(
    params: &FusionParams,
    samples: &[&TrainSample],
    settings: &LossSettings,
    with_grad: bool,
) -> (LossRecord, Option<Tensors>) {
    let strategy = params.strategy;
    let b = samples.len();
    let d = params.dims.dim;
    let mut e1 = DMatrix::zeros(d, b);
    for (i, s) in samples.iter().enumerate() {
        e1.column_mut(i).copy_from_slice(&s.embedding);
    }
    let observed: Vec<Vec<f64>> = samples.iter().map(|s| s.attr_obs.clone()).collect();
    let a1 = match params.a1_source {
        A1Source::Observed => Some(observed.as_slice()),
        A1Source::LinearHead => None,
    };
    let trace = forward_batch(params, strategy, e1, a1);
    let use_id = settings.lambda_id > 0.0;
    let zl = if use_id { Some(id_logits(params, &trace.e2)) } else { None };

    let scale = 1.0 / b as f64;
    let mut rec = LossRecord::default();
    let mut d_logits = DMatrix::zeros(NUM_ATTRIBUTES, b);
    let mut d_id = zl.as_ref().map(|z| DMatrix::zeros(z.nrows(), b));
    for (i, s) in samples.iter().enumerate() {
        let (l, g) = bce_from_logits(
            trace.logits.column(i).as_slice(),
            &s.target,
            &settings.pos_freq,
            settings.sigma,
            settings.weighting,
        );
        rec.bce += l * scale;
        d_logits.column_mut(i).copy_from_slice(&g);
        if let (Some(z), Some(dz)) = (&zl, d_id.as_mut()) {
            let (l, g) = cross_entropy(z.column(i).as_slice(), s.label);
            rec.id_loss += l * scale;
            dz.column_mut(i).copy_from_slice(&g);
        }
    }
    rec.total = rec.bce + settings.lambda_id * rec.id_loss;
    if !with_grad {
        return (rec, None);
    }

    d_logits *= scale;
    let mut g = Tensors::zeros(&params.dims);
    let mut d_e_out = None;
    if let Some(mut dz) = d_id {
        dz *= settings.lambda_id * scale;
        g.id_w += &dz * trace.e2.transpose();
        for (gb, row) in g.id_b.iter_mut().zip(dz.row_iter()) {
            *gb += row.sum();
        }
        if !settings.freeze_embedding {
            d_e_out = Some(params.tensors.id_w.transpose() * &dz);
        }
    }
    backward_batch(params, &trace, &d_logits, d_e_out.as_ref(), &mut g);
    (rec, Some(g))
}

fn check_compatible(params: &FusionParams, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != params.dims.dim {
        return Err(Error::DimensionMismatch { expected: params.dims.dim, got: dataset.dim() });
    }
    if let Some(s) = dataset.samples.iter().find(|s| s.label >= params.dims.classes) {
        return Err(Error::LabelOutOfRange { label: s.label, classes: params.dims.classes });
    }
    Ok(())
}

/// Fits the head with minibatch gradient descent. Returns the parameters and
/// the per-iteration batch losses (recorded before each update).
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    strategy: FusionStrategy,
) -> Result<(FusionParams, Vec<LossRecord>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = FusionDims { dim: dataset.dim(), tokens: config.tokens, classes: dataset.classes };
    let mut params = FusionParams::init(dims, strategy, config.seed)?;
    params.a1_source = config.a1_source;
    params.scaled_attention = config.scaled_attention;
    let trace = train_from(&mut params, dataset, config)?;
    Ok((params, trace))
}

/// Continues training existing parameters in place.
pub fn train_from(params: &mut FusionParams, dataset: &Dataset, config: &TrainConfig) -> Result<Vec<LossRecord>> {
    config.validate()?;
    check_compatible(params, dataset)?;
    let settings = config.loss_settings(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7a1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let batch = config.batch_size.min(dataset.len());
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                if batch < order.len() {
                    order.shuffle(&mut rng);
                }
                cursor = 0;
            }
            picked.push(&dataset.samples[order[cursor]]);
            cursor += 1;
        }
        let (mut rec, grad) = batch_loss(params, &picked, &settings, config.step_size > 0.0);
        rec.iteration = iteration;
        if !rec.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("bce {} identity {}", rec.bce, rec.id_loss),
            });
        }
        if let Some(g) = grad {
            params.tensors.axpy(-config.step_size, &g);
        }
        trace.push(rec);
    }
    Ok(trace)
}

/// Mean loss over a whole dataset.
pub fn dataset_loss(params: &FusionParams, dataset: &Dataset, settings: &LossSettings) -> Result<LossRecord> {
    check_compatible(params, dataset)?;
    let mut acc = LossRecord::default();
    let n = dataset.len() as f64;
    for chunk in dataset.samples.chunks(256) {
        let refs: Vec<&TrainSample> = chunk.iter().collect();
        let (r, _) = batch_loss(params, &refs, settings, false);
        let w = chunk.len() as f64 / n;
        acc.bce += r.bce * w;
        acc.id_loss += r.id_loss * w;
        acc.total += r.total * w;
    }
    Ok(acc)
}

/// Mean over attributes of the fraction of samples whose thresholded
/// prediction matches the target.
pub fn attribute_accuracy(params: &FusionParams, dataset: &Dataset) -> Result<f64> {
    check_compatible(params, dataset)?;
    let mut correct = 0usize;
    for chunk in dataset.samples.chunks(256) {
        let mut e1 = DMatrix::zeros(params.dims.dim, chunk.len());
        for (i, s) in chunk.iter().enumerate() {
            e1.column_mut(i).copy_from_slice(&s.embedding);
        }
        let observed: Vec<Vec<f64>> = chunk.iter().map(|s| s.attr_obs.clone()).collect();
        let a1 = match params.a1_source {
            A1Source::Observed => Some(observed.as_slice()),
            A1Source::LinearHead => None,
        };
        let trace = forward_batch(params, params.strategy, e1, a1);
        for (i, s) in chunk.iter().enumerate() {
            for (z, t) in trace.logits.column(i).iter().zip(&s.target) {
                correct += usize::from((sigmoid(*z) >= 0.5) == (*t >= 0.5));
            }
        }
    }
    Ok(correct as f64 / (dataset.len() * NUM_ATTRIBUTES) as f64)
}

/// Largest relative error between the analytic gradient and central
/// differences over every parameter. The full gradient is checked, so the
/// embedding freeze is ignored.
pub fn grad_check(params: &FusionParams, sample: &TrainSample, settings: &LossSettings, eps: f64) -> f64 {
    grad_check_worst(params, sample, settings, eps).rel
}

/// Location of the largest gradient discrepancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckWorst {
    pub rel: f64,
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn grad_check_worst(params: &FusionParams, sample: &TrainSample, settings: &LossSettings, eps: f64) -> GradCheckWorst {
    let settings = LossSettings { freeze_embedding: false, ..settings.clone() };
    let (_, grad) = batch_loss(params, &[sample], &settings, true);
    let grad = grad.expect("gradient requested");
    let mut probe = params.clone();
    let mut worst = GradCheckWorst { rel: 0.0, tensor: "", index: 0, analytic: 0.0, numeric: 0.0 };
    let names: Vec<&'static str> = grad.named().iter().map(|(n, _)| *n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = grad.named()[ti].1.len();
        for k in 0..len {
            let analytic = grad.named()[ti].1[k];
            let orig = probe.tensors.named()[ti].1[k];
            probe.tensors.named_mut()[ti].1[k] = orig + eps;
            let up = loss_terms(&probe, sample, &settings);
            probe.tensors.named_mut()[ti].1[k] = orig - eps;
            let down = loss_terms(&probe, sample, &settings);
            probe.tensors.named_mut()[ti].1[k] = orig;
            // terms untouched by the perturbation cancel exactly
            let diff: f64 = up.iter().zip(&down).map(|(u, d)| u - d).sum();
            let numeric = diff / (2.0 * eps);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
            if rel > worst.rel {
                worst = GradCheckWorst { rel, tensor: name, index: k, analytic, numeric };
            }
        }
    }
    worst
}

/// Single-sample loss split into its attribute and identity contributions.
fn loss_terms(params: &FusionParams, sample: &TrainSample, settings: &LossSettings) -> Vec<f64> {
    let e1 = DMatrix::from_column_slice(sample.embedding.len(), 1, &sample.embedding);
    let observed = [sample.attr_obs.clone()];
    let a1 = match params.a1_source {
        A1Source::Observed => Some(observed.as_slice()),
        A1Source::LinearHead => None,
    };
    let trace = forward_batch(params, params.strategy, e1, a1);
    let mut terms =
        bce_terms(trace.logits.as_slice(), &sample.target, &settings.pos_freq, settings.sigma, settings.weighting);
    if settings.lambda_id > 0.0 {
        let z = id_logits(params, &trace.e2);
        terms.push(settings.lambda_id * cross_entropy(z.as_slice(), sample.label).0);
    }
    terms
}

pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("iteration,bce,id_loss,total\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.bce, r.id_loss, r.total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn toy_sample(rng: &mut ChaCha8Rng, d: usize, classes: usize) -> TrainSample {
        let e: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        TrainSample {
            embedding: e.iter().map(|v| v / n).collect(),
            attr_obs: (0..NUM_ATTRIBUTES).map(|_| rng.random::<f64>()).collect(),
            label: rng.random_range(0..classes),
            target: (0..NUM_ATTRIBUTES).map(|_| f64::from(rng.random_bool(0.4))).collect(),
        }
    }

    fn settings() -> LossSettings {
        LossSettings {
            pos_freq: (0..NUM_ATTRIBUTES).map(|j| 0.1 + j as f64 / 40.0).collect(),
            sigma: 1.0,
            weighting: BceWeighting::Frequency,
            lambda_id: 0.5,
            freeze_embedding: false,
        }
    }

    fn check(strategy: FusionStrategy, source: A1Source, dim: usize, tokens: usize, seed: u64, eps: f64) -> GradCheckWorst {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = FusionDims { dim, tokens, classes: 3 };
        let mut p = FusionParams::init(dims, strategy, seed).unwrap();
        p.a1_source = source;
        let s = toy_sample(&mut rng, dim, 3);
        grad_check_worst(&p, &s, &settings(), eps)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for strategy in FusionStrategy::ALL {
            for source in [A1Source::Observed, A1Source::LinearHead] {
                for (dim, seed) in [(8, 0), (16, 1), (8, 2)] {
                    let w = check(strategy, source, dim, dim / 4, seed, 1e-4);
                    assert!(w.rel <= 1e-4, "{strategy} {source:?} d{dim}: {w:?}");
                }
            }
        }
    }

    #[test]
    fn linear_only_toy_is_tight() {
        for seed in 0..5 {
            let w = check(FusionStrategy::AttrOnly, A1Source::Observed, 8, 1, seed, 1e-5);
            assert!(w.rel <= 1e-6, "{w:?}");
        }
    }

    #[test]
    fn aam_path_at_default_step() {
        for seed in 0..5 {
            let w = check(FusionStrategy::PreprocAttr, A1Source::Observed, 16, 4, seed, 1e-5);
            assert!(w.rel <= 1e-4, "{w:?}");
        }
    }

    #[test]
    fn single_coordinate_taylor() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dims = FusionDims { dim: 16, tokens: 4, classes: 3 };
        let p = FusionParams::init(dims, FusionStrategy::PreprocAttr, 21).unwrap();
        let s = toy_sample(&mut rng, 16, 3);
        let st = settings();
        let (base, g) = batch_loss(&p, &[&s], &st, true);
        let g = g.unwrap();
        let eps = 1e-5;
        let mut q = p.clone();
        q.tensors.head_h[(3, 1)] += eps;
        let moved = batch_loss(&q, &[&s], &st, false).0.total;
        let predicted = g.head_h[(3, 1)] * eps;
        assert!(((moved - base.total) - predicted).abs() < 1e-9, "{} vs {predicted}", moved - base.total);
    }

    #[test]
    fn zero_step_leaves_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds = Dataset::new((0..20).map(|_| toy_sample(&mut rng, 8, 2)).collect()).unwrap();
        let cfg = TrainConfig { step_size: 0.0, iterations: 5, batch_size: 20, tokens: 2, ..Default::default() };
        let (p, trace) = train(&ds, &cfg, FusionStrategy::PreprocAttr).unwrap();
        let fresh = FusionParams::init(p.dims, p.strategy, cfg.seed).unwrap();
        assert_eq!(p.tensors, fresh.tensors);
        assert!(trace.iter().all(|r| r.total == trace[0].total));
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = Dataset::new((0..64).map(|_| toy_sample(&mut rng, 8, 4)).collect()).unwrap();
        let cfg = TrainConfig { iterations: 60, batch_size: 64, tokens: 2, step_size: 0.2, ..Default::default() };
        let (p1, t1) = train(&ds, &cfg, FusionStrategy::PreprocAttr).unwrap();
        let (p2, t2) = train(&ds, &cfg, FusionStrategy::PreprocAttr).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
        assert!(t1.last().unwrap().total < t1[0].total);
        assert_eq!(loss_trace_csv(&t1), loss_trace_csv(&t2));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(Dataset::new(Vec::new()), Err(Error::EmptyDataset)));
        let empty = Dataset::default();
        assert!(train(&empty, &TrainConfig::default(), FusionStrategy::PreprocAttr).is_err());
    }
}
