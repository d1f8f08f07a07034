use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use super::config::WorldConfig;
use super::world::{derive_seed, sample_attributes, SequenceBundle};
use crate::attributes::{AttributeVector, NUM_ATTRIBUTES};
use crate::types::{round2, BBox, Detection, Embedding};

/// Occlusion at or above this hides a pedestrian from the detector.
const FULLY_HIDDEN: f64 = 0.99;

/// A detection together with the generator's knowledge of where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub detection: Detection,
    /// Source identity; `None` for false positives.
    pub identity: Option<u32>,
    pub occlusion: f64,
}

/// Detector output for one frame (labels dropped).
pub fn observe_frame(bundle: &SequenceBundle, frame: u32, config: &WorldConfig) -> Vec<Detection> {
    observe_frame_labeled(bundle, frame, config).into_iter().map(|l| l.detection).collect()
}

pub fn observe_sequence(bundle: &SequenceBundle, config: &WorldConfig) -> Vec<LabeledDetection> {
    (1..=bundle.n_frames())
        .flat_map(|f| observe_frame_labeled(bundle, f, config))
        .collect()
}

/// Per-coordinate embedding noise with standard deviation
/// `sigma * (1 + gain * occlusion)`.
pub(crate) fn embedding_noise<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    sigma: f64,
    gain: f64,
    occlusion: f64,
) -> Vec<f64> {
    let s = sigma * (1.0 + gain * occlusion);
    (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(crate) fn flip_probability(config: &WorldConfig, occlusion: f64) -> f64 {
    (config.attributes.flip_base + config.attributes.occlusion_gain * occlusion).min(0.5)
}

fn observe_embedding<R: Rng + ?Sized>(
    rng: &mut R,
    latent: &Embedding,
    config: &WorldConfig,
    occlusion: f64,
) -> Embedding {
    let model = &config.embedding;
    if model.noise_sigma * (1.0 + model.occlusion_gain * occlusion) == 0.0 {
        return latent.clone();
    }
    let noise = embedding_noise(rng, latent.dim(), model.noise_sigma, model.occlusion_gain, occlusion);
    let mut v: Vec<f64> = latent.as_slice().iter().zip(noise).map(|(a, b)| a + b).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x = (*x / n) as f32 as f64;
    }
    Embedding(v)
}

fn observe_attributes<R: Rng + ?Sized>(rng: &mut R, truth: &AttributeVector, p_flip: f64) -> AttributeVector {
    let mut values = *truth.values();
    if p_flip > 0.0 {
        for v in values.iter_mut() {
            if rng.random::<f64>() < p_flip {
                *v = 1.0 - *v;
            }
        }
    }
    AttributeVector::prob(values).expect("flipped bits stay in [0, 1]")
}

fn jitter_box<R: Rng + ?Sized>(rng: &mut R, b: &BBox, sigma: f64, config: &WorldConfig) -> Option<BBox> {
    if sigma == 0.0 {
        return Some(*b);
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    let j = BBox {
        left: b.left + n.sample(rng),
        top: b.top + n.sample(rng),
        width: (b.width + n.sample(rng)).max(2.0),
        height: (b.height + n.sample(rng)).max(2.0),
    };
    let c = j.clip(config.image_width, config.image_height)?.quantized();
    (c.width > 0.0 && c.height > 0.0).then_some(c)
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding(v.into_iter().map(|x| (x / n) as f32 as f64).collect())
}

/// Detector output for one frame. Each frame draws from its own stream, so the
/// result depends only on `(bundle, frame, config)`.
pub fn observe_frame_labeled(
    bundle: &SequenceBundle,
    frame: u32,
    config: &WorldConfig,
) -> Vec<LabeledDetection> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed ^ 0x0b5e_7e00, u64::from(frame)));
    let mut out = Vec::new();
    for g in bundle.gt.iter().filter(|g| g.frame == frame) {
        let Some(card) = bundle.card(g.identity) else { continue };
        let occ = bundle.occlusion_of(frame, g.identity);
        if occ >= FULLY_HIDDEN {
            continue;
        }
        let p_miss = (config.detection.miss_base + config.detection.miss_occlusion_gain * occ).clamp(0.0, 1.0);
        if rng.random::<f64>() < p_miss {
            continue;
        }
        let Some(bbox) = jitter_box(&mut rng, &g.bbox, config.detection.box_jitter, config) else { continue };
        let embedding = observe_embedding(&mut rng, &card.latent, config, occ);
        let attr_obs = observe_attributes(&mut rng, &card.attributes, flip_probability(config, occ));
        let confidence = round2((0.95 - 0.4 * occ + 0.02 * rng.sample::<f64, _>(StandardNormal)).clamp(0.05, 1.0));
        out.push(LabeledDetection {
            detection: Detection { frame, bbox, confidence, embedding, attr_obs },
            identity: Some(g.identity),
            occlusion: occ,
        });
    }

    let rate = config.detection.false_positive_rate;
    let n_fp = if rate > 0.0 {
        Poisson::new(rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let t = &config.trajectories;
    for _ in 0..n_fp {
        let h = rng.random_range(0.6 * t.height_min..=t.height_max);
        let w = h * t.aspect;
        let cx = rng.random_range(0.0..config.image_width);
        let cy = rng.random_range(0.0..config.image_height);
        let Some(bbox) = BBox::from_center(cx, cy, w, h)
            .clip(config.image_width, config.image_height)
            .map(|b| b.quantized())
            .filter(|b| b.width > 0.0 && b.height > 0.0)
        else {
            continue;
        };
        let embedding = random_unit(&mut rng, config.embedding.dim);
        let attr_obs = sample_attributes(&mut rng, &config.prior).to_prob();
        let confidence = round2(rng.random_range(0.3..0.7));
        out.push(LabeledDetection {
            detection: Detection { frame, bbox, confidence, embedding, attr_obs },
            identity: None,
            occlusion: 0.0,
        });
    }
    debug_assert!(out.iter().all(|d| d.detection.attr_obs.values().len() == NUM_ATTRIBUTES));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::AttrMode;
    use crate::distance::{attribute_distance, cosine_distance};
    use crate::synthgen::{simulate_sequence, TrajectoryWeights};

    fn noiseless(dim: usize) -> WorldConfig {
        let mut cfg = WorldConfig { n_frames: 40, n_identities: 3, seed: 5, ..Default::default() };
        cfg.embedding.dim = dim;
        cfg.embedding.noise_sigma = 0.0;
        cfg.detection.miss_base = 0.0;
        cfg.detection.miss_occlusion_gain = 0.0;
        cfg.detection.box_jitter = 0.0;
        cfg.detection.false_positive_rate = 0.0;
        cfg.attributes.flip_base = 0.0;
        cfg.attributes.occlusion_gain = 0.0;
        cfg.trajectories.crossing_pair = 0.0;
        cfg
    }

    #[test]
    fn noiseless_limit_reproduces_ground_truth() {
        let cfg = noiseless(16);
        let bundle = simulate_sequence(&cfg).unwrap();
        let mut checked = 0;
        for f in 1..=cfg.n_frames {
            for l in observe_frame_labeled(&bundle, f, &cfg) {
                let id = l.identity.unwrap();
                if l.occlusion > 0.0 {
                    continue;
                }
                let card = bundle.card(id).unwrap();
                assert_eq!(l.detection.bbox, card.box_at(f).unwrap());
                assert_eq!(l.detection.embedding, card.latent);
                assert_eq!(l.detection.attr_obs.values(), card.attributes.values());
                assert_eq!(l.detection.attr_obs.mode(), AttrMode::Prob);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn perturbation_norm_matches_noise_model() {
        // Monte-Carlo moment check: E|noise| ~ sqrt(d) * sigma * (1 + gain * occ)
        let dim = 64;
        let (sigma, gain, occ) = (0.1, 10.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 1000;
        let mean: f64 = (0..draws)
            .map(|_| embedding_noise(&mut rng, dim, sigma, gain, occ).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / draws as f64;
        let expected = (dim as f64).sqrt() * sigma * (1.0 + gain * occ);
        assert!((mean / expected - 1.0).abs() < 0.10, "mean {mean} vs {expected}");
    }

    #[test]
    fn zero_flip_keeps_attributes_under_occlusion() {
        let mut cfg = noiseless(16);
        cfg.trajectories = TrajectoryWeights { linear: 0.0, crossing_pair: 1.0, loiter: 0.0, ..Default::default() };
        cfg.n_identities = 4;
        let bundle = simulate_sequence(&cfg).unwrap();
        let mut occluded = 0;
        for l in observe_sequence(&bundle, &cfg) {
            let card = bundle.card(l.identity.unwrap()).unwrap();
            assert_eq!(l.detection.attr_obs.values(), card.attributes.values());
            occluded += usize::from(l.occlusion > 0.3);
        }
        assert!(occluded > 0);
    }

    #[test]
    fn observation_is_deterministic_and_inside_image() {
        let cfg = WorldConfig { n_frames: 30, seed: 8, ..Default::default() };
        let bundle = simulate_sequence(&cfg).unwrap();
        let a = observe_sequence(&bundle, &cfg);
        let b = observe_sequence(&bundle, &cfg);
        assert_eq!(a, b);
        for l in &a {
            let bb = l.detection.bbox;
            assert!(bb.left >= 0.0 && bb.top >= 0.0);
            assert!(bb.right() <= cfg.image_width + 1e-9 && bb.bottom() <= cfg.image_height + 1e-9);
            assert!((l.detection.embedding.norm() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn attributes_degrade_less_than_embeddings_under_occlusion() {
        let cfg = WorldConfig {
            n_frames: 150,
            seed: 21,
            trajectories: TrajectoryWeights { linear: 0.0, crossing_pair: 1.0, loiter: 0.0, ..Default::default() },
            ..Default::default()
        };
        let (mut attr_sum, mut emb_sum, mut n) = (0.0, 0.0, 0usize);
        for seed in 0..4 {
            let cfg = WorldConfig { seed, ..cfg.clone() };
            let bundle = simulate_sequence(&cfg).unwrap();
            for l in observe_sequence(&bundle, &cfg) {
                let Some(id) = l.identity else { continue };
                if l.occlusion < 0.5 {
                    continue;
                }
                let card = bundle.card(id).unwrap();
                attr_sum += attribute_distance(&l.detection.attr_obs, &card.attributes.to_prob());
                emb_sum += cosine_distance(&l.detection.embedding, &card.latent).unwrap();
                n += 1;
            }
        }
        assert!(n > 50, "only {n} heavily occluded detections");
        let (attr_mean, emb_half) = (attr_sum / n as f64, emb_sum / n as f64 / 2.0);
        assert!(attr_mean < emb_half, "attr {attr_mean} vs emb/2 {emb_half}");
    }
}
