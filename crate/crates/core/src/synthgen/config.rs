use serde::{Deserialize, Serialize};

use crate::attributes::COLOR_NAMES;
use crate::error::{Error, Result};

/// Everything that shapes one synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_identities: usize,
    pub n_frames: u32,
    pub image_width: f64,
    pub image_height: f64,
    pub trajectories: TrajectoryWeights,
    pub detection: DetectionNoise,
    pub embedding: EmbeddingModel,
    pub attributes: AttributeObservation,
    pub prior: AttributePrior,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_identities: 15,
            n_frames: 150,
            image_width: 1280.0,
            image_height: 720.0,
            trajectories: TrajectoryWeights::default(),
            detection: DetectionNoise::default(),
            embedding: EmbeddingModel::default(),
            attributes: AttributeObservation::default(),
            prior: AttributePrior::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryWeights {
    pub linear: f64,
    pub crossing_pair: f64,
    pub loiter: f64,
    /// Walking speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Pedestrian box height range in pixels; width is `aspect * height`.
    pub height_min: f64,
    pub height_max: f64,
    pub aspect: f64,
}

impl Default for TrajectoryWeights {
    fn default() -> Self {
        TrajectoryWeights {
            linear: 0.3,
            crossing_pair: 0.5,
            loiter: 0.2,
            speed_min: 1.0,
            speed_max: 4.0,
            height_min: 100.0,
            height_max: 180.0,
            aspect: 0.41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionNoise {
    pub miss_base: f64,
    /// Added to the miss probability per unit of occlusion.
    pub miss_occlusion_gain: f64,
    /// Standard deviation of the box jitter, pixels.
    pub box_jitter: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise {
            miss_base: 0.03,
            miss_occlusion_gain: 0.3,
            box_jitter: 2.0,
            false_positive_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingModel {
    pub dim: usize,
    /// Per-coordinate noise standard deviation at zero occlusion.
    pub noise_sigma: f64,
    /// Noise multiplier slope: `sigma_eff = sigma * (1 + gain * occlusion)`.
    pub occlusion_gain: f64,
    /// Number of shared appearance prototypes identities are drawn around;
    /// 0 draws every identity independently.
    pub appearance_groups: usize,
    /// Spread of identities around their prototype.
    pub group_spread: f64,
    /// Weight of the attribute-dependent component of each latent.
    pub attribute_imprint: f64,
    /// Seed of the fixed attribute-to-appearance projection, shared by all
    /// sequences so a head trained on one benchmark transfers to another.
    pub appearance_seed: u64,
}

impl Default for EmbeddingModel {
    fn default() -> Self {
        EmbeddingModel {
            dim: 512,
            noise_sigma: 0.04,
            occlusion_gain: 20.0,
            appearance_groups: 0,
            group_spread: 1.0,
            attribute_imprint: 0.5,
            appearance_seed: 0x5eed_a77e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeObservation {
    pub flip_base: f64,
    /// Added to the flip probability per unit of occlusion; capped at 0.5.
    pub occlusion_gain: f64,
}

impl Default for AttributeObservation {
    fn default() -> Self {
        AttributeObservation { flip_base: 0.03, occlusion_gain: 0.05 }
    }
}

/// Sampling prior over the 32 attribute slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributePrior {
    pub male: f64,
    /// thin / medium / fat
    pub body_shape: [f64; 3],
    /// bald / short / long
    pub hair_length: [f64; 3],
    pub long_sleeve: f64,
    pub upper_long: f64,
    pub skirt: f64,
    pub lower_long: f64,
    pub backpack: f64,
    pub hat: f64,
    pub boots: f64,
    /// Categorical over the primary upper-body color.
    pub upper_color: [f64; 9],
    /// Categorical over the primary lower-body color.
    pub lower_color: [f64; 9],
    /// Chance that each other color also appears on the same garment.
    pub extra_color: f64,
}

impl Default for AttributePrior {
    fn default() -> Self {
        AttributePrior {
            male: 0.5,
            body_shape: [0.3, 0.5, 0.2],
            hair_length: [0.05, 0.6, 0.35],
            long_sleeve: 0.4,
            upper_long: 0.15,
            skirt: 0.15,
            lower_long: 0.7,
            backpack: 0.3,
            hat: 0.15,
            boots: 0.1,
            upper_color: [0.3, 0.15, 0.1, 0.1, 0.05, 0.1, 0.05, 0.1, 0.05],
            lower_color: [0.35, 0.05, 0.15, 0.05, 0.05, 0.2, 0.05, 0.05, 0.05],
            extra_color: 0.03,
        }
    }
}

impl AttributePrior {
    /// Every group equiprobable, every binary slot a fair coin.
    pub fn uniform() -> Self {
        AttributePrior {
            male: 0.5,
            body_shape: [1.0 / 3.0; 3],
            hair_length: [1.0 / 3.0; 3],
            long_sleeve: 0.5,
            upper_long: 0.5,
            skirt: 0.5,
            lower_long: 0.5,
            backpack: 0.5,
            hat: 0.5,
            boots: 0.5,
            upper_color: [1.0 / 9.0; 9],
            lower_color: [1.0 / 9.0; 9],
            extra_color: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("male", self.male),
            ("long_sleeve", self.long_sleeve),
            ("upper_long", self.upper_long),
            ("skirt", self.skirt),
            ("lower_long", self.lower_long),
            ("backpack", self.backpack),
            ("hat", self.hat),
            ("boots", self.boots),
            ("extra_color", self.extra_color),
        ];
        for (name, p) in scalars {
            check_prob(&format!("prior.{name}"), p)?;
        }
        check_categorical("prior.body_shape", &self.body_shape)?;
        check_categorical("prior.hair_length", &self.hair_length)?;
        check_categorical("prior.upper_color", &self.upper_color)?;
        check_categorical("prior.lower_color", &self.lower_color)?;
        debug_assert_eq!(self.upper_color.len(), COLOR_NAMES.len());
        Ok(())
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn check_categorical(name: &str, ps: &[f64]) -> Result<()> {
    for &p in ps {
        check_prob(name, p)?;
    }
    let sum: f64 = ps.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
    }
    Ok(())
}

impl WorldConfig {
    /// Default noise with crossing pairs as the dominant trajectory kind.
    pub fn occlusion_heavy() -> Self {
        WorldConfig {
            trajectories: TrajectoryWeights { linear: 0.15, crossing_pair: 0.7, loiter: 0.15, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 {
            return Err(Error::Config("n_identities must be >= 1".into()));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be >= 1".into()));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::Config("image size must be positive".into()));
        }
        let t = &self.trajectories;
        for (n, v) in [("linear", t.linear), ("crossing_pair", t.crossing_pair), ("loiter", t.loiter)] {
            check_nonneg(&format!("trajectories.{n}"), v)?;
        }
        if t.linear + t.crossing_pair + t.loiter <= 0.0 {
            return Err(Error::Config("trajectory weights sum to zero".into()));
        }
        if !(t.speed_min >= 0.0 && t.speed_max >= t.speed_min) {
            return Err(Error::Config("trajectory speed range is empty".into()));
        }
        if !(t.height_min > 0.0 && t.height_max >= t.height_min && t.aspect > 0.0) {
            return Err(Error::Config("pedestrian size range is invalid".into()));
        }
        let d = &self.detection;
        check_prob("detection.miss_base", d.miss_base)?;
        check_nonneg("detection.miss_occlusion_gain", d.miss_occlusion_gain)?;
        check_nonneg("detection.box_jitter", d.box_jitter)?;
        check_nonneg("detection.false_positive_rate", d.false_positive_rate)?;
        let e = &self.embedding;
        if e.dim == 0 {
            return Err(Error::Config("embedding.dim must be >= 1".into()));
        }
        check_nonneg("embedding.noise_sigma", e.noise_sigma)?;
        check_nonneg("embedding.occlusion_gain", e.occlusion_gain)?;
        check_nonneg("embedding.group_spread", e.group_spread)?;
        check_nonneg("embedding.attribute_imprint", e.attribute_imprint)?;
        check_prob("attributes.flip_base", self.attributes.flip_base)?;
        check_nonneg("attributes.occlusion_gain", self.attributes.occlusion_gain)?;
        self.prior.validate()
    }
}
