use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lap::CostMatrix;
use super::tracker::Track;
use crate::attributes::NUM_ATTRIBUTES;
use crate::error::{Error, Result};
use crate::fusion::{a1_raw, fuse_for_association, predict_attributes, FusionParams};
use crate::types::{BBox, Detection, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CostMode {
    Iou,
    #[default]
    Embed,
    Attr,
    EmbedPlusAttr,
    ConcatFeature,
}

impl CostMode {
    pub const ALL: [CostMode; 5] =
        [CostMode::Iou, CostMode::Embed, CostMode::Attr, CostMode::EmbedPlusAttr, CostMode::ConcatFeature];

    /// Largest cost accepted as a match when no threshold is configured.
    pub fn default_threshold(&self) -> f64 {
        match self {
            CostMode::Iou => 0.7,
            CostMode::Embed => 1.1,
            CostMode::Attr => 0.3,
            CostMode::EmbedPlusAttr => 1.2,
            CostMode::ConcatFeature => 0.5,
        }
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::Iou => "iou",
            CostMode::Embed => "embed",
            CostMode::Attr => "attr",
            CostMode::EmbedPlusAttr => "embed+attr",
            CostMode::ConcatFeature => "concat",
        })
    }
}

impl FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "iou" => CostMode::Iou,
            "embed" => CostMode::Embed,
            "attr" => CostMode::Attr,
            "embed+attr" | "embed-plus-attr" => CostMode::EmbedPlusAttr,
            "concat" | "concat-feature" => CostMode::ConcatFeature,
            _ => return Err(Error::Config(format!("unknown cost mode {s:?}"))),
        })
    }
}

impl From<CostMode> for String {
    fn from(m: CostMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for CostMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Which attribute vector a detection contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrSource {
    /// The detector's attribute observation.
    #[default]
    Observed,
    /// Output of the trained attribute head.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssocConfig {
    pub mode: CostMode,
    pub lambda_e: f64,
    pub lambda_a: f64,
    /// Min-max normalize the embedding and attribute matrices before adding.
    pub normalize: bool,
    pub gating_threshold: f64,
    /// Largest accepted match cost; the mode default when absent.
    pub match_threshold: Option<f64>,
    pub n_init: u32,
    pub max_age: u32,
    pub gallery_budget: usize,
    pub attr_ema: f64,
    pub attr_source: AttrSource,
    /// Round attribute values to bits before comparing.
    pub binarize_attributes: bool,
    /// Emit predicted boxes of confirmed tracks that missed this frame.
    pub emit_coasting: bool,
    /// Emit the frames a track spent tentative once it is confirmed.
    pub backfill_tentative: bool,
    pub min_confidence: f64,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig {
            mode: CostMode::Embed,
            lambda_e: 1.0,
            lambda_a: 1.0,
            normalize: false,
            gating_threshold: super::CHI2_95_4DOF,
            match_threshold: None,
            n_init: 3,
            max_age: 30,
            gallery_budget: 30,
            attr_ema: 0.9,
            attr_source: AttrSource::Observed,
            binarize_attributes: false,
            emit_coasting: false,
            backfill_tentative: true,
            min_confidence: 0.0,
        }
    }
}

impl AssocConfig {
    pub fn with_mode(mode: CostMode) -> Self {
        AssocConfig { mode, ..Default::default() }
    }

    pub fn threshold(&self) -> f64 {
        self.match_threshold.unwrap_or_else(|| self.mode.default_threshold())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gating_threshold > 0.0) || !(self.threshold() > 0.0) {
            return bad("thresholds must be positive".into());
        }
        if !(self.lambda_e >= 0.0 && self.lambda_a >= 0.0) {
            return bad("mixing weights must be non-negative".into());
        }
        if self.mode == CostMode::EmbedPlusAttr && self.lambda_e + self.lambda_a <= 0.0 {
            return bad("embed+attr needs a positive mixing weight".into());
        }
        if self.n_init == 0 || self.gallery_budget == 0 {
            return bad("n_init and gallery_budget must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.attr_ema) {
            return bad(format!("attr_ema {} outside [0, 1]", self.attr_ema));
        }
        Ok(())
    }
}

/// Per-detection quantities the cost modes read.
#[derive(Debug, Clone, PartialEq)]
pub struct DetFeature {
    pub bbox: BBox,
    pub confidence: f64,
    /// Unit-norm appearance embedding.
    pub embedding: Embedding,
    pub attributes: [f64; NUM_ATTRIBUTES],
    /// Unit-norm `[embedding; attributes]`, present in concatenation mode.
    pub fused: Option<Embedding>,
}

impl DetFeature {
    /// Vector stored in track galleries for the given mode.
    pub fn gallery_vector(&self) -> &Embedding {
        self.fused.as_ref().unwrap_or(&self.embedding)
    }
}

/// Resolves embeddings and attribute vectors for one frame of detections.
pub fn detection_features(
    dets: &[Detection],
    config: &AssocConfig,
    fusion: Option<&FusionParams>,
) -> Result<Vec<DetFeature>> {
    let params = match (config.attr_source, fusion) {
        (AttrSource::Predicted, None) => return Err(Error::MissingFusionParams),
        (AttrSource::Predicted, Some(p)) => Some(p),
        (AttrSource::Observed, _) => None,
    };
    dets.iter()
        .map(|d| {
            let embedding = d.embedding.normalized()?;
            let mut attributes = match params {
                Some(p) => {
                    let a1 = a1_raw(p, &d.embedding.0, &d.attr_obs)?;
                    *predict_attributes(&d.embedding.0, &a1, p.strategy, p)?.0.values()
                }
                None => *d.attr_obs.values(),
            };
            if config.binarize_attributes {
                attributes.iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
            }
            let fused = if config.mode == CostMode::ConcatFeature {
                let a = crate::attributes::AttributeVector::prob(attributes)?;
                Some(fuse_for_association(&embedding, &a).normalized()?)
            } else {
                None
            };
            Ok(DetFeature { bbox: d.bbox, confidence: d.confidence, embedding, attributes, fused })
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nearest-neighbour cosine distance between a unit vector and a gallery of
/// unit vectors.
fn gallery_distance(gallery: &std::collections::VecDeque<Embedding>, v: &Embedding) -> f64 {
    gallery
        .iter()
        .map(|g| (1.0 - dot(&g.0, &v.0)).clamp(0.0, 2.0))
        .fold(f64::INFINITY, f64::min)
}

fn min_max(m: &mut CostMatrix) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if m.is_feasible(r, c) {
                lo = lo.min(m.get(r, c));
                hi = hi.max(m.get(r, c));
            }
        }
    }
    if hi > lo {
        *m = m.map(|v| (v - lo) / (hi - lo));
    }
}

/// Cost of matching every track (rows) to every detection (columns); pairs
/// outside the motion gate are masked.
pub fn build_cost_matrix(tracks: &[Track], dets: &[DetFeature], config: &AssocConfig) -> Result<CostMatrix> {
    let (n, m) = (tracks.len(), dets.len());
    let mut gate = vec![vec![true; m]; n];
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            gate[i][j] = t.state.gating_distance(&d.bbox)? <= config.gating_threshold;
        }
    }
    let fill = |f: &dyn Fn(&Track, &DetFeature) -> f64| {
        let mut c = CostMatrix::new(n, m);
        for (i, t) in tracks.iter().enumerate() {
            for (j, d) in dets.iter().enumerate() {
                if gate[i][j] {
                    c.set(i, j, f(t, d));
                } else {
                    c.mask(i, j);
                }
            }
        }
        c
    };
    let embed = |t: &Track, d: &DetFeature| gallery_distance(&t.gallery, &d.embedding);
    let attr = |t: &Track, d: &DetFeature| {
        t.attr_estimate.iter().zip(&d.attributes).map(|(a, b)| (a - b).abs()).sum::<f64>() / NUM_ATTRIBUTES as f64
    };
    Ok(match config.mode {
        CostMode::Iou => fill(&|t, d| 1.0 - crate::distance::iou(&t.predicted_box(), &d.bbox)),
        CostMode::Embed => fill(&embed),
        CostMode::Attr => fill(&attr),
        CostMode::ConcatFeature => fill(&|t, d| gallery_distance(&t.gallery, d.gallery_vector())),
        CostMode::EmbedPlusAttr => {
            let mut e = fill(&embed);
            let mut a = fill(&attr);
            if config.normalize {
                min_max(&mut e);
                min_max(&mut a);
            }
            let mut out = e.clone();
            for r in 0..n {
                for c in 0..m {
                    if out.is_feasible(r, c) {
                        out.set(r, c, config.lambda_e * e.get(r, c) + config.lambda_a * a.get(r, c));
                    }
                }
            }
            out
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::tracker::Tracker;
    use crate::attributes::AttributeVector;

    fn det(x: f64, emb: Vec<f64>, attr: f64) -> Detection {
        Detection {
            frame: 1,
            bbox: BBox { left: x, top: 100.0, width: 40.0, height: 100.0 },
            confidence: 0.9,
            embedding: Embedding(emb),
            attr_obs: AttributeVector::splat(attr).unwrap(),
        }
    }

    fn two_tracks(config: &AssocConfig) -> Tracker {
        let mut t = Tracker::new(config.clone()).unwrap();
        t.step(1, &[det(100.0, vec![1.0, 0.0], 0.0), det(300.0, vec![0.0, 1.0], 1.0)], None).unwrap();
        t
    }

    #[test]
    fn hand_computed_two_by_two() {
        let mut cfg = AssocConfig::with_mode(CostMode::EmbedPlusAttr);
        cfg.gating_threshold = 1e12;
        let tracker = two_tracks(&cfg);
        let d = [det(102.0, vec![3.0, 4.0], 0.25), det(298.0, vec![-1.0, 0.0], 0.5)];
        let feats = detection_features(&d, &cfg, None).unwrap();
        let c = build_cost_matrix(tracker.tracks(), &feats, &cfg).unwrap();
        // embed: track0 (1,0), track1 (0,1); dets (0.6,0.8), (-1,0)
        // attr: |0 - 0.25| = 0.25, |0 - 0.5| = 0.5, |1 - 0.25| = 0.75, |1 - 0.5| = 0.5
        let expect = [[0.4 + 0.25, 2.0 + 0.5], [0.2 + 0.75, 1.0 + 0.5]];
        for r in 0..2 {
            for col in 0..2 {
                assert!((c.get(r, col) - expect[r][col]).abs() < 1e-9, "{r},{col}: {}", c.get(r, col));
            }
        }
    }

    #[test]
    fn sum_mode_is_additive() {
        let mut cfg = AssocConfig::default();
        cfg.gating_threshold = 1e12;
        let tracker = two_tracks(&cfg);
        let d = [det(110.0, vec![0.2, 0.9], 0.3), det(290.0, vec![0.7, -0.1], 0.8)];
        let feats = detection_features(&d, &cfg, None).unwrap();
        let tr = tracker.tracks();
        let get = |mode, le, la| {
            let c = AssocConfig { mode, lambda_e: le, lambda_a: la, ..cfg.clone() };
            build_cost_matrix(tr, &feats, &c).unwrap()
        };
        let e = get(CostMode::Embed, 1.0, 1.0);
        let a = get(CostMode::Attr, 1.0, 1.0);
        let s = get(CostMode::EmbedPlusAttr, 1.0, 1.0);
        let w = get(CostMode::EmbedPlusAttr, 0.7, 2.5);
        let only_e = get(CostMode::EmbedPlusAttr, 1.0, 0.0);
        for r in 0..2 {
            for col in 0..2 {
                assert_eq!(s.get(r, col), e.get(r, col) + a.get(r, col));
                assert_eq!(w.get(r, col), 0.7 * e.get(r, col) + 2.5 * a.get(r, col));
                assert_eq!(only_e.get(r, col), e.get(r, col));
            }
        }
    }

    #[test]
    fn gate_masks_far_pairs() {
        let cfg = AssocConfig::default();
        let tracker = two_tracks(&cfg);
        let feats = detection_features(&[det(101.0, vec![1.0, 0.0], 0.0)], &cfg, None).unwrap();
        let c = build_cost_matrix(tracker.tracks(), &feats, &cfg).unwrap();
        assert!(c.is_feasible(0, 0));
        assert!(!c.is_feasible(1, 0));
    }

    #[test]
    fn predicted_attributes_need_params() {
        let cfg = AssocConfig { attr_source: AttrSource::Predicted, ..Default::default() };
        let err = detection_features(&[det(0.0, vec![1.0, 0.0], 0.0)], &cfg, None).unwrap_err();
        assert!(matches!(err, Error::MissingFusionParams));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in CostMode::ALL {
            assert_eq!(m.to_string().parse::<CostMode>().unwrap(), m);
        }
    }
}
