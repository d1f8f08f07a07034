use std::collections::VecDeque;

use super::cost::{build_cost_matrix, detection_features, AssocConfig, DetFeature};
use super::kalman::KalmanState;
use super::lap::solve_assignment;
use crate::attributes::NUM_ATTRIBUTES;
use crate::error::Result;
use crate::fusion::FusionParams;
use crate::types::{BBox, Detection, Embedding, TrackOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Output identity; 0 until the track is confirmed.
    pub identity: u32,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub hits: u32,
    pub time_since_update: u32,
    pub gallery: VecDeque<Embedding>,
    pub attr_estimate: [f64; NUM_ATTRIBUTES],
    /// Boxes observed while tentative, emitted on confirmation.
    pending: Vec<(u32, BBox, f64)>,
}

impl Track {
    fn new(frame: u32, det: &DetFeature, config: &AssocConfig) -> Self {
        let mut t = Track {
            identity: 0,
            state: KalmanState::init(&det.bbox),
            status: TrackStatus::Tentative,
            hits: 1,
            time_since_update: 0,
            gallery: VecDeque::with_capacity(config.gallery_budget),
            attr_estimate: det.attributes,
            pending: Vec::new(),
        };
        t.gallery.push_back(det.gallery_vector().clone());
        t.pending.push((frame, t.state.to_bbox(), det.confidence));
        t
    }

    pub fn predicted_box(&self) -> BBox {
        self.state.to_bbox()
    }

    fn update(&mut self, det: &DetFeature, config: &AssocConfig) -> Result<()> {
        self.state = self.state.update(&det.bbox)?;
        self.hits += 1;
        self.time_since_update = 0;
        if self.gallery.len() == config.gallery_budget {
            self.gallery.pop_front();
        }
        self.gallery.push_back(det.gallery_vector().clone());
        let a = config.attr_ema;
        for (e, o) in self.attr_estimate.iter_mut().zip(&det.attributes) {
            *e = a * *e + (1.0 - a) * o;
        }
        Ok(())
    }
}

/// Per-sequence tracking state.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: AssocConfig,
    tracks: Vec<Track>,
    next_id: u32,
}

impl Tracker {
    pub fn new(config: AssocConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker { config, tracks: Vec::new(), next_id: 1 })
    }

    pub fn config(&self) -> &AssocConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances one frame and returns the confirmed outputs it produced. With
    /// backfill on, a track confirmed this frame also reports its tentative
    /// frames.
    pub fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        fusion: Option<&FusionParams>,
    ) -> Result<Vec<TrackOutput>> {
        let cfg = self.config.clone();
        let kept: Vec<Detection> =
            detections.iter().filter(|d| d.confidence >= cfg.min_confidence).cloned().collect();
        let dets = detection_features(&kept, &cfg, fusion)?;

        for t in &mut self.tracks {
            t.state = t.state.predict();
            t.time_since_update += 1;
        }
        let cost = build_cost_matrix(&self.tracks, &dets, &cfg)?;
        let assignment = solve_assignment(&cost, cfg.threshold());

        let mut out = Vec::new();
        for &(ti, di) in &assignment.matches {
            let t = &mut self.tracks[ti];
            t.update(&dets[di], &cfg)?;
            match t.status {
                TrackStatus::Tentative => {
                    t.pending.push((frame, t.state.to_bbox(), dets[di].confidence));
                    if t.hits >= cfg.n_init {
                        t.status = TrackStatus::Confirmed;
                        t.identity = self.next_id;
                        self.next_id += 1;
                        let pending = std::mem::take(&mut t.pending);
                        let skip = if cfg.backfill_tentative { 0 } else { pending.len() - 1 };
                        for (f, bbox, confidence) in pending.into_iter().skip(skip) {
                            out.push(TrackOutput { frame: f, id: t.identity, bbox, confidence });
                        }
                    }
                }
                _ => {
                    t.status = TrackStatus::Confirmed;
                    out.push(TrackOutput {
                        frame,
                        id: t.identity,
                        bbox: t.state.to_bbox(),
                        confidence: dets[di].confidence,
                    });
                }
            }
        }
        for &ti in &assignment.unmatched_rows {
            let t = &mut self.tracks[ti];
            match t.status {
                TrackStatus::Tentative => t.status = TrackStatus::Lost,
                _ if t.time_since_update > cfg.max_age => t.status = TrackStatus::Lost,
                _ => {
                    if cfg.emit_coasting {
                        out.push(TrackOutput { frame, id: t.identity, bbox: t.state.to_bbox(), confidence: 0.0 });
                    }
                }
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Lost);
        for &di in &assignment.unmatched_cols {
            self.tracks.push(Track::new(frame, &dets[di], &cfg));
        }
        out.sort_by_key(|o| (o.frame, o.id));
        Ok(out)
    }
}

/// Tracks a whole sequence of per-frame detections.
pub fn run_sequence(
    frames: &[(u32, Vec<Detection>)],
    config: &AssocConfig,
    fusion: Option<&FusionParams>,
) -> Result<Vec<TrackOutput>> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut out = Vec::new();
    for (frame, dets) in frames {
        out.extend(tracker.step(*frame, dets, fusion)?);
    }
    out.sort_by_key(|o| (o.frame, o.id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::cost::CostMode;
    use crate::attributes::AttributeVector;
    use crate::metrics::{clear_metrics, EvalOptions};
    use crate::types::GtEntry;

    fn det(frame: u32, cx: f64, emb: Vec<f64>, attr: f64) -> Detection {
        Detection {
            frame,
            bbox: BBox::from_center(cx, 300.0, 40.0, 100.0),
            confidence: 0.9,
            embedding: Embedding(emb),
            attr_obs: AttributeVector::splat(attr).unwrap(),
        }
    }

    #[test]
    fn repeated_detection_confirms_once() {
        let mut t = Tracker::new(AssocConfig::default()).unwrap();
        let mut ids = Vec::new();
        for f in 1..=6 {
            for o in t.step(f, &[det(f, 100.0, vec![1.0, 0.0], 0.0)], None).unwrap() {
                ids.push((o.frame, o.id));
            }
        }
        assert_eq!(ids, (1..=6).map(|f| (f, 1)).collect::<Vec<_>>());
        assert_eq!(t.tracks().len(), 1);
        assert_eq!(t.tracks()[0].status, TrackStatus::Confirmed);
    }

    #[test]
    fn empty_frame_ages_tracks_silently() {
        let mut t = Tracker::new(AssocConfig::default()).unwrap();
        for f in 1..=3 {
            t.step(f, &[det(f, 100.0, vec![1.0, 0.0], 0.0)], None).unwrap();
        }
        assert!(t.step(4, &[], None).unwrap().is_empty());
        assert_eq!(t.tracks()[0].time_since_update, 1);
        let coasting = AssocConfig { emit_coasting: true, ..Default::default() };
        let mut t = Tracker::new(coasting).unwrap();
        for f in 1..=3 {
            t.step(f, &[det(f, 100.0, vec![1.0, 0.0], 0.0)], None).unwrap();
        }
        assert_eq!(t.step(4, &[], None).unwrap().len(), 1);
    }

    #[test]
    fn identities_are_not_recycled() {
        let cfg = AssocConfig { max_age: 1, ..Default::default() };
        let mut t = Tracker::new(cfg).unwrap();
        let mut seen = Vec::new();
        for f in 1..=3 {
            seen.extend(t.step(f, &[det(f, 100.0, vec![1.0, 0.0], 0.0)], None).unwrap());
        }
        t.step(4, &[], None).unwrap();
        t.step(5, &[], None).unwrap();
        for f in 6..=8 {
            seen.extend(t.step(f, &[det(f, 100.0, vec![1.0, 0.0], 0.0)], None).unwrap());
        }
        assert_eq!(seen.iter().filter(|o| o.id == 1).count(), 3);
        assert_eq!(seen.iter().filter(|o| o.id == 2).count(), 3);
    }

    #[test]
    fn crossing_with_distinct_attributes_keeps_identities() {
        // two walkers swap sides over 10 frames; identical embeddings so only
        // attributes can tell them apart
        let cfg = AssocConfig { mode: CostMode::Attr, gating_threshold: 1e12, ..Default::default() };
        let mut frames = Vec::new();
        let mut gt = Vec::new();
        for f in 1..=10u32 {
            let a = 100.0 + 20.0 * f as f64;
            let b = 320.0 - 20.0 * f as f64;
            frames.push((f, vec![det(f, a, vec![1.0, 0.0], 0.0), det(f, b, vec![1.0, 0.0], 1.0)]));
            for (id, cx) in [(1, a), (2, b)] {
                gt.push(GtEntry {
                    frame: f,
                    identity: id,
                    bbox: BBox::from_center(cx, 300.0, 40.0, 100.0),
                    visibility: 1.0,
                    active: true,
                });
            }
        }
        let out = run_sequence(&frames, &cfg, None).unwrap();
        let m = clear_metrics(&gt, &out, &EvalOptions::default()).unwrap();
        assert_eq!(m.id_switches, 0);
        assert_eq!(m.mota, 1.0);
    }

    #[test]
    fn empty_sequence() {
        assert!(run_sequence(&[], &AssocConfig::default(), None).unwrap().is_empty());
    }
}
