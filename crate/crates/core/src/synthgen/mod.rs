//! Scripted pedestrian sequences with sampled attributes, occlusion and noisy
//! detector output.
//!
//! Appearance embeddings degrade with occlusion much faster than attribute
//! observations do; both rates are configurable.

mod config;
mod observe;
mod world;

pub use config::{
    AttributeObservation, AttributePrior, DetectionNoise, EmbeddingModel, TrajectoryWeights,
    WorldConfig,
};
pub(crate) use world::simulate_named;
pub use observe::{observe_frame, observe_frame_labeled, observe_sequence, LabeledDetection};
pub use world::{
    derive_seed, sample_identity, simulate_sequence, union_coverage, IdentityCard, SequenceBundle,
    TrajectoryKind,
};
