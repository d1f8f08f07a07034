pub mod attributes;
pub mod distance;
pub mod error;
pub mod motio;
pub mod types;

pub use attributes::{AttrMode, AttributeVector, NUM_ATTRIBUTES};
pub use distance::{attribute_distance, cosine_distance, iou, occlusion_fraction};
pub use error::{Error, Result};
pub use types::{BBox, Detection, Embedding, GtEntry, TrackOutput};
pub mod synthgen;
pub mod assoc;
pub mod metrics;
pub mod fusion;
pub mod pipeline;
pub mod verify;
