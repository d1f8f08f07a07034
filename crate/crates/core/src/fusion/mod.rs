//! Attribute head: residual adaptor, cross-attention over embedding tokens,
//! the fusion topologies, losses and a deterministic trainer.

mod attention;
mod loss;
mod model;
mod params;
mod train;

pub use attention::{adaptor_forward, attention_weights, cross_attention_forward};
pub use loss::{identity_loss, weighted_bce_loss, BceWeighting, BCE_EPS};
pub use model::{a1_raw, fuse_for_association, predict_attributes};
pub use params::{A1Source, Attn, FusionDims, FusionParams, FusionStrategy, Tensors, PARAMS_FORMAT_VERSION};
pub use train::{
    attribute_accuracy, dataset_loss, grad_check, grad_check_worst, loss_trace_csv, GradCheckWorst, train, train_from, Dataset, LossRecord,
    LossSettings, TrainConfig, TrainSample,
};
