//! Convolutional regression networks with hand-written gradients.

pub mod layers;
pub mod model;
pub mod spec;
pub mod train;

pub use model::{Cache, EpochRecord, LayerGrads, LayerParams, Mode, TrainedModel};
pub use spec::{build_type, LayerSpec, ModelSpec, Shape};
pub use train::{
    adam_step, adam_update, finetune, gradient_check, gradient_report, predict_position, train, AdamConfig, AdamState, GradientReport, Moments, Samples,
    TrainConfig,
};
