//! Adaptive instance normalization and the style transfer model built on it.

mod loss;
mod model;
mod stats;
mod train;

pub use loss::{content_loss, style_loss, StyleLoss};
pub use model::{StyleArch, StyleTransferModel, DEFAULT_LAMBDA};
pub use stats::{
    adain, adain_backward, channel_stats, channel_stats_backward, interpolate_features, ChannelStats, DEFAULT_EPS,
};
pub use train::{
    style_objective, train_style_model, EpochLoss, StyleObjective, StyleOptimizer, StyleTrainConfig,
    StyleTrainReport,
};
