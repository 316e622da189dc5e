//! Warped Euclidean proxy softmax: loss, gradients, landscape analysis,
//! a small trainer and retrieval metrics.

pub mod cli;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod landscape;
pub mod loss;
pub mod metrics;
pub mod properties;
pub mod trainer;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{Point, ProxyPair};
pub use loss::{batch_loss_grad, LabeledBatch, LossConfig, LossGrad, ProxySet};
pub use warp::{parse_warp_pair, WarpPair, WarpSpec};
