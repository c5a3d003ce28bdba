//! Residual CNN for single-channel spectrogram tiles: architecture
//! descriptors, forward/backward passes, SGD training and checkpoints.

mod arch;
mod checkpoint;
mod network;
mod scalar;
mod train;

pub(crate) use arch::parse_kv;
pub use arch::{conv_out, ArchKind, Architecture, LayerShape, Stage, Stem};
pub use checkpoint::{load_checkpoint, save_checkpoint, Centroids, Checkpoint, ReducerSettings, SPCK_VERSION};
pub use network::{softmax, CnnModel, Mode, Output, Tensor, BN_EPS};
pub use scalar::Scalar;
pub use train::{balanced_order, Sgd, TrainConfig, DEFAULT_BN_MOMENTUM};

use crate::Result;

/// Default pooled feature width of the reduced architecture.
pub const DEFAULT_FEATURE_DIM: usize = 64;

/// Builds an `f32` model of the given family.
pub fn build_model(kind: ArchKind, window: usize, feature_dim: usize, classes: usize, seed: u64) -> Result<CnnModel<f32>> {
    CnnModel::new(Architecture::build(kind, window, feature_dim, classes)?, seed)
}
