//! Losses, augmentation, datasets and the training loop.

pub mod augment;
pub mod dataset;
pub mod loss;
pub mod trainer;

pub use augment::AxisRotation;
pub use dataset::{build_manifest, Manifest, ManifestEntry, Sample, Split};
pub use loss::{CorrNorm, LossBreakdown, LossWeights};
pub use trainer::{forward_sample, train, train_with, TrainConfig, TrainOutput, TrainState, Trainer};
