//! Episodes, sequence windows, mode rebalancing, normalization and the
//! on-disk dataset format.

mod balance;
mod episode;
mod normalize;
mod sequence;
mod store;

pub use balance::{default_target, rebalance, Sampler};
pub use episode::{Episode, EpisodeMeta, Phase, StepRecord};
pub use normalize::{normalize_and_augment, normalize_with, ColorJitter, JitterConfig, NormStats};
pub use sequence::{build_sequences, subsample_stride, SequenceSample, ELEVATOR_FACTOR};
pub use store::{decode_dataset, encode_dataset, load_dataset, save_dataset, DatasetManifest};
