//! The learned spectral union operator: two truncated part spectra in, the
//! spectrum of their union out.

pub mod model;
pub mod train;

pub use model::{embed, union_compose, union_compose_right, union_forward, UnionArch, UnionModel};
pub use train::{
    augmented_examples, eval_union, mean_loss, min_baseline, predict_examples, spectrum_errors, split_examples,
    train_union, write_history, EpochRecord, TrainConfig, UnionExample, UnionMetrics,
};
