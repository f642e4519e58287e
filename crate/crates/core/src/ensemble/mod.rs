//! Second-stage ensembling.
//!
//! Blending expands each base model's top-K predictions into a
//! vocabulary-sized sparse vector, concatenates one block per base model and
//! fits a logistic or MoE stacker on a holdout split. Weighted averaging
//! merges prediction files label by label.

mod average;
mod blend;

pub use average::{
    load_strategy, run_strategy, shipped_strategy, weighted_average, weighted_average_rows, EnsembleConfig, Member,
};
pub use blend::{
    blend_fit, blend_predict, blend_predict_stacked, build_stacked_dataset, expand_topk, SparseStackFeature,
    StackedExample, StackerKind, StackerModel, StackerParams,
};
