//! Multi-label video classification and ensembling.
//!
//! Base models (one-vs-all logistic regression, mixture of experts, frame-level
//! logistic, deep bag of frames, stacked LSTM), GAP@K evaluation, blending
//! through sparse top-K feature expansion, and weighted averaging of
//! prediction files. Synthetic generators with planted structure make every
//! piece testable without the original video corpus.

pub mod datamodel;
pub mod ensemble;
pub mod error;
pub mod framelevel;
pub mod linear;
pub mod metrics;
pub mod models;
pub mod recordio;
pub mod rng;
pub mod suite;
pub mod synthgen;

pub use datamodel::{
    top_k, validate_dataset, FeatureMode, FrameExample, GroundTruth, LabelId, LabelSet, Level, PredictionList,
    VideoExample, Vocabulary, DEFAULT_TOP_K, DEFAULT_VOCAB_SIZE,
};
pub use error::{Error, Result};
pub use linear::{LogisticParams, MoeParams, TrainConfig, TrainReport};
pub use metrics::{gap_at_k, log_loss, GapAccumulator};
pub use models::{predict_frame_videos, predict_videos, Model, ModelConfig, ModelKind};
