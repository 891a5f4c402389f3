//! Train-once, select-anytime data filtering over joint image/text embeddings.
//!
//! The pipeline clusters unit-normalized joint features, trains a small
//! two-layer classifier for a few epochs on the cluster indices of each
//! cluster's most central members, and keeps the samples that the
//! under-trained classifier is least sure about.

// `!(x > bound)` style range checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod cache;
pub mod core_set;
pub mod digest;
pub mod error;
pub mod kmeans;
pub mod matrix;
pub mod pipeline;
pub mod selection;
pub mod selector;
pub mod synthetic;

pub use cache::{
    concat_normalize, read_cache, read_cache_with, write_cache, FeatureStore, LoadOptions,
    SampleRecord,
};
pub use core_set::{build_core_set, core_radii, CoreSet};
pub use error::{Error, ErrorClass, Result};
pub use kmeans::{assign, fit_kmeans, inertia, kmeanspp_init, ClusterModel, KMeansConfig};
pub use matrix::Matrix;
pub use pipeline::{
    run_once, score_cache, transfer_select, PipelineConfig, SelectionParams, TransferConfig,
};
pub use selection::{
    emit_subset, score_all, select_by_ratio, select_by_threshold, ScoreTable, SelectionManifest,
    SelectionMode,
};
pub use selector::{
    adam_step, confidence, cross_entropy, forward, grad, init_selector, softmax_probs, train,
    AdamState, SelectorCheckpoint, SelectorParams, TrainConfig,
};
pub use synthetic::{gen_synthetic, generate, SyntheticSpec};
