//! Interactive image search driven by relative attribute feedback.
//!
//! The engine works over precomputed feature vectors. Each attribute gets a
//! linear ranking function trained from pairwise comparisons and a pair of
//! calibration sigmoids. User statements such as "more pointy than image 12"
//! become soft constraints whose log-probabilities accumulate into a per-image
//! relevance score. An active variant poses questions itself, choosing among
//! the current pivots of per-attribute binary search trees the one that
//! minimizes expected relevance entropy.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod active;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod index;
pub mod pivots;
pub mod ranker;
pub mod relevance;
pub mod simuser;
mod timing;

pub use dataset::{
    load_manifest, save_manifest, synthesize_dataset, ComparisonLabel, DatasetManifest,
    FeatureMatrix, ImageRecord, SynthConfig,
};
pub use error::{Error, Result};
pub use index::SearchIndex;
pub use ranker::{AttributeModel, Calibration, ModelSet, TrainConfig};
pub use relevance::{FeedbackConstraint, RankMode, RelevanceState, Response};

/// Dense image identifier, `0..N`.
pub type ImageId = usize;
