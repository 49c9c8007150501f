//! Simulated-user evaluation: metrics, ground truth, policies, episodes and
//! the experiment harness.

pub mod episode;
pub mod experiment;
pub mod ground_truth;
pub mod metrics;
pub mod policy;
pub mod pruning;
pub mod stats;

pub use episode::{
    run_episode, BinaryScore, EpisodeConfig, EpisodeResult, EvalContext, IterationRecord,
};
pub use experiment::{
    build_index, run_experiment, run_experiment_on, AggregateRow, DatasetSource, ExperimentConfig,
    ExperimentReport,
};
pub use ground_truth::{BlockWeights, GroundTruth, GroundTruthSpace};
pub use metrics::{ndcg_at_k, percentile_rank};
pub use policy::Policy;
