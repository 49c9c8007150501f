//! Many episodes over seeded targets, reduced to per-iteration curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::episode::{
    derive_seed, run_episode, EpisodeConfig, EpisodeResult, EvalContext, IterationRecord,
};
use super::policy::Policy;
use super::stats::{sign_test, summarize, SignTest};
use crate::dataset::{load_manifest, synthesize_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::index::SearchIndex;
use crate::pivots::load_trees;
use crate::ranker::{train_models, ModelSet, TrainConfig};
use crate::ImageId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Files {
        dataset: PathBuf,
        /// Models are trained on the fly when absent.
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default)]
        index: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub policies: Vec<Policy>,
    pub queries: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub episode: EpisodeConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.queries == 0 {
            return Err(Error::invalid("queries", "must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(Error::invalid("policies", "list is empty"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return Err(Error::invalid("policies", format!("{p} listed twice")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Means and spreads across queries for one policy at one iteration.
/// Episodes that ended early contribute their last record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: Policy,
    pub iteration: usize,
    pub mean_percentile_rank: f64,
    pub median_percentile_rank: f64,
    pub sd_percentile_rank: f64,
    pub mean_ndcg: f64,
    pub mean_entropy: Option<f64>,
    pub mean_selection_seconds: f64,
    pub top_page_rate: f64,
    pub mean_very_similar_top10: f64,
    pub episodes: usize,
    pub exhausted: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: Policy,
    /// In query order; failed episodes are absent.
    pub episodes: Vec<EpisodeResult>,
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub targets: Vec<ImageId>,
    pub iterations: usize,
    pub runs: Vec<PolicyRun>,
    pub rows: Vec<AggregateRow>,
}

/// Per-query targets: distinct when `queries <= n`.
pub fn query_targets(n: usize, queries: usize, seed: u64) -> Vec<ImageId> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7a6e));
    if queries <= n {
        sample(&mut rng, n, queries).into_vec()
    } else {
        (0..queries).map(|_| rng.random_range(0..n)).collect()
    }
}

pub fn query_seed(seed: u64, query: usize) -> u64 {
    derive_seed(seed, 0x1_0000 + query as u64)
}

/// Synthesizes or loads a dataset and prepares its search index, training
/// models when none are given.
pub fn build_index(source: &DatasetSource, train: &TrainConfig) -> Result<SearchIndex> {
    match source {
        DatasetSource::Synthetic(synth) => {
            let manifest = synthesize_dataset(synth)?;
            let models = train_models(&manifest, train)?;
            SearchIndex::build(&manifest, &models)
        }
        DatasetSource::Files {
            dataset,
            model,
            index,
        } => {
            let manifest = load_manifest(dataset)?;
            let models = match model {
                Some(p) => ModelSet::load(p)?,
                None => train_models(&manifest, train)?,
            };
            match index {
                Some(p) => {
                    let trees = load_trees(p, &manifest.attribute_names)?;
                    SearchIndex::with_trees(&manifest, &models, trees)
                }
                None => SearchIndex::build(&manifest, &models),
            }
        }
    }
}

/// Builds the index described by `config.dataset` and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let index = build_index(&config.dataset, &config.train)?;
    run_experiment_on(&index, config)
}

/// Runs every policy on the same seeded targets against a prepared index.
pub fn run_experiment_on(
    index: &SearchIndex,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let ctx = EvalContext::new(index, config.episode.clone())?;
    let targets = query_targets(index.n(), config.queries, config.seed);
    let jobs: Vec<(Policy, usize)> = config
        .policies
        .iter()
        .flat_map(|&p| (0..targets.len()).map(move |q| (p, q)))
        .collect();
    let run = |&(policy, q): &(Policy, usize)| {
        run_episode(&ctx, policy, targets[q], query_seed(config.seed, q))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<EpisodeResult>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<EpisodeResult>> = jobs.iter().map(run).collect();

    let mut runs: Vec<PolicyRun> = config
        .policies
        .iter()
        .map(|&policy| PolicyRun {
            policy,
            episodes: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (&(policy, q), result) in jobs.iter().zip(results) {
        let slot = &mut runs[policy_slot(&config.policies, policy)];
        match result {
            Ok(e) => slot.episodes.push(e),
            Err(e) => slot.failures.push((q, e.to_string())),
        }
    }
    let rows = aggregate(&runs, config.episode.iterations);
    Ok(ExperimentReport {
        targets,
        iterations: config.episode.iterations,
        runs,
        rows,
    })
}

fn policy_slot(policies: &[Policy], p: Policy) -> usize {
    policies
        .iter()
        .position(|&x| x == p)
        .expect("policy listed")
}

/// Record at `iteration`, or the last one when the episode ended earlier.
pub fn record_at(episode: &EpisodeResult, iteration: usize) -> &IterationRecord {
    episode
        .records
        .get(iteration)
        .unwrap_or_else(|| episode.records.last().expect("episodes record iteration 0"))
}

fn aggregate(runs: &[PolicyRun], iterations: usize) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for run in runs {
        for t in 0..=iterations {
            let recs: Vec<&IterationRecord> =
                run.episodes.iter().map(|e| record_at(e, t)).collect();
            let count = recs.len().max(1) as f64;
            let pr: Vec<f64> = recs.iter().map(|r| r.percentile_rank).collect();
            let s = summarize(&pr);
            let entropies: Vec<f64> = recs.iter().filter_map(|r| r.entropy).collect();
            rows.push(AggregateRow {
                policy: run.policy,
                iteration: t,
                mean_percentile_rank: s.mean,
                median_percentile_rank: s.median,
                sd_percentile_rank: s.sd,
                mean_ndcg: recs.iter().map(|r| r.ndcg).sum::<f64>() / count,
                mean_entropy: (!entropies.is_empty())
                    .then(|| entropies.iter().sum::<f64>() / entropies.len() as f64),
                mean_selection_seconds: recs.iter().map(|r| r.selection_seconds).sum::<f64>()
                    / count,
                top_page_rate: recs.iter().filter(|r| r.in_top_page).count() as f64 / count,
                mean_very_similar_top10: recs.iter().map(|r| r.very_similar_top10).sum::<f64>()
                    / count,
                episodes: run.episodes.len(),
                exhausted: run
                    .episodes
                    .iter()
                    .filter(|e| e.exhausted && e.records.len() <= t)
                    .count(),
                failed: run.failures.len(),
            });
        }
    }
    rows
}

impl ExperimentReport {
    pub fn run(&self, policy: Policy) -> Option<&PolicyRun> {
        self.runs.iter().find(|r| r.policy == policy)
    }

    pub fn row(&self, policy: Policy, iteration: usize) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.iteration == iteration)
    }

    /// Percentile rank per query at `iteration`, `None` for failed episodes.
    pub fn percentiles_at(&self, policy: Policy, iteration: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; self.targets.len()];
        if let Some(run) = self.run(policy) {
            let mut failed = run.failures.iter().map(|f| f.0).peekable();
            let mut eps = run.episodes.iter();
            for (q, slot) in out.iter_mut().enumerate() {
                if failed.peek() == Some(&q) {
                    failed.next();
                    continue;
                }
                *slot = eps.next().map(|e| record_at(e, iteration).percentile_rank);
            }
        }
        out
    }

    /// One-sided sign test that `better` beats `worse` at `iteration`, over
    /// the queries both completed.
    pub fn paired_sign_test(&self, better: Policy, worse: Policy, iteration: usize) -> SignTest {
        let a = self.percentiles_at(better, iteration);
        let b = self.percentiles_at(worse, iteration);
        let diffs: Vec<f64> = a
            .iter()
            .zip(&b)
            .filter_map(|(x, y)| Some((*x)? - (*y)?))
            .collect();
        sign_test(&diffs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "policy,iteration,mean_percentile_rank,median_percentile_rank,sd_percentile_rank,mean_ndcg,\
             mean_entropy,mean_selection_seconds,top_page_rate,mean_very_similar_top10,episodes,exhausted,failed\n",
        );
        for r in &self.rows {
            let entropy = r.mean_entropy.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.policy,
                r.iteration,
                r.mean_percentile_rank,
                r.median_percentile_rank,
                r.sd_percentile_rank,
                r.mean_ndcg,
                entropy,
                r.mean_selection_seconds,
                r.top_page_rate,
                r.mean_very_similar_top10,
                r.episodes,
                r.exhausted,
                r.failed
            );
        }
        out
    }

    /// Per-policy arrays indexed by iteration, for plotting.
    pub fn curves(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for run in &self.runs {
            let rows: Vec<&AggregateRow> = self
                .rows
                .iter()
                .filter(|r| r.policy == run.policy)
                .collect();
            map.insert(
                run.policy.to_string(),
                serde_json::json!({
                    "iteration": rows.iter().map(|r| r.iteration).collect::<Vec<_>>(),
                    "mean_percentile_rank": rows.iter().map(|r| r.mean_percentile_rank).collect::<Vec<_>>(),
                    "median_percentile_rank": rows.iter().map(|r| r.median_percentile_rank).collect::<Vec<_>>(),
                    "mean_ndcg": rows.iter().map(|r| r.mean_ndcg).collect::<Vec<_>>(),
                    "mean_selection_seconds": rows.iter().map(|r| r.mean_selection_seconds).collect::<Vec<_>>(),
                }),
            );
        }
        serde_json::Value::Object(map)
    }

    /// Writes `results.csv` and `curves.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("results.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let curves = dir.join("curves.json");
        let text = serde_json::to_string_pretty(&self.curves())?;
        fs::write(&curves, text).map_err(|e| Error::io(&curves, e))?;
        Ok(())
    }
}
