//! One simulated search for one target under one policy.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ground_truth::{BlockWeights, GroundTruth, GroundTruthSpace};
use super::metrics::{ndcg_at_k, percentile_rank};
use super::policy::Policy;
use crate::active::{
    entropy, expected_entropy, select_question, LikelihoodKind, LikelihoodModel, Question,
};
use crate::error::{Error, Result};
use crate::index::SearchIndex;
use crate::pivots::{AttributeTree, PivotSet};
use crate::ranker::{train_linear_svm, TrainConfig};
use crate::relevance::{rank_by, FeedbackConstraint, RankMode, RelevanceState, Response};
use crate::simuser::{SimUser, SimUserConfig};
use crate::timing::Stopwatch;
use crate::ImageId;

/// How the binary baseline turns SVM outputs into a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryScore {
    /// Signed decision value, larger is more relevant.
    #[default]
    Signed,
    /// Absolute decision value.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub iterations: usize,
    pub k_page: usize,
    pub k_ndcg: usize,
    pub likelihood_model: LikelihoodKind,
    /// Overrides the index's question-distance scale.
    pub lambda_distance_scale: Option<f64>,
    /// Confident answers count twice.
    pub confidence_weighting: bool,
    /// Simulated-user noise as a fraction of each attribute's spread.
    pub relative_noise: f64,
    pub binary_similar_band: f64,
    pub svm_c: f64,
    pub binary_score: BinaryScore,
    /// Random images the binary baselines peek at for their first two labels.
    pub binary_pool: usize,
    /// Reference images shown per round in the free-choice protocols.
    pub free_shown: usize,
    /// Statements (or labels) per round in the free-choice protocols.
    pub free_statements: usize,
    pub ground_truth: BlockWeights,
    /// Largest database the exhaustive policy will run on.
    pub exhaustive_limit: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            k_page: 40,
            k_ndcg: 50,
            likelihood_model: LikelihoodKind::MostRelevant,
            lambda_distance_scale: None,
            confidence_weighting: true,
            relative_noise: 0.1,
            binary_similar_band: 1.0,
            svm_c: 1.0,
            binary_score: BinaryScore::Signed,
            binary_pool: 40,
            free_shown: 16,
            free_statements: 8,
            ground_truth: BlockWeights::default(),
            exhaustive_limit: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub percentile_rank: f64,
    pub ndcg: f64,
    /// Relevance entropy in bits; absent for binary-feedback policies.
    pub entropy: Option<f64>,
    pub selection_seconds: f64,
    /// Feedback items received so far, the initial ones included.
    pub constraints: usize,
    /// Target within the first `k_page` results.
    pub in_top_page: bool,
    /// Share of the top 10 within the closest percent of the database.
    pub very_similar_top10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub policy: Policy,
    pub target: ImageId,
    /// Iteration 0 is the initialized state.
    pub records: Vec<IterationRecord>,
    /// The policy ran out of questions before the last iteration.
    pub exhausted: bool,
    pub questions: Vec<Question>,
    /// Final log-relevance of the target, for relative policies.
    pub target_log_relevance: Option<f64>,
}

/// Read-only material shared by every episode on one index.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub index: &'a SearchIndex,
    pub ground_truth: GroundTruthSpace,
    pub config: EpisodeConfig,
    pub likelihood: LikelihoodModel,
    user_template: SimUserConfig,
}

const STREAM_INIT: u64 = 1;
const STREAM_INIT_USER: u64 = 2;
const STREAM_USER: u64 = 3;
const STREAM_POLICY: u64 = 4;
const STREAM_BINARY_INIT: u64 = 5;
const STREAM_FREE_INIT: u64 = 6;

/// Independent sub-seed for `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<'a> EvalContext<'a> {
    pub fn new(index: &'a SearchIndex, config: EpisodeConfig) -> Result<Self> {
        if config.k_ndcg == 0 || config.k_page == 0 {
            return Err(Error::invalid(
                "k",
                "page and NDCG cutoffs must be positive",
            ));
        }
        if !(config.relative_noise >= 0.0) {
            return Err(Error::invalid("relative_noise", "must be non-negative"));
        }
        let ground_truth = GroundTruthSpace::new(index, config.ground_truth)?;
        let mut likelihood = LikelihoodModel::for_index(config.likelihood_model, index);
        if let Some(l) = config.lambda_distance_scale {
            likelihood.distance_scale = l;
        }
        let mut user_template = SimUserConfig::for_space(&index.space, config.relative_noise, 0);
        user_template.binary_similar_band = config.binary_similar_band;
        Ok(Self {
            index,
            ground_truth,
            config,
            likelihood,
            user_template,
        })
    }

    pub fn user(&self, seed: u64) -> Result<SimUser> {
        let mut cfg = self.user_template.clone();
        cfg.seed = seed;
        SimUser::new(&self.index.space, cfg)
    }

    fn constraint(
        &self,
        reference: ImageId,
        attribute: usize,
        response: Response,
        confidence: u8,
    ) -> FeedbackConstraint {
        let c = FeedbackConstraint::new(reference, attribute, response);
        if self.config.confidence_weighting {
            c.with_confidence(confidence)
        } else {
            c
        }
    }

    fn record(
        &self,
        gt: &GroundTruth,
        ranking: &[ImageId],
        iteration: usize,
        entropy: Option<f64>,
        selection_seconds: f64,
        constraints: usize,
    ) -> Result<IterationRecord> {
        let n = ranking.len();
        let position = ranking
            .iter()
            .position(|&i| i == gt.target)
            .ok_or(Error::UnknownImage(gt.target))?;
        Ok(IterationRecord {
            iteration,
            percentile_rank: percentile_rank(ranking, gt.target)?,
            ndcg: ndcg_at_k(ranking, &gt.graded_relevance, self.config.k_ndcg.min(n))?,
            entropy,
            selection_seconds,
            constraints,
            in_top_page: position < self.config.k_page,
            very_similar_top10: gt.very_similar_fraction(ranking, 10),
        })
    }

    fn svm_ranking(&self, labels: &[(ImageId, bool)]) -> Result<(Vec<f64>, Vec<ImageId>)> {
        let cfg = TrainConfig {
            c: self.config.svm_c,
            ..TrainConfig::default()
        };
        let svm = train_linear_svm(labels, &self.index.features, &cfg)?;
        let decisions: Vec<f64> = self
            .index
            .features
            .iter_rows()
            .map(|x| svm.decision(x))
            .collect();
        let ranking = match self.config.binary_score {
            BinaryScore::Signed => rank_by(&decisions),
            BinaryScore::Magnitude => {
                rank_by(&decisions.iter().map(|v| v.abs()).collect::<Vec<_>>())
            }
        };
        Ok((decisions, ranking))
    }
}

/// The statement every relative policy starts from for this query: a random
/// reference and attribute, answered by the simulated user.
pub fn initial_constraint(
    ctx: &EvalContext<'_>,
    target: ImageId,
    seed: u64,
) -> Result<FeedbackConstraint> {
    let index = ctx.index;
    let n = index.n();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
    let reference = if n > 1 {
        let r = rng.random_range(0..n - 1);
        if r >= target {
            r + 1
        } else {
            r
        }
    } else {
        target
    };
    let attribute = rng.random_range(0..index.m());
    let mut user = ctx.user(derive_seed(seed, STREAM_INIT_USER))?;
    let (response, confidence) =
        user.relative_response(&index.space, target, reference, attribute)?;
    Ok(ctx.constraint(reference, attribute, response, confidence))
}

/// Uniform sample of `k` ids from `0..n` without `exclude`.
fn sample_excluding(rng: &mut ChaCha8Rng, n: usize, k: usize, exclude: ImageId) -> Vec<ImageId> {
    let k = k.min(n.saturating_sub(1));
    sample(rng, n - 1, k)
        .into_iter()
        .map(|i| if i >= exclude { i + 1 } else { i })
        .collect()
}

pub fn run_episode(
    ctx: &EvalContext<'_>,
    policy: Policy,
    target: ImageId,
    seed: u64,
) -> Result<EpisodeResult> {
    let n = ctx.index.n();
    if target >= n {
        return Err(Error::UnknownImage(target));
    }
    if n < 2 {
        return Err(Error::invalid(
            "dataset",
            "episodes need at least two images",
        ));
    }
    let gt = ctx.ground_truth.ground_truth_for(target)?;
    match policy {
        Policy::ActivePivots
        | Policy::PivotsRoundRobin
        | Policy::ActiveExhaustive
        | Policy::Top
        | Policy::Passive => {
            if policy == Policy::ActiveExhaustive && n > ctx.config.exhaustive_limit {
                return Err(Error::invalid(
                    "ACTIVE_EXHAUSTIVE",
                    format!(
                        "N = {n} exceeds the limit of {}",
                        ctx.config.exhaustive_limit
                    ),
                ));
            }
            relative_episode(ctx, policy, &gt, seed)
        }
        Policy::BinaryActive | Policy::BinaryPassive => binary_episode(ctx, policy, &gt, seed),
        Policy::WhittleFree | Policy::BinaryFree => free_episode(ctx, policy, &gt, seed),
    }
}

/// Walks cursors past pivots whose question was already answered.
fn skip_answered(
    pivots: &mut PivotSet,
    trees: &[AttributeTree],
    asked: &HashMap<(ImageId, usize), Response>,
) -> Result<()> {
    for m in 0..trees.len() {
        while let Some(p) = pivots.pivot(trees, m) {
            match asked.get(&(p, m)) {
                Some(&r) => pivots.descend(trees, m, r)?,
                None => break,
            }
        }
    }
    Ok(())
}

fn relative_episode(
    ctx: &EvalContext<'_>,
    policy: Policy,
    gt: &GroundTruth,
    seed: u64,
) -> Result<EpisodeResult> {
    let index = ctx.index;
    let space = &index.space;
    let (n, m_count) = (index.n(), index.m());
    let target = gt.target;
    let mut user = ctx.user(derive_seed(seed, STREAM_USER))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_POLICY));
    let mut state = RelevanceState::new(n);
    let mut pivots = PivotSet::at_roots(&index.trees);
    let mut asked: HashMap<(ImageId, usize), Response> = HashMap::new();
    let mut questions = Vec::new();

    let apply = |c: FeedbackConstraint,
                 state: &mut RelevanceState,
                 pivots: &mut PivotSet,
                 asked: &mut HashMap<(ImageId, usize), Response>|
     -> Result<()> {
        state.update(space, c)?;
        pivots.observe(&index.trees, &c)?;
        asked.insert((c.ref_image, c.attribute), c.response);
        Ok(())
    };

    let init = initial_constraint(ctx, target, seed)?;
    apply(init, &mut state, &mut pivots, &mut asked)?;
    let mut records = vec![ctx.record(
        gt,
        &state.rank(RankMode::Probabilistic),
        0,
        Some(entropy(&state)),
        0.0,
        1,
    )?];

    let mut round: Vec<usize> = Vec::new();
    let mut exhausted = false;
    for t in 1..=ctx.config.iterations {
        let clock = Stopwatch::start();
        let question = match policy {
            Policy::ActivePivots => {
                skip_answered(&mut pivots, &index.trees, &asked)?;
                if pivots.is_exhausted() {
                    None
                } else {
                    Some(
                        select_question(&pivots, index, &ctx.likelihood, &state)?
                            .question
                            .question(),
                    )
                }
            }
            Policy::PivotsRoundRobin => {
                skip_answered(&mut pivots, &index.trees, &asked)?;
                let mut q = None;
                while !pivots.is_exhausted() {
                    if round.is_empty() {
                        round = pivots.live(&index.trees).map(|(m, _)| m).collect();
                        round.shuffle(&mut rng);
                    }
                    let m = round.pop().expect("refilled with live attributes");
                    if let Some(p) = pivots.pivot(&index.trees, m) {
                        q = Some(Question {
                            attribute: m,
                            pivot_image: p,
                        });
                        break;
                    }
                }
                q
            }
            Policy::ActiveExhaustive => {
                let mut best: Option<(f64, Question)> = None;
                for attribute in 0..m_count {
                    for pivot_image in 0..n {
                        if asked.contains_key(&(pivot_image, attribute)) {
                            continue;
                        }
                        let q = Question {
                            attribute,
                            pivot_image,
                        };
                        let e =
                            expected_entropy(index, &ctx.likelihood, &state, q)?.expected_entropy;
                        if best.is_none_or(|(b, _)| e < b) {
                            best = Some((e, q));
                        }
                    }
                }
                best.map(|b| b.1)
            }
            Policy::Top => {
                let mut q = None;
                for image in state.rank(RankMode::Probabilistic) {
                    let open: Vec<usize> = (0..m_count)
                        .filter(|&m| !asked.contains_key(&(image, m)))
                        .collect();
                    if !open.is_empty() {
                        q = Some(Question {
                            attribute: open[rng.random_range(0..open.len())],
                            pivot_image: image,
                        });
                        break;
                    }
                }
                q
            }
            Policy::Passive => {
                if asked.len() >= n * m_count {
                    None
                } else {
                    loop {
                        let q = Question {
                            attribute: rng.random_range(0..m_count),
                            pivot_image: rng.random_range(0..n),
                        };
                        if !asked.contains_key(&(q.pivot_image, q.attribute)) {
                            break Some(q);
                        }
                    }
                }
            }
            _ => unreachable!("not a relative policy"),
        };
        let seconds = clock.seconds();
        let Some(q) = question else {
            exhausted = true;
            break;
        };
        let (response, confidence) =
            user.relative_response(space, target, q.pivot_image, q.attribute)?;
        let c = ctx.constraint(q.pivot_image, q.attribute, response, confidence);
        apply(c, &mut state, &mut pivots, &mut asked)?;
        questions.push(q);
        records.push(ctx.record(
            gt,
            &state.rank(RankMode::Probabilistic),
            t,
            Some(entropy(&state)),
            seconds,
            t + 1,
        )?);
    }
    Ok(EpisodeResult {
        policy,
        target,
        records,
        exhausted,
        questions,
        target_log_relevance: Some(state.log_relevance[target]),
    })
}

fn binary_episode(
    ctx: &EvalContext<'_>,
    policy: Policy,
    gt: &GroundTruth,
    seed: u64,
) -> Result<EpisodeResult> {
    let n = ctx.index.n();
    let target = gt.target;
    let mut user = ctx.user(derive_seed(seed, STREAM_USER))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_POLICY));
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_BINARY_INIT));
    let pool = sample_excluding(&mut init_rng, n, ctx.config.binary_pool, target);
    if pool.len() < 2 {
        return Err(Error::invalid(
            "binary_pool",
            "need at least two images to peek at",
        ));
    }
    let by_distance =
        |a: &ImageId, b: &ImageId| gt.distances[*a].total_cmp(&gt.distances[*b]).then(a.cmp(b));
    let positive = *pool
        .iter()
        .min_by(|a, b| by_distance(a, b))
        .expect("nonempty pool");
    let negative = *pool
        .iter()
        .max_by(|a, b| by_distance(a, b))
        .expect("nonempty pool");
    let mut labels = vec![(positive, true), (negative, false)];
    let mut labeled: HashSet<ImageId> = [positive, negative].into_iter().collect();

    let (mut decisions, ranking) = ctx.svm_ranking(&labels)?;
    let mut records = vec![ctx.record(gt, &ranking, 0, None, 0.0, 2)?];
    let mut exhausted = false;
    for t in 1..=ctx.config.iterations {
        let clock = Stopwatch::start();
        let pick = if labeled.len() >= n {
            None
        } else if policy == Policy::BinaryActive {
            (0..n).filter(|i| !labeled.contains(i)).min_by(|&a, &b| {
                decisions[a]
                    .abs()
                    .total_cmp(&decisions[b].abs())
                    .then(a.cmp(&b))
            })
        } else {
            loop {
                let i = rng.random_range(0..n);
                if !labeled.contains(&i) {
                    break Some(i);
                }
            }
        };
        let seconds = clock.seconds();
        let Some(image) = pick else {
            exhausted = true;
            break;
        };
        let similar =
            user.binary_response(&gt.distances, image)? == crate::simuser::BinaryResponse::Similar;
        labels.push((image, similar));
        labeled.insert(image);
        let (d, ranking) = ctx.svm_ranking(&labels)?;
        decisions = d;
        records.push(ctx.record(gt, &ranking, t, None, seconds, labels.len())?);
    }
    Ok(EpisodeResult {
        policy,
        target,
        records,
        exhausted,
        questions: Vec::new(),
        target_log_relevance: None,
    })
}

fn free_episode(
    ctx: &EvalContext<'_>,
    policy: Policy,
    gt: &GroundTruth,
    seed: u64,
) -> Result<EpisodeResult> {
    let index = ctx.index;
    let n = index.n();
    let target = gt.target;
    let shown_count = ctx.config.free_shown;
    if shown_count == 0 || ctx.config.free_statements == 0 {
        return Err(Error::invalid(
            "free_shown",
            "shown images and statements must be positive",
        ));
    }
    let mut user = ctx.user(derive_seed(seed, STREAM_USER))?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FREE_INIT));
    let first_page = sample_excluding(&mut init_rng, n, shown_count, target);

    let mut state = RelevanceState::new(n);
    let mut used_pairs = HashSet::new();
    let mut used_refs: HashSet<ImageId> = HashSet::new();
    let mut labels: Vec<(ImageId, bool)> = Vec::new();
    let relative = policy == Policy::WhittleFree;

    let mut ranking = state.rank(RankMode::Counting);
    let entropy_of = |s: &RelevanceState| relative.then(|| entropy(s));
    let mut records = vec![ctx.record(gt, &ranking, 0, entropy_of(&state), 0.0, 0)?];
    let mut given = 0;
    let mut exhausted = false;
    for t in 1..=ctx.config.iterations {
        let clock = Stopwatch::start();
        let shown: Vec<ImageId> = if t == 1 {
            first_page.clone()
        } else {
            ranking
                .iter()
                .copied()
                .filter(|i| !used_refs.contains(i))
                .take(shown_count)
                .collect()
        };
        let seconds = clock.seconds();
        if shown.is_empty() {
            exhausted = true;
            break;
        }
        if relative {
            let statements = user.free_choice_feedback(
                &index.space,
                target,
                &shown,
                ctx.config.free_statements,
                &mut used_pairs,
            )?;
            for s in &statements {
                let c = s.constraint;
                state.update(
                    &index.space,
                    ctx.constraint(c.ref_image, c.attribute, c.response, s.confidence),
                )?;
                used_refs.insert(c.ref_image);
            }
            given += statements.len();
            ranking = state.rank(RankMode::Counting);
        } else {
            let (similar, dissimilar) = user.binary_quartiles(&gt.distances, &shown)?;
            for (ids, label) in [(similar, true), (dissimilar, false)] {
                for i in ids {
                    labels.push((i, label));
                    used_refs.insert(i);
                }
            }
            given = labels.len();
            if !labels.is_empty() {
                ranking = ctx.svm_ranking(&labels)?.1;
            }
        }
        records.push(ctx.record(gt, &ranking, t, entropy_of(&state), seconds, given)?);
    }
    Ok(EpisodeResult {
        policy,
        target,
        records,
        exhausted,
        questions: Vec::new(),
        target_log_relevance: relative.then(|| state.log_relevance[target]),
    })
}
