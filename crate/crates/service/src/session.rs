//! One live search: feedback history, pivot cursors, hybrid scorer and the
//! bookkeeping the API needs around them.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Instant, SystemTime};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use whittle_core::active::{entropy, select_question, LikelihoodKind, LikelihoodModel, Question};
use whittle_core::eval::episode::derive_seed;
use whittle_core::hybrid::{
    build_ordered_pairs, train_hybrid_scorer, BinaryFeedback, HybridScorer, SatisfactionPartition,
};
use whittle_core::pivots::PivotSet;
use whittle_core::{
    FeedbackConstraint, ImageId, RelevanceState, Response, SearchIndex, TrainConfig,
};

use crate::error::{Result, ServiceError};

const STREAM_ORDER: u64 = 11;
const STREAM_HYBRID: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[serde(alias = "free")]
    Free,
    #[serde(alias = "active")]
    Active,
    #[serde(alias = "hybrid")]
    Hybrid,
}

/// An attribute given by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeRef {
    Index(usize),
    Name(String),
}

impl AttributeRef {
    pub fn resolve(&self, index: &SearchIndex) -> Result<usize> {
        match self {
            AttributeRef::Index(m) if *m < index.m() => Ok(*m),
            AttributeRef::Index(m) => Err(ServiceError::bad(format!(
                "attribute {m} out of range (M = {})",
                index.m()
            ))),
            AttributeRef::Name(name) => index
                .attribute_names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(name))
                .ok_or_else(|| ServiceError::bad(format!("unknown attribute {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Low,
}

/// "Images whose predicted `attribute` falls in the top (or bottom) third."
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordPredicate {
    pub attribute: AttributeRef,
    pub level: Level,
}

/// Images matching every predicate, in id order.
pub fn keyword_matches(index: &SearchIndex, filter: &[KeywordPredicate]) -> Result<Vec<ImageId>> {
    let n = index.n();
    let mut keep = vec![true; n];
    for p in filter {
        let m = p.attribute.resolve(index)?;
        let mut sorted = index.space.column(m);
        sorted.sort_by(f64::total_cmp);
        let nearest_rank = |q: f64| sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        let (low, high) = (nearest_rank(1.0 / 3.0), nearest_rank(2.0 / 3.0));
        for (i, k) in keep.iter_mut().enumerate() {
            let v = index.space.value(i, m);
            *k &= match p.level {
                Level::Low => v <= low,
                Level::High => v > high,
            };
        }
    }
    let ids: Vec<ImageId> = (0..n).filter(|&i| keep[i]).collect();
    if ids.is_empty() {
        return Err(ServiceError::EmptyFilter);
    }
    Ok(ids)
}

/// A free-form statement: "the target is `response` `attribute` than `ref_id`".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub ref_id: ImageId,
    pub attribute: AttributeRef,
    pub response: Response,
    #[serde(default = "default_confidence")]
    pub confidence: u8,
}

fn default_confidence() -> u8 {
    2
}

/// Feedback body. FREE sessions send `statements`; HYBRID sessions add
/// `relevant`/`irrelevant`; ACTIVE sessions send `response` and the token of
/// the pending question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackRequest {
    pub statements: Vec<Statement>,
    pub relevant: Vec<ImageId>,
    pub irrelevant: Vec<ImageId>,
    pub response: Option<Response>,
    pub confidence: Option<u8>,
    pub question_token: Option<String>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRequest {
    pub page: usize,
    pub page_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageItem {
    pub id: ImageId,
    pub asset_path: Option<String>,
    pub score: f64,
    pub satisfied_count: u32,
    /// Predicted attribute values, in attribute order.
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<PageItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub token: String,
    pub attribute: usize,
    pub attribute_name: String,
    pub pivot_id: ImageId,
    pub pivot_asset_path: Option<String>,
    pub expected_entropy: f64,
}

#[derive(Debug, Clone)]
struct Pending {
    question: Question,
    token: String,
    expected_entropy: f64,
}

/// The durable part of a session. Everything else is rebuilt from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub keyword_filter: Vec<KeywordPredicate>,
    pub history: Vec<FeedbackConstraint>,
    #[serde(default)]
    pub binary: BinaryFeedback,
    #[serde(default)]
    pub shown: Vec<ImageId>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionSettings {
    pub likelihood: LikelihoodKind,
    pub pair_cap: usize,
    pub train: TrainConfig,
}

pub struct Session {
    pub id: String,
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    index: Arc<SearchIndex>,
    settings: SessionSettings,
    likelihood: LikelihoodModel,
    keyword_filter: Vec<KeywordPredicate>,
    base_order: Vec<ImageId>,
    state: RelevanceState,
    pivots: PivotSet,
    pending: Option<Pending>,
    binary: BinaryFeedback,
    scorer: Option<HybridScorer>,
    scores: Vec<f64>,
    ranking: Vec<ImageId>,
    shown: BTreeSet<ImageId>,
    iteration: usize,
    pub created: SystemTime,
    pub updated: SystemTime,
    pub last_used: Instant,
}

impl Session {
    pub fn new(
        id: String,
        dataset: String,
        index: Arc<SearchIndex>,
        mode: Mode,
        seed: u64,
        keyword_filter: Vec<KeywordPredicate>,
        settings: SessionSettings,
    ) -> Result<Self> {
        let matches = if keyword_filter.is_empty() {
            (0..index.n()).collect()
        } else {
            keyword_matches(&index, &keyword_filter)?
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ORDER));
        let mut first = matches.clone();
        first.shuffle(&mut rng);
        let mut rest: Vec<ImageId> = {
            let matched: BTreeSet<ImageId> = matches.into_iter().collect();
            (0..index.n()).filter(|i| !matched.contains(i)).collect()
        };
        rest.shuffle(&mut rng);
        first.extend(rest);

        let now = SystemTime::now();
        let mut session = Self {
            id,
            dataset,
            mode,
            seed,
            likelihood: LikelihoodModel::for_index(settings.likelihood, &index),
            state: RelevanceState::new(index.n()),
            pivots: PivotSet::at_roots(&index.trees),
            index,
            settings,
            keyword_filter,
            base_order: first,
            pending: None,
            binary: BinaryFeedback::default(),
            scorer: None,
            scores: Vec::new(),
            ranking: Vec::new(),
            shown: BTreeSet::new(),
            iteration: 0,
            created: now,
            updated: now,
            last_used: Instant::now(),
        };
        session.refresh()?;
        Ok(session)
    }

    /// Rebuilds a session from its record alone.
    pub fn restore(index: Arc<SearchIndex>, record: SessionRecord, settings: SessionSettings) -> Result<Self> {
        let mut s = Self::new(
            record.session_id,
            record.dataset,
            index,
            record.mode,
            record.seed,
            record.keyword_filter,
            settings,
        )?;
        record.binary.validate(s.index.n())?;
        for c in &record.history {
            s.state.update(&s.index.space, *c)?;
            if s.mode == Mode::Active {
                s.pivots.observe(&s.index.trees, c)?;
            }
        }
        if let Some(&id) = record.shown.iter().find(|&&id| id >= s.index.n()) {
            return Err(ServiceError::UnknownImage(id));
        }
        s.pending = None;
        s.binary = record.binary;
        s.shown = record.shown.into_iter().collect();
        s.iteration = record.iteration;
        if s.mode == Mode::Hybrid && (!s.binary.is_empty() || !s.state.history.is_empty()) {
            s.retrain()?;
        }
        s.refresh()?;
        Ok(s)
    }

    pub fn record(&self) -> SessionRecord {
        SessionRecord {
            session_id: self.id.clone(),
            dataset: self.dataset.clone(),
            mode: self.mode,
            seed: self.seed,
            keyword_filter: self.keyword_filter.clone(),
            history: self.state.history.clone(),
            binary: self.binary.clone(),
            shown: self.shown.iter().copied().collect(),
            iteration: self.iteration,
        }
    }

    pub fn index(&self) -> &SearchIndex {
        &self.index
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.state)
    }

    pub fn ranking(&self) -> &[ImageId] {
        &self.ranking
    }

    pub fn shown(&self) -> &BTreeSet<ImageId> {
        &self.shown
    }

    pub fn is_exhausted(&self) -> bool {
        self.mode == Mode::Active && self.pending.is_none()
    }

    pub fn question(&self) -> Option<QuestionView> {
        let p = self.pending.as_ref()?;
        Some(QuestionView {
            token: p.token.clone(),
            attribute: p.question.attribute,
            attribute_name: self.index.attribute_names[p.question.attribute].clone(),
            pivot_id: p.question.pivot_image,
            pivot_asset_path: self.index.asset_paths[p.question.pivot_image].clone(),
            expected_entropy: p.expected_entropy,
        })
    }

    /// One page of the current ranking; its images count as shown.
    pub fn page(&mut self, req: PageRequest) -> Result<Page> {
        if req.page_size == 0 {
            return Err(ServiceError::bad("page_size must be at least 1"));
        }
        let total = self.ranking.len();
        let start = req.page.checked_mul(req.page_size).filter(|&s| s < total).ok_or(
            ServiceError::PageOutOfRange {
                page: req.page,
                total,
            },
        )?;
        let end = (start + req.page_size).min(total);
        let items = self.ranking[start..end]
            .iter()
            .map(|&id| PageItem {
                id,
                asset_path: self.index.asset_paths[id].clone(),
                score: self.scores[id],
                satisfied_count: self.state.satisfied_counts[id],
                attributes: self.index.space.row(id).to_vec(),
            })
            .collect::<Vec<_>>();
        self.shown.extend(items.iter().map(|it| it.id));
        Ok(Page {
            page: req.page,
            page_size: req.page_size,
            total,
            items,
        })
    }

    pub fn submit(&mut self, req: &FeedbackRequest) -> Result<()> {
        match self.mode {
            Mode::Active => self.submit_active(req)?,
            Mode::Free => {
                if !req.relevant.is_empty() || !req.irrelevant.is_empty() {
                    return Err(ServiceError::bad("relevance labels need a HYBRID session"));
                }
                self.reject_active_fields(req)?;
                if req.statements.is_empty() {
                    return Err(ServiceError::bad("no statements"));
                }
                let cs = self.check_statements(&req.statements)?;
                self.apply_all(cs)?;
            }
            Mode::Hybrid => {
                self.reject_active_fields(req)?;
                if req.statements.is_empty() && req.relevant.is_empty() && req.irrelevant.is_empty() {
                    return Err(ServiceError::bad("no statements or relevance labels"));
                }
                let cs = self.check_statements(&req.statements)?;
                let binary = self.merged_binary(req)?;
                let mut trial_state = self.state.clone();
                for c in &cs {
                    trial_state.update(&self.index.space, *c)?;
                }
                let scorer = self.train_scorer(&trial_state, &binary, self.iteration + 1)?;
                self.state = trial_state;
                self.binary = binary;
                self.scorer = Some(scorer);
            }
        }
        self.iteration += 1;
        self.updated = SystemTime::now();
        self.refresh()
    }

    fn reject_active_fields(&self, req: &FeedbackRequest) -> Result<()> {
        if req.response.is_some() || req.question_token.is_some() || req.confidence.is_some() {
            return Err(ServiceError::bad(
                "response/question_token/confidence belong to ACTIVE sessions",
            ));
        }
        Ok(())
    }

    fn submit_active(&mut self, req: &FeedbackRequest) -> Result<()> {
        if !req.statements.is_empty() || !req.relevant.is_empty() || !req.irrelevant.is_empty() {
            return Err(ServiceError::bad("ACTIVE sessions answer the pending question only"));
        }
        let token = req
            .question_token
            .as_deref()
            .ok_or_else(|| ServiceError::bad("question_token is required"))?;
        let pending = self.pending.as_ref().ok_or(ServiceError::Exhausted)?;
        if pending.token != token {
            return Err(ServiceError::StaleQuestion);
        }
        let response = req
            .response
            .ok_or_else(|| ServiceError::bad("response is required"))?;
        let confidence = check_confidence(req.confidence.unwrap_or(2))?;
        let q = pending.question;
        let c = FeedbackConstraint::new(q.pivot_image, q.attribute, response).with_confidence(confidence);
        self.state.update(&self.index.space, c)?;
        self.pivots.descend(&self.index.trees, q.attribute, response)?;
        self.pending = None;
        Ok(())
    }

    fn check_statements(&self, statements: &[Statement]) -> Result<Vec<FeedbackConstraint>> {
        statements
            .iter()
            .map(|s| {
                if s.ref_id >= self.index.n() {
                    return Err(ServiceError::UnknownImage(s.ref_id));
                }
                if !self.shown.contains(&s.ref_id) {
                    return Err(ServiceError::NotShown(s.ref_id));
                }
                let m = s.attribute.resolve(&self.index)?;
                let confidence = check_confidence(s.confidence)?;
                Ok(FeedbackConstraint::new(s.ref_id, m, s.response).with_confidence(confidence))
            })
            .collect()
    }

    fn merged_binary(&self, req: &FeedbackRequest) -> Result<BinaryFeedback> {
        let mut b = self.binary.clone();
        for &id in req.relevant.iter().chain(&req.irrelevant) {
            if id >= self.index.n() {
                return Err(ServiceError::UnknownImage(id));
            }
            if !self.shown.contains(&id) {
                return Err(ServiceError::NotShown(id));
            }
        }
        b.relevant.extend(req.relevant.iter().copied());
        b.irrelevant.extend(req.irrelevant.iter().copied());
        b.validate(self.index.n())
            .map_err(|e| ServiceError::bad(e.to_string()))?;
        Ok(b)
    }

    fn apply_all(&mut self, cs: Vec<FeedbackConstraint>) -> Result<()> {
        for c in cs {
            self.state.update(&self.index.space, c)?;
        }
        Ok(())
    }

    fn train_scorer(&self, state: &RelevanceState, binary: &BinaryFeedback, round: usize) -> Result<HybridScorer> {
        let partition = SatisfactionPartition::from_counts(&state.satisfied_counts, state.history.len())?;
        let pairs = build_ordered_pairs(
            binary,
            &partition,
            self.settings.pair_cap,
            derive_seed(self.seed, STREAM_HYBRID + ((round as u64) << 8)),
        )
        .map_err(|e| ServiceError::bad(e.to_string()))?;
        Ok(train_hybrid_scorer(&pairs, &self.index.features, &self.settings.train)?)
    }

    fn retrain(&mut self) -> Result<()> {
        self.scorer = Some(self.train_scorer(&self.state, &self.binary, self.iteration)?);
        Ok(())
    }

    /// Recomputes scores, ranking and (in ACTIVE mode) the pending question.
    fn refresh(&mut self) -> Result<()> {
        self.scores = match (self.mode, &self.scorer) {
            (Mode::Active, _) => self.state.log_relevance.clone(),
            (Mode::Hybrid, Some(s)) => s.score_all(&self.index.features),
            _ => self.state.satisfied_counts.iter().map(|&c| f64::from(c)).collect(),
        };
        let mut ranking = self.base_order.clone();
        ranking.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        self.ranking = ranking;
        if self.mode == Mode::Active && self.pending.is_none() && !self.pivots.is_exhausted() {
            let sel = select_question(&self.pivots, &self.index, &self.likelihood, &self.state)?;
            self.pending = Some(Pending {
                question: sel.question.question(),
                token: uuid::Uuid::new_v4().simple().to_string(),
                expected_entropy: sel.question.expected_entropy,
            });
        }
        Ok(())
    }
}

fn check_confidence(c: u8) -> Result<u8> {
    if (1..=3).contains(&c) {
        Ok(c)
    } else {
        Err(ServiceError::bad(format!("confidence {c} outside 1..=3")))
    }
}
