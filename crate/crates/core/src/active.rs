//! Active question selection by expected entropy reduction.
//!
//! Only the current pivot of each attribute tree is considered as a reference
//! image, so one selection costs `O(M N)`: for each of at most `M` pivots we
//! score the three hypothetical answers against all `N` images.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::SearchIndex;
use crate::pivots::PivotSet;
use crate::relevance::{clamped_ln, AttributeSpace, RelevanceState, Response};
use crate::ImageId;

/// Binary entropy in bits of a Bernoulli whose success log-probability is `log_p`.
#[inline]
pub fn binary_entropy_from_log(log_p: f64) -> f64 {
    if log_p >= 0.0 {
        return 0.0;
    }
    let p = log_p.exp();
    let q = -log_p.exp_m1();
    let a = if p > 0.0 { -p * log_p } else { 0.0 };
    let b = if q > 0.0 { -q * q.ln() } else { 0.0 };
    (a + b) / LN_2
}

/// Total relevance entropy in bits, treating each image's relevance as an
/// independent Bernoulli variable.
pub fn entropy(state: &RelevanceState) -> f64 {
    state
        .log_relevance
        .iter()
        .map(|&lr| binary_entropy_from_log(lr))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    AllRelevant,
    #[default]
    MostRelevant,
    SimilarQuestion,
}

impl std::str::FromStr for LikelihoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_relevant" => Ok(Self::AllRelevant),
            "most_relevant" => Ok(Self::MostRelevant),
            "similar_question" => Ok(Self::SimilarQuestion),
            other => Err(Error::invalid(
                "likelihood_model",
                format!("unknown {other:?}"),
            )),
        }
    }
}

/// How the user's answer to a not-yet-asked question is predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    pub kind: LikelihoodKind,
    /// `M x M` attribute similarity; identity when absent.
    pub tau_table: Option<Vec<Vec<f64>>>,
    /// Weight on pivot feature distance in question similarity.
    pub distance_scale: f64,
}

impl Default for LikelihoodModel {
    fn default() -> Self {
        Self {
            kind: LikelihoodKind::MostRelevant,
            tau_table: None,
            distance_scale: 1.0,
        }
    }
}

impl LikelihoodModel {
    pub fn for_index(kind: LikelihoodKind, index: &SearchIndex) -> Self {
        Self {
            kind,
            tau_table: Some(index.tau.clone()),
            distance_scale: index.distance_scale,
        }
    }

    fn tau(&self, a: usize, b: usize) -> f64 {
        match &self.tau_table {
            Some(t) => t[a][b],
            None => f64::from(u8::from(a == b)),
        }
    }
}

/// A candidate comparison: reference image plus attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question {
    pub attribute: usize,
    pub pivot_image: ImageId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuestion {
    pub pivot_image: ImageId,
    pub attribute: usize,
    pub expected_entropy: f64,
    /// Predicted probabilities of (more, less, equal).
    pub response_likelihoods: [f64; 3],
}

impl CandidateQuestion {
    pub fn question(&self) -> Question {
        Question {
            attribute: self.attribute,
            pivot_image: self.pivot_image,
        }
    }
}

/// Predicted probabilities of (more, less, equal) for question `q`.
pub fn response_likelihood(
    model: &LikelihoodModel,
    index: &SearchIndex,
    state: &RelevanceState,
    q: Question,
) -> [f64; 3] {
    let space = &index.space;
    match model.kind {
        LikelihoodKind::MostRelevant => most_relevant(space, state, q),
        LikelihoodKind::AllRelevant => {
            let max = state
                .log_relevance
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut acc = [0.0; 3];
            for (i, &lr) in state.log_relevance.iter().enumerate() {
                // Rescaled by exp(-max); the renormalization below cancels it.
                let w = (lr - max).exp();
                let p = space
                    .response_probs(i, q.pivot_image, q.attribute)
                    .to_array();
                for (a, pr) in acc.iter_mut().zip(p) {
                    *a += w * pr;
                }
            }
            let total: f64 = acc.iter().sum();
            if total > 0.0 && total.is_finite() {
                acc.map(|v| v / total)
            } else {
                [1.0 / 3.0; 3]
            }
        }
        LikelihoodKind::SimilarQuestion => {
            let mut best: Option<(f64, Response)> = None;
            for c in &state.history {
                let dist = index
                    .features
                    .squared_distance(q.pivot_image, c.ref_image)
                    .sqrt();
                let sim = model.tau(q.attribute, c.attribute) - model.distance_scale * dist;
                if best.is_none_or(|(s, _)| sim > s) {
                    best = Some((sim, c.response));
                }
            }
            match best {
                Some((_, r)) => {
                    let mut out = [0.0; 3];
                    out[r.index()] = 1.0;
                    out
                }
                None => most_relevant(space, state, q),
            }
        }
    }
}

fn most_relevant(space: &AttributeSpace, state: &RelevanceState, q: Question) -> [f64; 3] {
    let best = state.best_image();
    space
        .calibration(q.attribute)
        .response_probabilities(
            space.value(best, q.attribute),
            space.value(q.pivot_image, q.attribute),
        )
        .to_array()
}

/// Entropy after each hypothetical answer (more, less, equal) to `q`, without
/// touching `state`.
pub fn hypothetical_entropies(
    space: &AttributeSpace,
    state: &RelevanceState,
    q: Question,
) -> [f64; 3] {
    let cal = space.calibration(q.attribute);
    let pivot_value = space.value(q.pivot_image, q.attribute);
    let mut h = [0.0; 3];
    for (i, &lr) in state.log_relevance.iter().enumerate() {
        let p = cal.response_probabilities(space.value(i, q.attribute), pivot_value);
        h[0] += binary_entropy_from_log(lr + clamped_ln(p.more));
        h[1] += binary_entropy_from_log(lr + clamped_ln(p.less));
        h[2] += binary_entropy_from_log(lr + clamped_ln(p.equal));
    }
    h
}

/// Likelihood-weighted entropy after asking `q`.
pub fn expected_entropy(
    index: &SearchIndex,
    model: &LikelihoodModel,
    state: &RelevanceState,
    q: Question,
) -> Result<CandidateQuestion> {
    if q.attribute >= index.m() {
        return Err(Error::UnknownAttribute {
            attribute: q.attribute,
            m: index.m(),
        });
    }
    if q.pivot_image >= index.n() {
        return Err(Error::UnknownImage(q.pivot_image));
    }
    let likelihoods = response_likelihood(model, index, state, q);
    let h = hypothetical_entropies(&index.space, state, q);
    let expected = likelihoods.iter().zip(h).map(|(l, h)| l * h).sum();
    Ok(CandidateQuestion {
        pivot_image: q.pivot_image,
        attribute: q.attribute,
        expected_entropy: expected,
        response_likelihoods: likelihoods,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub question: CandidateQuestion,
    /// Number of candidate pivots scored; never more than `M`.
    pub evaluations: usize,
}

/// Picks the live pivot with the lowest expected entropy; the lower attribute
/// index wins ties.
pub fn select_question(
    pivots: &PivotSet,
    index: &SearchIndex,
    model: &LikelihoodModel,
    state: &RelevanceState,
) -> Result<Selection> {
    let mut best: Option<CandidateQuestion> = None;
    let mut evaluations = 0;
    for (attribute, pivot_image) in pivots.live(&index.trees) {
        let cand = expected_entropy(
            index,
            model,
            state,
            Question {
                attribute,
                pivot_image,
            },
        )?;
        evaluations += 1;
        if best.is_none_or(|b| cand.expected_entropy < b.expected_entropy) {
            best = Some(cand);
        }
    }
    best.map(|question| Selection {
        question,
        evaluations,
    })
    .ok_or(Error::SearchExhausted)
}

/// Kendall's tau-b between two score vectors, by direct pair comparison.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            field: "kendall tau inputs".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("kendall tau", "need at least two items"));
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].total_cmp(&a[j]) as i8;
            let db = b[i].total_cmp(&b[j]) as i8;
            if da == 0 {
                ties_a += 1;
            }
            if db == 0 {
                ties_b += 1;
            }
            if da != 0 && db != 0 {
                if da == db {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if ties_a == n0 || ties_b == n0 {
        return Err(Error::invalid("kendall tau", "zero variance input"));
    }
    let denom = (((n0 - ties_a) as f64) * ((n0 - ties_b) as f64)).sqrt();
    Ok((concordant - discordant) as f64 / denom)
}
