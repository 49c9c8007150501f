//! Probabilistic relevance from accumulated comparative feedback.
//!
//! An image's relevance is the probability that it satisfies every statement
//! the user has made, assuming independence across statements. Scores are kept
//! as sums of log-probabilities, one term per statement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{Calibration, ModelSet, ResponseProbs};
use crate::ImageId;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-9;

/// A user's answer to "is the target more, less, or equally `m` than image I?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    More,
    Less,
    Equal,
}

impl Response {
    pub const ALL: [Response; 3] = [Response::More, Response::Less, Response::Equal];

    pub fn flipped(self) -> Self {
        match self {
            Response::More => Response::Less,
            Response::Less => Response::More,
            Response::Equal => Response::Equal,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Response::More => "more",
            Response::Less => "less",
            Response::Equal => "equal",
        })
    }
}

impl FromStr for Response {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "more" => Ok(Response::More),
            "less" => Ok(Response::Less),
            "equal" | "equally" => Ok(Response::Equal),
            other => Err(Error::invalid(
                "response",
                format!("unknown response {other:?}"),
            )),
        }
    }
}

/// "The target is `response` `attribute` than `ref_image`".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConstraint {
    pub ref_image: ImageId,
    pub attribute: usize,
    pub response: Response,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl FeedbackConstraint {
    pub fn new(ref_image: ImageId, attribute: usize, response: Response) -> Self {
        Self {
            ref_image,
            attribute,
            response,
            weight: 1.0,
        }
    }

    /// Confidence 3 ("a lot") statements count twice.
    pub fn with_confidence(mut self, confidence: u8) -> Self {
        self.weight = if confidence >= 3 { 2.0 } else { 1.0 };
        self
    }

    pub fn validate(&self, space: &AttributeSpace) -> Result<()> {
        if self.ref_image >= space.n() {
            return Err(Error::UnknownImage(self.ref_image));
        }
        if self.attribute >= space.m() {
            return Err(Error::UnknownAttribute {
                attribute: self.attribute,
                m: space.m(),
            });
        }
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(Error::invalid("weight", "must be positive"));
        }
        Ok(())
    }
}

/// Predicted attribute values for every image together with each attribute's
/// calibration and "equally" threshold. Built once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpace {
    n: usize,
    m: usize,
    values: Vec<f64>,
    calibrations: Vec<Calibration>,
    equal_thresholds: Vec<f64>,
}

impl AttributeSpace {
    /// `values` is row-major `N x M`.
    pub fn new(
        n: usize,
        m: usize,
        values: Vec<f64>,
        calibrations: Vec<Calibration>,
        equal_thresholds: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != n * m {
            return Err(Error::DimensionMismatch {
                field: "attribute values".into(),
                expected: n * m,
                found: values.len(),
            });
        }
        if calibrations.len() != m || equal_thresholds.len() != m {
            return Err(Error::DimensionMismatch {
                field: "calibrations/thresholds".into(),
                expected: m,
                found: calibrations.len().min(equal_thresholds.len()),
            });
        }
        Ok(Self {
            n,
            m,
            values,
            calibrations,
            equal_thresholds,
        })
    }

    /// Scores every image of `features` with every model in `models`.
    pub fn from_models(
        models: &ModelSet,
        features: &crate::FeatureMatrix,
        equal_thresholds: Vec<f64>,
    ) -> Result<Self> {
        let m = models.m();
        let mut values = Vec::with_capacity(features.rows() * m);
        for x in features.iter_rows() {
            for model in &models.models {
                values.push(model.predict(x)?);
            }
        }
        let calibrations = models
            .models
            .iter()
            .map(|md| md.calibration().copied())
            .collect::<Result<Vec<_>>>()?;
        Self::new(features.rows(), m, values, calibrations, equal_thresholds)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn value(&self, image: ImageId, attribute: usize) -> f64 {
        self.values[image * self.m + attribute]
    }

    pub fn row(&self, image: ImageId) -> &[f64] {
        &self.values[image * self.m..(image + 1) * self.m]
    }

    pub fn column(&self, attribute: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, attribute)).collect()
    }

    pub fn calibration(&self, attribute: usize) -> &Calibration {
        &self.calibrations[attribute]
    }

    pub fn equal_threshold(&self, attribute: usize) -> f64 {
        self.equal_thresholds[attribute]
    }

    pub fn equal_thresholds(&self) -> &[f64] {
        &self.equal_thresholds
    }

    /// Normalized response probabilities of `image` against `reference`.
    #[inline]
    pub fn response_probs(
        &self,
        image: ImageId,
        reference: ImageId,
        attribute: usize,
    ) -> ResponseProbs {
        self.calibrations[attribute].response_probabilities(
            self.value(image, attribute),
            self.value(reference, attribute),
        )
    }
}

#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// Weighted log-probability that `image` satisfies `c`.
pub fn constraint_log_prob(
    space: &AttributeSpace,
    image: ImageId,
    c: &FeedbackConstraint,
) -> Result<f64> {
    c.validate(space)?;
    if image >= space.n() {
        return Err(Error::UnknownImage(image));
    }
    Ok(log_term(space, image, c))
}

#[inline]
fn log_term(space: &AttributeSpace, image: ImageId, c: &FeedbackConstraint) -> f64 {
    let p = space
        .response_probs(image, c.ref_image, c.attribute)
        .get(c.response);
    c.weight * clamped_ln(p)
}

/// Iverson-bracket satisfaction used by the counting variant.
pub fn satisfies_hard(space: &AttributeSpace, image: ImageId, c: &FeedbackConstraint) -> bool {
    let a = space.value(image, c.attribute);
    let r = space.value(c.ref_image, c.attribute);
    match c.response {
        Response::More => a > r,
        Response::Less => a < r,
        Response::Equal => (a - r).abs() <= space.equal_threshold(c.attribute),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    Probabilistic,
    Counting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceState {
    /// `log P(relevant)` per image.
    pub log_relevance: Vec<f64>,
    pub history: Vec<FeedbackConstraint>,
    pub satisfied_counts: Vec<u32>,
}

impl RelevanceState {
    pub fn new(n: usize) -> Self {
        Self {
            log_relevance: vec![0.0; n],
            history: Vec::new(),
            satisfied_counts: vec![0; n],
        }
    }

    /// Rebuilds a state from scratch by replaying `history`.
    pub fn replay(space: &AttributeSpace, history: &[FeedbackConstraint]) -> Result<Self> {
        let mut state = Self::new(space.n());
        for c in history {
            state.update(space, *c)?;
        }
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.log_relevance.len()
    }

    /// Adds one statement. Repeated statements accumulate.
    pub fn update(&mut self, space: &AttributeSpace, c: FeedbackConstraint) -> Result<()> {
        c.validate(space)?;
        if space.n() != self.n() {
            return Err(Error::DimensionMismatch {
                field: "relevance state".into(),
                expected: space.n(),
                found: self.n(),
            });
        }
        for (i, (lr, count)) in self
            .log_relevance
            .iter_mut()
            .zip(self.satisfied_counts.iter_mut())
            .enumerate()
        {
            *lr += log_term(space, i, &c);
            if satisfies_hard(space, i, &c) {
                *count += 1;
            }
        }
        self.history.push(c);
        Ok(())
    }

    pub fn probability(&self, image: ImageId) -> f64 {
        self.log_relevance[image].exp()
    }

    /// Most relevant image; the lowest id wins ties.
    pub fn best_image(&self) -> ImageId {
        let mut best = 0;
        for (i, &v) in self.log_relevance.iter().enumerate().skip(1) {
            if v > self.log_relevance[best] {
                best = i;
            }
        }
        best
    }

    pub fn rank(&self, mode: RankMode) -> Vec<ImageId> {
        match mode {
            RankMode::Probabilistic => rank_by(&self.log_relevance),
            RankMode::Counting => {
                let counts: Vec<f64> = self
                    .satisfied_counts
                    .iter()
                    .map(|&c| f64::from(c))
                    .collect();
                rank_by(&counts)
            }
        }
    }
}

/// Ids sorted by descending score, ties broken by ascending id.
pub fn rank_by(scores: &[f64]) -> Vec<ImageId> {
    let mut ids: Vec<ImageId> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

/// Fraction of the database ranked below `target`.
pub fn percentile_rank(ranking: &[ImageId], target: ImageId) -> Result<f64> {
    let pos = ranking
        .iter()
        .position(|&id| id == target)
        .ok_or(Error::UnknownImage(target))?;
    let n = ranking.len();
    if n == 1 {
        return Ok(1.0);
    }
    Ok((n - 1 - pos) as f64 / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> AttributeSpace {
        // Five images on two attributes.
        let values = vec![
            0.0, 1.0, //
            1.0, 0.5, //
            2.0, 0.0, //
            3.0, 2.0, //
            4.0, 1.5,
        ];
        let cal = Calibration {
            alpha: -4.0,
            beta: 0.0,
            gamma: 6.0,
            delta: -1.0,
        };
        AttributeSpace::new(5, 2, values, vec![cal; 2], vec![0.1, 0.1]).unwrap()
    }

    #[test]
    fn strongly_satisfied_constraint_is_near_zero() {
        let s = space();
        let c = FeedbackConstraint::new(0, 0, Response::More);
        let lp = constraint_log_prob(&s, 4, &c).unwrap();
        assert!(lp < 0.0 && lp > -1e-6, "{lp}");
    }

    #[test]
    fn weight_scales_log_prob() {
        let s = space();
        let c1 = FeedbackConstraint::new(2, 1, Response::Less);
        let c2 = FeedbackConstraint { weight: 2.0, ..c1 };
        let a = constraint_log_prob(&s, 1, &c1).unwrap();
        let b = constraint_log_prob(&s, 1, &c2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn response_log_probs_exponentiate_to_one() {
        let s = space();
        for i in 0..5 {
            let total: f64 = Response::ALL
                .iter()
                .map(|&r| {
                    constraint_log_prob(&s, i, &FeedbackConstraint::new(2, 0, r))
                        .unwrap()
                        .exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_reference_is_rejected() {
        let s = space();
        assert!(matches!(
            constraint_log_prob(&s, 0, &FeedbackConstraint::new(9, 0, Response::More)),
            Err(Error::UnknownImage(9))
        ));
    }

    #[test]
    fn first_update_sets_every_term() {
        let s = space();
        let c = FeedbackConstraint::new(1, 0, Response::More);
        let mut st = RelevanceState::new(5);
        st.update(&s, c).unwrap();
        for i in 0..5 {
            assert_eq!(st.log_relevance[i], constraint_log_prob(&s, i, &c).unwrap());
        }
        assert_eq!(st.satisfied_counts, vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn hard_satisfaction_cases() {
        let s = AttributeSpace::new(
            2,
            1,
            vec![0.5, 0.6],
            vec![Calibration {
                alpha: -1.0,
                beta: 0.0,
                gamma: 1.0,
                delta: 0.0,
            }],
            vec![0.0],
        )
        .unwrap();
        assert!(!satisfies_hard(
            &s,
            0,
            &FeedbackConstraint::new(1, 0, Response::More)
        ));
        assert!(satisfies_hard(
            &s,
            1,
            &FeedbackConstraint::new(1, 0, Response::Equal)
        ));
    }

    #[test]
    fn empty_history_ranks_identity() {
        let st = RelevanceState::new(6);
        assert_eq!(st.rank(RankMode::Probabilistic), (0..6).collect::<Vec<_>>());
        assert_eq!(st.rank(RankMode::Counting), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn percentile_rank_formula() {
        let ranking: Vec<usize> = (0..100).collect();
        assert_eq!(percentile_rank(&ranking, 0).unwrap(), 1.0);
        assert_eq!(percentile_rank(&ranking, 99).unwrap(), 0.0);
        assert_eq!(percentile_rank(&ranking, 24).unwrap(), 75.0 / 99.0);
        assert!(percentile_rank(&ranking, 100).is_err());
    }

    #[test]
    fn response_parses_aliases() {
        assert_eq!("equally".parse::<Response>().unwrap(), Response::Equal);
        assert_eq!("MORE".parse::<Response>().unwrap(), Response::More);
        assert!("bigger".parse::<Response>().is_err());
    }
}
