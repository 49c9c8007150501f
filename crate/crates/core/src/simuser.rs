//! Simulated users for experiments.
//!
//! Relative answers compare noisy predicted attribute values of the target and
//! the reference; binary answers threshold the target's ground-truth distance
//! to the exemplar. Every draw comes from one seeded stream per user.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::{AttributeSpace, FeedbackConstraint, Response};
use crate::ImageId;

/// Nearest-rank 75th percentile of the absolute score differences of pairs
/// labeled "equally"; `None` when there are no such pairs.
pub fn equal_threshold_from_training(diffs: &[f64]) -> Option<f64> {
    if diffs.is_empty() {
        return None;
    }
    let mut abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = (0.75 * abs.len() as f64).ceil() as usize;
    Some(abs[rank.max(1) - 1])
}

/// Fallback threshold: a tenth of the standard deviation of the attribute's
/// predicted values.
pub fn equal_threshold_fallback(values: &[f64]) -> f64 {
    0.1 * std_dev(values)
}

pub(crate) fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUserConfig {
    /// Gaussian noise SD added to each predicted attribute value, per attribute.
    pub noise_sd: Vec<f64>,
    /// Per-attribute "equally" band; the index's thresholds are used when absent.
    #[serde(default)]
    pub equal_threshold: Option<Vec<f64>>,
    /// "Similar" means at least this many SDs below the target's mean distance.
    pub binary_similar_band: f64,
    /// Noise on ground-truth distances, as a fraction of the target's distance SD.
    pub binary_noise: f64,
    pub seed: u64,
}

impl SimUserConfig {
    /// Noise of `relative_noise` times each attribute's predicted-value SD.
    pub fn for_space(space: &AttributeSpace, relative_noise: f64, seed: u64) -> Self {
        let noise_sd = (0..space.m())
            .map(|m| relative_noise * std_dev(&space.column(m)))
            .collect();
        Self {
            noise_sd,
            equal_threshold: None,
            binary_similar_band: 1.0,
            binary_noise: relative_noise,
            seed,
        }
    }

    pub fn noiseless(space: &AttributeSpace, seed: u64) -> Self {
        Self::for_space(space, 0.0, seed)
    }

    fn check(&self, space: &AttributeSpace) -> Result<()> {
        if self.noise_sd.len() != space.m() {
            return Err(Error::DimensionMismatch {
                field: "noise_sd".into(),
                expected: space.m(),
                found: self.noise_sd.len(),
            });
        }
        if self.noise_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("noise_sd", "must be non-negative"));
        }
        if let Some(t) = &self.equal_threshold {
            if t.len() != space.m() {
                return Err(Error::DimensionMismatch {
                    field: "equal_threshold".into(),
                    expected: space.m(),
                    found: t.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryResponse {
    Similar,
    Dissimilar,
}

/// A simulated statement and the confidence it was given with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedStatement {
    pub constraint: FeedbackConstraint,
    pub confidence: u8,
}

#[derive(Debug, Clone)]
pub struct SimUser {
    config: SimUserConfig,
    rng: ChaCha8Rng,
}

impl SimUser {
    pub fn new(space: &AttributeSpace, config: SimUserConfig) -> Result<Self> {
        config.check(space)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &SimUserConfig {
        &self.config
    }

    fn threshold(&self, space: &AttributeSpace, m: usize) -> f64 {
        match &self.config.equal_threshold {
            Some(t) => t[m],
            None => space.equal_threshold(m),
        }
    }

    fn noise(&mut self, sd: f64) -> f64 {
        if sd == 0.0 {
            return 0.0;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        sd * z
    }

    /// Answer to "is the target more, less, or equally `m` than `pivot`?" with
    /// confidence 3 when the noisy gap exceeds twice the equality band.
    pub fn relative_response(
        &mut self,
        space: &AttributeSpace,
        target: ImageId,
        pivot: ImageId,
        m: usize,
    ) -> Result<(Response, u8)> {
        for id in [target, pivot] {
            if id >= space.n() {
                return Err(Error::UnknownImage(id));
            }
        }
        if m >= space.m() {
            return Err(Error::UnknownAttribute {
                attribute: m,
                m: space.m(),
            });
        }
        let sd = self.config.noise_sd[m];
        let et = self.noise(sd);
        let ep = self.noise(sd);
        let diff = (space.value(target, m) + et) - (space.value(pivot, m) + ep);
        let thr = self.threshold(space, m);
        let response = if diff.abs() <= thr {
            Response::Equal
        } else if diff > 0.0 {
            Response::More
        } else {
            Response::Less
        };
        let confidence = if diff.abs() > 2.0 * thr { 3 } else { 2 };
        Ok((response, confidence))
    }

    /// "Similar" when the (noisy) distance from target to exemplar sits at
    /// least `binary_similar_band` SDs below the mean of `target_distances`,
    /// the target's distances to every image.
    pub fn binary_response(
        &mut self,
        target_distances: &[f64],
        exemplar: ImageId,
    ) -> Result<BinaryResponse> {
        let d = *target_distances
            .get(exemplar)
            .ok_or(Error::UnknownImage(exemplar))?;
        let n = target_distances.len() as f64;
        let mean = target_distances.iter().sum::<f64>() / n;
        let sd = std_dev(target_distances);
        let noisy = d + self.noise(self.config.binary_noise * sd);
        Ok(if noisy <= mean - self.config.binary_similar_band * sd {
            BinaryResponse::Similar
        } else {
            BinaryResponse::Dissimilar
        })
    }

    /// Splits `shown` by noisy distance to the target: the closest quarter is
    /// returned as similar, the farthest quarter as dissimilar.
    pub fn binary_quartiles(
        &mut self,
        target_distances: &[f64],
        shown: &[ImageId],
    ) -> Result<(Vec<ImageId>, Vec<ImageId>)> {
        if let Some(&bad) = shown.iter().find(|&&i| i >= target_distances.len()) {
            return Err(Error::UnknownImage(bad));
        }
        let sd = self.config.binary_noise * std_dev(target_distances);
        let mut scored: Vec<(f64, ImageId)> = shown
            .iter()
            .map(|&i| (target_distances[i] + self.noise(sd), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let q = scored.len() / 4;
        let similar = scored[..q].iter().map(|s| s.1).collect();
        let dissimilar = scored[scored.len() - q..].iter().map(|s| s.1).collect();
        Ok((similar, dissimilar))
    }

    /// Draws statements about `shown` images the way a user picking freely
    /// would: candidate (reference, attribute) pairs in random order, answered,
    /// and the `n_statements` most confident kept. Pairs in `used` are never
    /// offered and the returned pairs are added to it.
    pub fn free_choice_feedback(
        &mut self,
        space: &AttributeSpace,
        target: ImageId,
        shown: &[ImageId],
        n_statements: usize,
        used: &mut HashSet<(ImageId, usize)>,
    ) -> Result<Vec<SimulatedStatement>> {
        if shown.is_empty() {
            return Err(Error::Empty("shown images"));
        }
        let mut candidates: Vec<(ImageId, usize)> = shown
            .iter()
            .flat_map(|&r| (0..space.m()).map(move |m| (r, m)))
            .filter(|p| !used.contains(p))
            .collect();
        candidates.dedup();
        candidates.shuffle(&mut self.rng);
        let mut answered = Vec::with_capacity(candidates.len());
        for (r, m) in candidates {
            let (response, confidence) = self.relative_response(space, target, r, m)?;
            answered.push(SimulatedStatement {
                constraint: FeedbackConstraint::new(r, m, response).with_confidence(confidence),
                confidence,
            });
        }
        // Stable: equal confidences keep their shuffled order.
        answered.sort_by_key(|s| std::cmp::Reverse(s.confidence));
        answered.truncate(n_statements);
        for s in &answered {
            used.insert((s.constraint.ref_image, s.constraint.attribute));
        }
        Ok(answered)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
