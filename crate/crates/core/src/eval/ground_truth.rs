//! Target-centred ground truth: every image ranked by a weighted distance over
//! the raw features and the predicted attribute values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::SearchIndex;
use crate::relevance::rank_by;
use crate::ImageId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub features: f64,
    pub attributes: f64,
}

impl Default for BlockWeights {
    fn default() -> Self {
        Self {
            features: 0.5,
            attributes: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub target: ImageId,
    pub distances: Vec<f64>,
    /// Ids by ascending distance, ties by id.
    pub ranking: Vec<ImageId>,
    /// `(N - position) / N` with 1-based positions.
    pub graded_relevance: Vec<f64>,
}

impl GroundTruth {
    /// Fraction of the first `k` entries of `ranking` whose distance to the
    /// target falls below the 1st percentile of all distances.
    pub fn very_similar_fraction(&self, ranking: &[ImageId], k: usize) -> f64 {
        let mut sorted = self.distances.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = sorted[(sorted.len() - 1) / 100];
        let k = k.min(ranking.len());
        if k == 0 {
            return 0.0;
        }
        ranking[..k]
            .iter()
            .filter(|&&i| self.distances[i] <= cut)
            .count() as f64
            / k as f64
    }
}

/// Per-image embedding in which plain Euclidean distance is the ground-truth
/// distance. Each block is divided by the square root of its total variance
/// and multiplied by the square root of its weight.
#[derive(Debug, Clone)]
pub struct GroundTruthSpace {
    dim: usize,
    data: Vec<f64>,
}

fn block_scale(columns: usize, value: impl Fn(usize, usize) -> f64, n: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..columns {
        let mean = (0..n).map(|i| value(i, c)).sum::<f64>() / n as f64;
        total += (0..n).map(|i| (value(i, c) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    if total > 0.0 {
        1.0 / total.sqrt()
    } else {
        0.0
    }
}

impl GroundTruthSpace {
    pub fn new(index: &SearchIndex, weights: BlockWeights) -> Result<Self> {
        if !(weights.features >= 0.0 && weights.attributes >= 0.0)
            || weights.features + weights.attributes <= 0.0
        {
            return Err(Error::invalid(
                "ground truth weights",
                "must be non-negative and not both zero",
            ));
        }
        let n = index.n();
        let d = index.features.cols();
        let m = index.m();
        let fs = weights.features.sqrt() * block_scale(d, |i, c| index.features.row(i)[c], n);
        let as_ = weights.attributes.sqrt() * block_scale(m, |i, c| index.space.value(i, c), n);
        let dim = d + m;
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            data.extend(index.features.row(i).iter().map(|v| v * fs));
            data.extend(index.space.row(i).iter().map(|v| v * as_));
        }
        Ok(Self { dim, data })
    }

    pub fn n(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: ImageId, j: ImageId) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn ground_truth_for(&self, target: ImageId) -> Result<GroundTruth> {
        let n = self.n();
        if target >= n {
            return Err(Error::UnknownImage(target));
        }
        let distances: Vec<f64> = (0..n).map(|i| self.distance(target, i)).collect();
        let negated: Vec<f64> = distances.iter().map(|d| -d).collect();
        let ranking = rank_by(&negated);
        let mut graded_relevance = vec![0.0; n];
        for (pos, &id) in ranking.iter().enumerate() {
            graded_relevance[id] = (n - (pos + 1)) as f64 / n as f64;
        }
        Ok(GroundTruth {
            target,
            distances,
            ranking,
            graded_relevance,
        })
    }
}
