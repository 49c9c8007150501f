//! Hybrid scoring from binary relevance labels plus relative feedback.
//!
//! Relevant images should outrank irrelevant ones, and images satisfying `k`
//! relative statements should outrank those satisfying `k - 1`. Both kinds of
//! preference become ordered pairs for one per-session linear ranker.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::ranker::{dot, train_attribute_ranker, OrderedPair, TrainConfig};
use crate::ImageId;

/// Default cap on pairs drawn from any one Cartesian block.
pub const DEFAULT_PAIR_CAP: usize = 20_000;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryFeedback {
    pub relevant: BTreeSet<ImageId>,
    pub irrelevant: BTreeSet<ImageId>,
}

impl BinaryFeedback {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(id) = self.relevant.intersection(&self.irrelevant).next() {
            return Err(Error::invalid(
                "binary feedback",
                format!("image {id} marked both relevant and irrelevant"),
            ));
        }
        if let Some(&id) = self
            .relevant
            .iter()
            .chain(&self.irrelevant)
            .find(|&&id| id >= n)
        {
            return Err(Error::UnknownImage(id));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty() && self.irrelevant.is_empty()
    }
}

/// Images grouped by how many relative statements they satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatisfactionPartition {
    buckets: Vec<Vec<ImageId>>,
}

impl SatisfactionPartition {
    /// `counts[i]` is the number of statements image `i` satisfies out of
    /// `statements`.
    pub fn from_counts(counts: &[u32], statements: usize) -> Result<Self> {
        let mut buckets = vec![Vec::new(); statements + 1];
        for (i, &c) in counts.iter().enumerate() {
            let c = c as usize;
            if c > statements {
                return Err(Error::invalid(
                    "satisfaction counts",
                    format!("image {i} satisfies {c} of {statements} statements"),
                ));
            }
            buckets[c].push(i);
        }
        Ok(Self { buckets })
    }

    pub fn from_buckets(buckets: Vec<Vec<ImageId>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for id in buckets.iter().flatten() {
            if !seen.insert(*id) {
                return Err(Error::invalid(
                    "partition",
                    format!("image {id} in two buckets"),
                ));
            }
        }
        Ok(Self { buckets })
    }

    pub fn buckets(&self) -> &[Vec<ImageId>] {
        &self.buckets
    }

    /// Number of statements `F`.
    pub fn statements(&self) -> usize {
        self.buckets.len().saturating_sub(1)
    }
}

fn block(
    better: &[ImageId],
    worse: &[ImageId],
    cap: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<OrderedPair>,
) {
    let total = better.len() * worse.len();
    if total == 0 {
        return;
    }
    let push = |k: usize, out: &mut Vec<OrderedPair>| {
        out.push(OrderedPair::new(
            better[k / worse.len()],
            worse[k % worse.len()],
        ));
    };
    if total <= cap {
        (0..total).for_each(|k| push(k, out));
    } else {
        let mut picked = sample(rng, total, cap).into_vec();
        picked.sort_unstable();
        picked.into_iter().for_each(|k| push(k, out));
    }
}

/// Ordered pairs `R x R̄` plus `C_k x C_{k-1}` for every adjacent bucket pair.
/// Binary pairs get weight `(#attribute pairs) / (#binary pairs)` when both
/// kinds are present.
pub fn build_ordered_pairs(
    binary: &BinaryFeedback,
    partition: &SatisfactionPartition,
    cap: usize,
    seed: u64,
) -> Result<Vec<OrderedPair>> {
    if cap == 0 {
        return Err(Error::invalid("cap", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relevant: Vec<ImageId> = binary.relevant.iter().copied().collect();
    let irrelevant: Vec<ImageId> = binary.irrelevant.iter().copied().collect();
    let mut binary_pairs = Vec::new();
    block(&relevant, &irrelevant, cap, &mut rng, &mut binary_pairs);

    let mut attribute_pairs = Vec::new();
    let buckets = partition.buckets();
    for k in (1..buckets.len()).rev() {
        block(
            &buckets[k],
            &buckets[k - 1],
            cap,
            &mut rng,
            &mut attribute_pairs,
        );
    }
    if binary_pairs.is_empty() && attribute_pairs.is_empty() {
        return Err(Error::Empty("ordered pairs: no usable feedback"));
    }
    if !binary_pairs.is_empty() && !attribute_pairs.is_empty() {
        let w = attribute_pairs.len() as f64 / binary_pairs.len() as f64;
        binary_pairs.iter_mut().for_each(|p| p.weight = w);
    }
    binary_pairs.extend(attribute_pairs);
    binary_pairs.retain(|p| p.better != p.worse);
    Ok(binary_pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridScorer {
    pub weights: Vec<f64>,
}

impl HybridScorer {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }

    pub fn score_all(&self, features: &FeatureMatrix) -> Vec<f64> {
        features.iter_rows().map(|x| self.score(x)).collect()
    }
}

pub fn train_hybrid_scorer(
    pairs: &[OrderedPair],
    features: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<HybridScorer> {
    let fit = train_attribute_ranker(pairs, features, config)?;
    Ok(HybridScorer {
        weights: fit.weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn binary_only_single_block() {
        let b = BinaryFeedback {
            relevant: set(&[1]),
            irrelevant: set(&[2]),
        };
        let p = SatisfactionPartition::from_buckets(vec![vec![0, 1, 2]]).unwrap();
        let pairs = build_ordered_pairs(&b, &p, 100, 0).unwrap();
        assert_eq!(pairs, vec![OrderedPair::new(1, 2)]);
    }

    #[test]
    fn only_adjacent_buckets_pair() {
        let (a, b, c) = (0, 1, 2);
        let p = SatisfactionPartition::from_buckets(vec![vec![c], vec![b], vec![a]]).unwrap();
        let pairs = build_ordered_pairs(&BinaryFeedback::default(), &p, 100, 0).unwrap();
        assert!(pairs.contains(&OrderedPair::new(a, b)));
        assert!(pairs.contains(&OrderedPair::new(b, c)));
        assert!(!pairs.iter().any(|q| q.better == a && q.worse == c));
    }

    #[test]
    fn binary_weight_is_pair_ratio() {
        // 10 attribute pairs: C_1 = {0,1}, C_0 = {2..6}; 2 binary pairs.
        let p = SatisfactionPartition::from_buckets(vec![vec![2, 3, 4, 5, 6], vec![0, 1]]).unwrap();
        let b = BinaryFeedback {
            relevant: set(&[7]),
            irrelevant: set(&[8, 9]),
        };
        let pairs = build_ordered_pairs(&b, &p, 100, 0).unwrap();
        let binary: Vec<_> = pairs.iter().filter(|q| q.better == 7).collect();
        assert_eq!(binary.len(), 2);
        assert!(binary.iter().all(|q| q.weight == 5.0));
        assert_eq!(pairs.iter().filter(|q| q.weight == 1.0).count(), 10);
    }

    #[test]
    fn empty_feedback_errors() {
        let p = SatisfactionPartition::from_buckets(vec![vec![0, 1, 2]]).unwrap();
        assert!(build_ordered_pairs(&BinaryFeedback::default(), &p, 10, 0).is_err());
    }

    #[test]
    fn cap_subsamples_blocks() {
        let p = SatisfactionPartition::from_buckets(vec![(0..50).collect(), (50..100).collect()])
            .unwrap();
        let pairs = build_ordered_pairs(&BinaryFeedback::default(), &p, 100, 3).unwrap();
        assert_eq!(pairs.len(), 100);
        let again = build_ordered_pairs(&BinaryFeedback::default(), &p, 100, 3).unwrap();
        assert_eq!(pairs, again);
    }

    #[test]
    fn overlapping_binary_sets_rejected() {
        let b = BinaryFeedback {
            relevant: set(&[1, 2]),
            irrelevant: set(&[2]),
        };
        assert!(b.validate(5).is_err());
    }

    #[test]
    fn single_pair_scorer_orders_pair() {
        let x = FeatureMatrix::from_rows(&[vec![0.2, 1.0], vec![1.0, -0.3]]).unwrap();
        let s =
            train_hybrid_scorer(&[OrderedPair::new(1, 0)], &x, &TrainConfig::default()).unwrap();
        assert!(s.score(x.row(1)) > s.score(x.row(0)));
    }
}
