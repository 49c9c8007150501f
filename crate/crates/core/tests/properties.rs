mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use whittle_core::active::{
    entropy, expected_entropy, hypothetical_entropies, LikelihoodKind, LikelihoodModel, Question,
};
use whittle_core::eval::ndcg_at_k;
use whittle_core::eval::stats::sign_test;
use whittle_core::pivots::{parse_trees, save_trees, AttributeTree, PivotSet};
use whittle_core::relevance::{percentile_rank, rank_by, AttributeSpace};
use whittle_core::{Calibration, FeedbackConstraint, RankMode, RelevanceState, Response};

fn calibration() -> impl Strategy<Value = Calibration> {
    (-6.0..-0.5f64, 0.5..6.0f64, -1.5..1.5f64).prop_map(|(alpha, gamma, delta)| Calibration {
        alpha,
        beta: 0.0,
        gamma,
        delta,
    })
}

fn response() -> impl Strategy<Value = Response> {
    prop_oneof![
        Just(Response::More),
        Just(Response::Less),
        Just(Response::Equal)
    ]
}

/// A random space of `n` images and `m` attributes plus `k` constraints on it.
fn space_and_history(
    n: usize,
    m: usize,
    k: usize,
) -> impl Strategy<Value = (AttributeSpace, Vec<FeedbackConstraint>)> {
    (
        prop::collection::vec(-3.0..3.0f64, n * m),
        prop::collection::vec(calibration(), m),
        prop::collection::vec(0.05..0.5f64, m),
        prop::collection::vec((0..n, 0..m, response(), 1..=3u8), k),
    )
        .prop_map(move |(values, cals, thr, cs)| {
            let space = AttributeSpace::new(n, m, values, cals, thr).unwrap();
            let history = cs
                .into_iter()
                .map(|(r, a, resp, conf)| FeedbackConstraint::new(r, a, resp).with_confidence(conf))
                .collect();
            (space, history)
        })
}

fn subtree_values(tree: &AttributeTree, node: Option<usize>, out: &mut Vec<f64>) {
    if let Some(i) = node {
        let n = tree.node(i);
        out.push(n.pivot_value);
        subtree_values(tree, n.left, out);
        subtree_values(tree, n.right, out);
    }
}

proptest! {
    #[test]
    fn response_probabilities_form_a_distribution(cal in calibration(), a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let p = cal.response_probabilities(a, b);
        prop_assert!((p.more + p.less + p.equal - 1.0).abs() < 1e-12);
        for v in p.to_array() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let q = cal.response_probabilities(b, a);
        prop_assert!((p.more - q.less).abs() < 1e-12);
        prop_assert!((p.equal - q.equal).abs() < 1e-12);
    }

    #[test]
    fn more_grows_and_less_odds_shrink_with_the_gap(cal in calibration(), d1 in 0.0..5.0f64, step in 0.0..2.0f64) {
        let lo = cal.response_probabilities(d1, 0.0);
        let hi = cal.response_probabilities(d1 + step, 0.0);
        prop_assert!(hi.more >= lo.more - 1e-12);
        prop_assert!(hi.less / hi.more <= lo.less / lo.more * (1.0 + 1e-12));
    }

    #[test]
    fn replay_is_order_invariant((space, history) in space_and_history(12, 3, 8), seed in any::<u64>()) {
        let a = RelevanceState::replay(&space, &history).unwrap();
        let mut shuffled = history.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let b = RelevanceState::replay(&space, &shuffled).unwrap();
        for (x, y) in a.log_relevance.iter().zip(&b.log_relevance) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(&a.satisfied_counts, &b.satisfied_counts);
    }

    #[test]
    fn log_relevance_stays_finite_and_nonpositive((space, history) in space_and_history(15, 2, 25)) {
        let state = RelevanceState::replay(&space, &history).unwrap();
        for &lr in &state.log_relevance {
            prop_assert!(lr.is_finite() && lr <= 0.0);
        }
        for &c in &state.satisfied_counts {
            prop_assert!(c as usize <= history.len());
        }
    }

    #[test]
    fn counting_rank_orders_by_satisfied_statements((space, history) in space_and_history(20, 3, 6)) {
        let state = RelevanceState::replay(&space, &history).unwrap();
        let ranking = state.rank(RankMode::Counting);
        for w in ranking.windows(2) {
            let (a, b) = (state.satisfied_counts[w[0]], state.satisfied_counts[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }

    #[test]
    fn rank_by_is_a_sorted_permutation(scores in prop::collection::vec(prop_oneof![-3.0..3.0f64, Just(0.0)], 1..60)) {
        let ranking = rank_by(&scores);
        let mut seen = ranking.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        for w in ranking.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
        for (pos, &id) in ranking.iter().enumerate() {
            let p = percentile_rank(&ranking, id).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            if scores.len() > 1 {
                prop_assert!((p - (1.0 - pos as f64 / (scores.len() - 1) as f64)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trees_are_balanced_search_trees(values in prop::collection::vec(prop_oneof![-3.0..3.0f64, Just(1.0)], 1..120)) {
        let tree = AttributeTree::build(&values).unwrap();
        prop_assert_eq!(tree.len(), values.len());
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(tree.in_order_values(), sorted);
        let mut pivots: Vec<usize> = tree.nodes().iter().map(|n| n.pivot_image).collect();
        pivots.sort_unstable();
        prop_assert_eq!(pivots, (0..values.len()).collect::<Vec<_>>());
        let bound = (usize::BITS - values.len().leading_zeros()) as usize;
        prop_assert!(tree.depth() <= bound);
        for node in tree.nodes() {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            subtree_values(&tree, node.left, &mut left);
            subtree_values(&tree, node.right, &mut right);
            prop_assert!(left.iter().all(|&v| v <= node.pivot_value));
            prop_assert!(right.iter().all(|&v| v >= node.pivot_value));
            prop_assert_eq!(node.subset_size, 1 + left.len() + right.len());
            prop_assert!(left.len() <= right.len() && right.len() <= left.len() + 1);
        }
    }

    #[test]
    fn truthful_walks_end_within_depth(values in prop::collection::vec(-3.0..3.0f64, 1..100), target in -3.5..3.5f64) {
        let trees = vec![AttributeTree::build(&values).unwrap()];
        let mut pivots = PivotSet::at_roots(&trees);
        let mut steps = 0;
        while let Some(p) = pivots.pivot(&trees, 0) {
            let r = if target > values[p] {
                Response::More
            } else if target < values[p] {
                Response::Less
            } else {
                Response::Equal
            };
            pivots.descend(&trees, 0, r).unwrap();
            steps += 1;
        }
        prop_assert!(pivots.is_exhausted());
        prop_assert!(steps <= trees[0].depth());
        prop_assert!(pivots.descend(&trees, 0, Response::More).is_err());
    }

    #[test]
    fn tree_files_round_trip(values in prop::collection::vec(-3.0..3.0f64, 1..40)) {
        let trees = vec![AttributeTree::build(&values).unwrap()];
        let names = vec!["shiny".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        save_trees(&trees, &names, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        prop_assert_eq!(parse_trees(&text, &names).unwrap(), trees);
    }

    #[test]
    fn expected_entropy_is_a_mixture_of_outcomes((space, history) in space_and_history(10, 2, 4), pivot in 0..10usize, attribute in 0..2usize, kind in 0..3usize) {
        let index = toy_index(space);
        let state = RelevanceState::replay(&index.space, &history).unwrap();
        let kind = [LikelihoodKind::MostRelevant, LikelihoodKind::AllRelevant, LikelihoodKind::SimilarQuestion][kind];
        let model = LikelihoodModel::for_index(kind, &index);
        let q = Question { attribute, pivot_image: pivot };
        let cand = expected_entropy(&index, &model, &state, q).unwrap();
        let h = hypothetical_entropies(&index.space, &state, q);
        let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(cand.expected_entropy >= lo - 1e-9 && cand.expected_entropy <= hi + 1e-9);
        prop_assert!((cand.response_likelihoods.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (k, r) in Response::ALL.into_iter().enumerate() {
            let mut s = state.clone();
            s.update(&index.space, FeedbackConstraint::new(pivot, attribute, r)).unwrap();
            prop_assert!((entropy(&s) - h[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn ndcg_lies_in_the_unit_interval(rel in prop::collection::vec(0.0..1.0f64, 2..40), seed in any::<u64>()) {
        let mut ranking: Vec<usize> = (0..rel.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(ranking.as_mut_slice(), &mut rng);
        let k = 1 + (seed as usize % rel.len());
        let v = ndcg_at_k(&ranking, &rel, k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let ideal = rank_by(&rel);
        prop_assert!((ndcg_at_k(&ideal, &rel, k).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_test_p_value_is_a_probability(diffs in prop::collection::vec(-1.0..1.0f64, 0..80)) {
        let t = sign_test(&diffs);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&t.p_value));
        prop_assert_eq!(t.positive + t.negative + t.ties, diffs.len());
        let flipped: Vec<f64> = diffs.iter().map(|d| -d).collect();
        let f = sign_test(&flipped);
        prop_assert_eq!(f.positive, t.negative);
        if t.positive > t.negative {
            prop_assert!(t.p_value <= f.p_value);
        }
    }
}

fn toy_index(space: AttributeSpace) -> whittle_core::SearchIndex {
    let n = space.n();
    let m = space.m();
    let trees = (0..m)
        .map(|a| AttributeTree::build(&space.column(a)).unwrap())
        .collect();
    whittle_core::SearchIndex {
        name: "toy".into(),
        attribute_names: (0..m).map(|a| format!("a{a}")).collect(),
        features: whittle_core::FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64 * 0.1).collect())
            .unwrap(),
        space,
        trees,
        tau: (0..m)
            .map(|a| (0..m).map(|b| if a == b { 1.0 } else { 0.2 }).collect())
            .collect(),
        distance_scale: 1.0,
        class_ids: vec![None; n],
        asset_paths: vec![None; n],
    }
}
