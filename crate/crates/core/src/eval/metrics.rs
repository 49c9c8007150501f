use crate::error::{Error, Result};
use crate::ImageId;

pub use crate::relevance::percentile_rank;

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(p, rel)| (rel.exp2() - 1.0) / ((p + 2) as f64).log2())
        .sum()
}

/// NDCG over the first `k` positions of `ranking`, with gain `2^rel - 1`.
pub fn ndcg_at_k(ranking: &[ImageId], graded_relevance: &[f64], k: usize) -> Result<f64> {
    let n = graded_relevance.len();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("must be in 1..={n}, got {k}")));
    }
    if ranking.len() < k {
        return Err(Error::invalid("ranking", format!("shorter than k = {k}")));
    }
    if let Some(&bad) = ranking[..k].iter().find(|&&id| id >= n) {
        return Err(Error::UnknownImage(bad));
    }
    let mut ideal = graded_relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let ideal_dcg = dcg(ideal.into_iter().take(k));
    if ideal_dcg <= 0.0 {
        return Err(Error::invalid("graded relevance", "ideal DCG is zero"));
    }
    Ok(dcg(ranking[..k].iter().map(|&id| graded_relevance[id])) / ideal_dcg)
}
