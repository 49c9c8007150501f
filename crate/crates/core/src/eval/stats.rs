use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let count = values.len();
    if count == 0 {
        return Summary {
            count,
            mean: f64::NAN,
            median: f64::NAN,
            sd: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
    };
    Summary {
        count,
        mean,
        median,
        sd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// One-sided: probability of at least `positive` successes out of
    /// `positive + negative` fair coin flips.
    pub p_value: f64,
}

/// Exact sign test on paired differences; ties are dropped.
pub fn sign_test(differences: &[f64]) -> SignTest {
    let positive = differences.iter().filter(|&&d| d > 0.0).count();
    let negative = differences.iter().filter(|&&d| d < 0.0).count();
    let ties = differences.len() - positive - negative;
    SignTest {
        positive,
        negative,
        ties,
        p_value: binomial_upper_tail(positive + negative, positive),
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for j in 0..=n {
        if j > 0 {
            ln_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        if j >= k {
            tail += (ln_choose + ln_half_n).exp();
        }
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_small_cases() {
        assert!((binomial_upper_tail(3, 3) - 0.125).abs() < 1e-15);
        assert!((binomial_upper_tail(4, 3) - 5.0 / 16.0).abs() < 1e-15);
        assert_eq!(binomial_upper_tail(5, 0), 1.0);
    }

    #[test]
    fn sign_test_drops_ties() {
        let t = sign_test(&[1.0, 2.0, 0.0, -1.0, 3.0]);
        assert_eq!((t.positive, t.negative, t.ties), (3, 1, 1));
        assert!((t.p_value - 5.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn summary_even_median() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
    }
}
