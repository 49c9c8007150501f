//! Linear attribute rankers and their response calibration.
//!
//! Each attribute `m` gets weights `w_m` trained so that `w_m . x_i > w_m . x_j`
//! for every ordered training pair, under the usual large-margin ranking
//! objective `1/2 |w|^2 + C * sum max(0, 1 - w . (x_i - x_j))`. Score
//! differences are then mapped to response probabilities by two Platt-style
//! sigmoids, one for the ordering and one for "equally".

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, FeatureMatrix};
use crate::error::{Error, Result};
use crate::ImageId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hinge penalty.
    pub c: f64,
    pub epochs: usize,
    /// Initial step for the backtracking search.
    pub step_size: f64,
    /// Relative objective change below which training stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 500,
            step_size: 1.0,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::invalid("c", "penalty must be positive"));
        }
        if self.epochs == 0 || !(self.step_size > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::invalid(
                "train config",
                "epochs, step_size must be positive",
            ));
        }
        Ok(())
    }
}

/// `better` should outrank `worse`; `weight` scales this pair's hinge term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderedPair {
    pub better: ImageId,
    pub worse: ImageId,
    pub weight: f64,
}

impl OrderedPair {
    pub fn new(better: ImageId, worse: ImageId) -> Self {
        Self {
            better,
            worse,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Margin {
    Pair { better: usize, worse: usize },
    Label { row: usize, positive: bool },
}

#[derive(Debug, Clone, Copy)]
struct HingeTerm {
    margin: Margin,
    weight: f64,
}

/// Result of a hinge-loss solve. `params` holds `d` weights followed by a bias.
#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub params: Vec<f64>,
    /// Objective after each accepted step, starting with the initial value.
    pub objective: Vec<f64>,
    margins: Vec<f64>,
}

struct HingeProblem<'a> {
    terms: &'a [HingeTerm],
    features: &'a FeatureMatrix,
    c: f64,
    regularize_bias: bool,
}

impl HingeProblem<'_> {
    fn margins(&self, params: &[f64], scores: &mut [f64], out: &mut [f64]) {
        let d = self.features.cols();
        let (w, b) = params.split_at(d);
        for (s, x) in scores.iter_mut().zip(self.features.iter_rows()) {
            *s = dot(w, x);
        }
        for (m, t) in out.iter_mut().zip(self.terms) {
            *m = match t.margin {
                Margin::Pair { better, worse } => scores[better] - scores[worse],
                Margin::Label { row, positive } => {
                    let v = scores[row] + b[0];
                    if positive {
                        v
                    } else {
                        -v
                    }
                }
            };
        }
    }

    fn objective(&self, params: &[f64], margins: &[f64]) -> f64 {
        let d = self.features.cols();
        let reg_len = if self.regularize_bias { d + 1 } else { d };
        let reg = 0.5 * params[..reg_len].iter().map(|v| v * v).sum::<f64>();
        let loss: f64 = self
            .terms
            .iter()
            .zip(margins)
            .map(|(t, &m)| t.weight * (1.0 - m).max(0.0))
            .sum();
        reg + self.c * loss
    }

    fn subgradient(&self, params: &[f64], margins: &[f64], row_coef: &mut [f64], grad: &mut [f64]) {
        let d = self.features.cols();
        row_coef.iter_mut().for_each(|v| *v = 0.0);
        let mut bias_coef = 0.0;
        for (t, &m) in self.terms.iter().zip(margins) {
            if m >= 1.0 {
                continue;
            }
            match t.margin {
                Margin::Pair { better, worse } => {
                    row_coef[better] -= t.weight;
                    row_coef[worse] += t.weight;
                }
                Margin::Label { row, positive } => {
                    let s = if positive { -t.weight } else { t.weight };
                    row_coef[row] += s;
                    bias_coef += s;
                }
            }
        }
        grad[..d].copy_from_slice(&params[..d]);
        grad[d] = if self.regularize_bias { params[d] } else { 0.0 };
        for (coef, x) in row_coef.iter().zip(self.features.iter_rows()) {
            if *coef != 0.0 {
                for (g, xv) in grad[..d].iter_mut().zip(x) {
                    *g += self.c * coef * xv;
                }
            }
        }
        grad[d] += self.c * bias_coef;
    }

    /// Full-batch subgradient descent. Each epoch first tries a backtracking
    /// search for a lower objective; when none exists along the subgradient
    /// (at a kink) it takes a normalized step of size `step_size / sqrt(k)`
    /// instead. The best iterate is kept, so the recorded trace never
    /// increases.
    fn solve(&self, cfg: &TrainConfig) -> SolverTrace {
        const PATIENCE: usize = 50;
        let n = self.features.rows();
        let d = self.features.cols();
        let mut params = vec![0.0; d + 1];
        let mut scores = vec![0.0; n];
        let mut margins = vec![0.0; self.terms.len()];
        let mut row_coef = vec![0.0; n];
        let mut grad = vec![0.0; d + 1];
        let mut candidate = vec![0.0; d + 1];
        let mut cand_margins = vec![0.0; self.terms.len()];

        self.margins(&params, &mut scores, &mut margins);
        let mut f = self.objective(&params, &margins);
        let mut best = (f, params.clone(), margins.clone());
        let mut trace = vec![f];
        let mut step = cfg.step_size;
        // Objective value PATIENCE improvements-or-epochs ago, for the stop test.
        let mut since_check = 0;
        let mut checkpoint = f;

        for k in 1..=cfg.epochs {
            self.subgradient(&params, &margins, &mut row_coef, &mut grad);
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2 <= 1e-24 {
                break;
            }
            let mut accepted = false;
            for _ in 0..30 {
                for ((c, p), g) in candidate.iter_mut().zip(&params).zip(&grad) {
                    *c = p - step * g;
                }
                self.margins(&candidate, &mut scores, &mut cand_margins);
                let fc = self.objective(&candidate, &cand_margins);
                if fc < f {
                    f = fc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                step *= 1.5;
            } else {
                let s = cfg.step_size / (k as f64).sqrt() / gnorm2.sqrt();
                for ((c, p), g) in candidate.iter_mut().zip(&params).zip(&grad) {
                    *c = p - s * g;
                }
                self.margins(&candidate, &mut scores, &mut cand_margins);
                f = self.objective(&candidate, &cand_margins);
                step = cfg.step_size;
            }
            std::mem::swap(&mut params, &mut candidate);
            std::mem::swap(&mut margins, &mut cand_margins);
            if f < best.0 {
                best.0 = f;
                best.1.copy_from_slice(&params);
                best.2.copy_from_slice(&margins);
                trace.push(f);
            }
            since_check += 1;
            if since_check == PATIENCE {
                let rel = (checkpoint - best.0) / best.0.abs().max(1e-12);
                if rel < cfg.tolerance {
                    break;
                }
                checkpoint = best.0;
                since_check = 0;
            }
        }
        SolverTrace {
            params: best.1,
            objective: trace,
            margins: best.2,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trained ranking weights with their training diagnostics.
#[derive(Debug, Clone)]
pub struct RankerFit {
    pub weights: Vec<f64>,
    /// Fraction of training pairs the weights order wrongly; exact ties count
    /// as half a violation.
    pub violation_rate: f64,
    pub objective: Vec<f64>,
}

fn check_rows(features: &FeatureMatrix, ids: impl IntoIterator<Item = usize>) -> Result<()> {
    for id in ids {
        if id >= features.rows() {
            return Err(Error::UnknownImage(id));
        }
    }
    Ok(())
}

pub fn train_attribute_ranker(
    pairs: &[OrderedPair],
    features: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<RankerFit> {
    config.check()?;
    if pairs.is_empty() {
        return Err(Error::Empty("ordered pairs"));
    }
    check_rows(features, pairs.iter().flat_map(|p| [p.better, p.worse]))?;
    if let Some(p) = pairs
        .iter()
        .find(|p| !(p.weight > 0.0) || !p.weight.is_finite())
    {
        return Err(Error::invalid(
            "pair weight",
            format!("{} must be positive", p.weight),
        ));
    }
    let terms: Vec<HingeTerm> = pairs
        .iter()
        .map(|p| HingeTerm {
            margin: Margin::Pair {
                better: p.better,
                worse: p.worse,
            },
            weight: p.weight,
        })
        .collect();
    let problem = HingeProblem {
        terms: &terms,
        features,
        c: config.c,
        regularize_bias: false,
    };
    let trace = problem.solve(config);
    let violation_rate = violation_rate(&trace.margins);
    let mut weights = trace.params;
    weights.pop();
    Ok(RankerFit {
        weights,
        violation_rate,
        objective: trace.objective,
    })
}

fn violation_rate(margins: &[f64]) -> f64 {
    let bad: f64 = margins
        .iter()
        .map(|&m| {
            if m < 0.0 {
                1.0
            } else if m == 0.0 {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    bad / margins.len() as f64
}

/// Linear two-class SVM scorer used by the binary relevance-feedback baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Trains a linear SVM on `(row, is_positive)` labels with the same solver as
/// the rankers. The bias is left unregularized.
pub fn train_linear_svm(
    labels: &[(ImageId, bool)],
    features: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<LinearSvm> {
    config.check()?;
    if labels.is_empty() {
        return Err(Error::Empty("classifier labels"));
    }
    check_rows(features, labels.iter().map(|l| l.0))?;
    let terms: Vec<HingeTerm> = labels
        .iter()
        .map(|&(row, positive)| HingeTerm {
            margin: Margin::Label { row, positive },
            weight: 1.0,
        })
        .collect();
    let problem = HingeProblem {
        terms: &terms,
        features,
        c: config.c,
        regularize_bias: false,
    };
    let mut params = problem.solve(config).params;
    let bias = params.pop().unwrap_or(0.0);
    Ok(LinearSvm {
        weights: params,
        bias,
    })
}

pub fn predict_attribute(weights: &[f64], features_row: &[f64]) -> Result<f64> {
    if weights.len() != features_row.len() {
        return Err(Error::DimensionMismatch {
            field: "features row".into(),
            expected: weights.len(),
            found: features_row.len(),
        });
    }
    Ok(dot(weights, features_row))
}

/// `1 / (1 + exp(z))`, computed without overflow.
#[inline]
pub(crate) fn logistic_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

const SIGMOID_MAX_ITER: usize = 100;

/// Fits `P(positive | x) = 1 / (1 + exp(a x + b))` by damped Newton on the
/// logistic negative log-likelihood, with one pseudo-count of label smoothing
/// per class so separable data still yields finite parameters.
pub fn fit_sigmoid(samples: &[(f64, bool)]) -> Result<(f64, f64)> {
    let n_pos = samples.iter().filter(|s| s.1).count() as f64;
    let n_neg = samples.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::DegenerateLabels(
            "need both positive and negative samples",
        ));
    }
    if samples.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite("sigmoid input".into()));
    }
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = samples.iter().map(|s| if s.1 { hi } else { lo }).collect();

    let nll = |a: f64, b: f64| -> f64 {
        samples
            .iter()
            .zip(&targets)
            .map(|(&(x, _), &t)| {
                let z = a * x + b;
                if z >= 0.0 {
                    t * z + (-z).exp().ln_1p()
                } else {
                    (t - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut f = nll(a, b);
    let n = samples.len() as f64;
    let tol = 1e-10 * n.max(1.0);
    let mut residual = f64::INFINITY;

    for _ in 0..SIGMOID_MAX_ITER {
        let (mut g1, mut g2) = (0.0, 0.0);
        let (mut h11, mut h22, mut h21) = (1e-12, 1e-12, 0.0);
        for (&(x, _), &t) in samples.iter().zip(&targets) {
            let p = logistic_neg(a * x + b);
            let q = p * (1.0 - p);
            h11 += x * x * q;
            h22 += q;
            h21 += x * q;
            g1 += x * (t - p);
            g2 += t - p;
        }
        residual = g1.abs().max(g2.abs());
        if residual < tol {
            return Ok((a, b));
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < f + 1e-4 * step * gd {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // Line search stalls only at round-off distance from the optimum.
            if residual < 1e-6 * n.max(1.0) {
                return Ok((a, b));
            }
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: SIGMOID_MAX_ITER,
        residual,
    })
}

/// Fits `(alpha, beta)` of `P(more | delta) = 1 / (1 + exp(alpha delta + beta))`
/// from score differences labeled MORE (`true`) or LESS (`false`).
pub fn fit_order_sigmoid(score_diffs: &[(f64, bool)]) -> Result<(f64, f64)> {
    fit_sigmoid(score_diffs)
}

/// Fits `(gamma, delta)` of `P(equal | |d|) = 1 / (1 + exp(gamma |d| + delta))`
/// from absolute differences labeled EQUAL (`true`) or ordered (`false`).
pub fn fit_equal_sigmoid(abs_diffs: &[(f64, bool)]) -> Result<(f64, f64)> {
    let abs: Vec<(f64, bool)> = abs_diffs.iter().map(|&(x, l)| (x.abs(), l)).collect();
    fit_sigmoid(&abs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Normalized probabilities of the three possible answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseProbs {
    pub more: f64,
    pub less: f64,
    pub equal: f64,
}

impl ResponseProbs {
    pub fn get(&self, r: crate::Response) -> f64 {
        match r {
            crate::Response::More => self.more,
            crate::Response::Less => self.less,
            crate::Response::Equal => self.equal,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.more, self.less, self.equal]
    }
}

impl Calibration {
    /// Response probabilities for an image scoring `a_i` against a reference
    /// scoring `a_ref`.
    pub fn response_probabilities(&self, a_i: f64, a_ref: f64) -> ResponseProbs {
        let diff = a_i - a_ref;
        let z = self.alpha * diff + self.beta;
        let more = logistic_neg(z);
        let less = logistic_neg(-z);
        let equal = logistic_neg(self.gamma * diff.abs() + self.delta);
        let total = more + less + equal;
        ResponseProbs {
            more: more / total,
            less: less / total,
            equal: equal / total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeModel {
    pub attribute: usize,
    pub weights: Vec<f64>,
    #[serde(flatten)]
    pub calibration: Option<Calibration>,
    pub train_violation_rate: f64,
}

impl AttributeModel {
    pub fn predict(&self, features_row: &[f64]) -> Result<f64> {
        predict_attribute(&self.weights, features_row)
    }

    pub fn calibration(&self) -> Result<&Calibration> {
        self.calibration
            .as_ref()
            .ok_or(Error::Uncalibrated(self.attribute))
    }

    pub fn response_probabilities(&self, a_i: f64, a_ref: f64) -> Result<ResponseProbs> {
        Ok(self.calibration()?.response_probabilities(a_i, a_ref))
    }
}

/// The model file: every attribute's ranker and calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub attribute_names: Vec<String>,
    pub d: usize,
    pub models: Vec<AttributeModel>,
}

impl ModelSet {
    pub fn m(&self) -> usize {
        self.models.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: ModelSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model set serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.attribute_names.len() != self.models.len() {
            return Err(Error::DimensionMismatch {
                field: "models".into(),
                expected: self.attribute_names.len(),
                found: self.models.len(),
            });
        }
        for (pos, m) in self.models.iter().enumerate() {
            if m.attribute != pos {
                return Err(Error::invalid(
                    format!("models[{pos}].attribute"),
                    "out of order",
                ));
            }
            if m.weights.len() != self.d {
                return Err(Error::DimensionMismatch {
                    field: format!("models[{pos}].weights"),
                    expected: self.d,
                    found: m.weights.len(),
                });
            }
        }
        Ok(())
    }
}

/// Symmetrized calibration samples: each ordered pair contributes its score
/// difference as a MORE example and the negated difference as LESS.
fn order_samples(values: &[f64], ordered: &[(ImageId, ImageId)]) -> Vec<(f64, bool)> {
    ordered
        .iter()
        .flat_map(|&(i, j)| {
            let diff = values[i] - values[j];
            [(diff, true), (-diff, false)]
        })
        .collect()
}

fn equal_samples(
    values: &[f64],
    ordered: &[(ImageId, ImageId)],
    equal: &[(ImageId, ImageId)],
) -> Vec<(f64, bool)> {
    equal
        .iter()
        .map(|&(i, j)| ((values[i] - values[j]).abs(), true))
        .chain(
            ordered
                .iter()
                .map(|&(i, j)| ((values[i] - values[j]).abs(), false)),
        )
        .collect()
}

/// Trains and calibrates the ranker for one attribute of `manifest`.
pub fn train_attribute_model(
    manifest: &DatasetManifest,
    features: &FeatureMatrix,
    attribute: usize,
    config: &TrainConfig,
) -> Result<AttributeModel> {
    let (ordered, equal) = manifest.pairs_for(attribute);
    let pairs: Vec<OrderedPair> = ordered
        .iter()
        .map(|&(i, j)| OrderedPair::new(i, j))
        .collect();
    let fit = train_attribute_ranker(&pairs, features, config)?;
    let values: Vec<f64> = features.iter_rows().map(|x| dot(&fit.weights, x)).collect();
    let (alpha, beta) = fit_order_sigmoid(&order_samples(&values, &ordered))?;
    if equal.is_empty() {
        return Err(Error::DegenerateLabels(
            "attribute has no equal pairs to calibrate against",
        ));
    }
    let (gamma, delta) = fit_equal_sigmoid(&equal_samples(&values, &ordered, &equal))?;
    Ok(AttributeModel {
        attribute,
        weights: fit.weights,
        calibration: Some(Calibration {
            alpha,
            beta,
            gamma,
            delta,
        }),
        train_violation_rate: fit.violation_rate,
    })
}

/// Trains every attribute; attributes are independent and run in parallel
/// when the `parallel` feature is on.
pub fn train_models(manifest: &DatasetManifest, config: &TrainConfig) -> Result<ModelSet> {
    let features = manifest.feature_matrix();
    let train = |m: usize| train_attribute_model(manifest, &features, m, config);
    #[cfg(feature = "parallel")]
    let models: Result<Vec<_>> = {
        use rayon::prelude::*;
        (0..manifest.m).into_par_iter().map(train).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let models: Result<Vec<_>> = (0..manifest.m).map(train).collect();
    Ok(ModelSet {
        attribute_names: manifest.attribute_names.clone(),
        d: manifest.d,
        models: models?,
    })
}
