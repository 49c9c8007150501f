//! WebAssembly bindings for the in-browser demo page.
//!
//! Everything crosses the boundary as JSON strings; the page parses them with
//! `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use whittle_core::active::{entropy, select_question, LikelihoodModel};
use whittle_core::eval::{build_index, run_experiment_on, DatasetSource, EpisodeConfig, ExperimentConfig, Policy};
use whittle_core::pivots::PivotSet;
use whittle_core::{FeedbackConstraint, RankMode, RelevanceState, Response, SearchIndex, SynthConfig, TrainConfig};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("demo payloads serialize")
}

#[derive(Serialize)]
struct Info<'a> {
    n: usize,
    attributes: &'a [String],
    classes: Vec<Option<usize>>,
}

#[derive(Serialize)]
struct CurvePoint {
    delta: f64,
    more: f64,
    less: f64,
    equal: f64,
}

#[derive(Serialize)]
struct QuestionView<'a> {
    attribute: usize,
    attribute_name: &'a str,
    pivot: usize,
    pivot_values: &'a [f64],
    expected_entropy: f64,
    entropy: f64,
}

#[derive(Serialize)]
struct Ranked<'a> {
    id: usize,
    probability: f64,
    class: Option<usize>,
    values: &'a [f64],
}

#[derive(Serialize)]
struct RaceCurve {
    policy: &'static str,
    mean_percentile: Vec<f64>,
}

#[wasm_bindgen]
pub struct Demo {
    index: SearchIndex,
    state: RelevanceState,
    pivots: PivotSet,
    model: LikelihoodModel,
}

#[wasm_bindgen]
impl Demo {
    /// Synthesizes a shoe-like dataset of `n` images and trains its rankers.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, seed: u32) -> Result<Demo, JsError> {
        let source = DatasetSource::Synthetic(SynthConfig::shoes(n, 8, 6, u64::from(seed)));
        let index = build_index(&source, &TrainConfig::default()).map_err(js_err)?;
        let model = LikelihoodModel::for_index(Default::default(), &index);
        Ok(Demo {
            state: RelevanceState::new(index.n()),
            pivots: PivotSet::at_roots(&index.trees),
            index,
            model,
        })
    }

    pub fn info(&self) -> String {
        json(&Info {
            n: self.index.n(),
            attributes: &self.index.attribute_names,
            classes: self.index.class_ids.clone(),
        })
    }

    /// Answer probabilities for gaps `delta` in `[-span, span]`.
    pub fn calibration_curve(&self, attribute: usize, span: f64, steps: usize) -> Result<String, JsError> {
        if attribute >= self.index.m() {
            return Err(JsError::new("no such attribute"));
        }
        let cal = self.index.space.calibration(attribute);
        let steps = steps.max(2);
        let points: Vec<CurvePoint> = (0..steps)
            .map(|k| {
                let delta = -span + 2.0 * span * k as f64 / (steps - 1) as f64;
                let p = cal.response_probabilities(delta, 0.0);
                CurvePoint {
                    delta,
                    more: p.more,
                    less: p.less,
                    equal: p.equal,
                }
            })
            .collect();
        Ok(json(&points))
    }

    /// Forgets all answers.
    pub fn reset(&mut self) {
        self.state = RelevanceState::new(self.index.n());
        self.pivots = PivotSet::at_roots(&self.index.trees);
    }

    /// The most informative pivot question, or `null` once every tree is used up.
    pub fn next_question(&self) -> Result<String, JsError> {
        if self.pivots.is_exhausted() {
            return Ok("null".into());
        }
        let sel = select_question(&self.pivots, &self.index, &self.model, &self.state).map_err(js_err)?;
        let q = sel.question;
        Ok(json(&QuestionView {
            attribute: q.attribute,
            attribute_name: &self.index.attribute_names[q.attribute],
            pivot: q.pivot_image,
            pivot_values: self.index.space.row(q.pivot_image),
            expected_entropy: q.expected_entropy,
            entropy: entropy(&self.state),
        }))
    }

    /// Records "the target is `response` (more, less, equal) than `pivot`".
    pub fn answer(&mut self, attribute: usize, pivot: usize, response: &str) -> Result<(), JsError> {
        let response: Response =
            serde_json::from_value(serde_json::Value::String(response.to_ascii_lowercase())).map_err(js_err)?;
        let c = FeedbackConstraint::new(pivot, attribute, response);
        self.state.update(&self.index.space, c).map_err(js_err)?;
        self.pivots.observe(&self.index.trees, &c).map_err(js_err)?;
        Ok(())
    }

    /// What a truthful user looking for `target` would answer.
    pub fn truthful_answer(&self, target: usize, attribute: usize, pivot: usize) -> Result<String, JsError> {
        let space = &self.index.space;
        if target >= space.n() || pivot >= space.n() || attribute >= space.m() {
            return Err(JsError::new("out of range"));
        }
        let gap = space.value(target, attribute) - space.value(pivot, attribute);
        let r = if gap.abs() <= space.equal_threshold(attribute) {
            Response::Equal
        } else if gap > 0.0 {
            Response::More
        } else {
            Response::Less
        };
        Ok(r.to_string())
    }

    /// The `k` most relevant images.
    pub fn top(&self, k: usize) -> String {
        let ranked: Vec<Ranked> = self
            .state
            .rank(RankMode::Probabilistic)
            .into_iter()
            .take(k)
            .map(|id| Ranked {
                id,
                probability: self.state.probability(id),
                class: self.index.class_ids[id],
                values: self.index.space.row(id),
            })
            .collect();
        json(&ranked)
    }

    /// Simulated searches for every policy in the comma-separated list; mean
    /// target percentile after each iteration.
    pub fn race(&self, policies: &str, queries: usize, iterations: usize, seed: u32) -> Result<String, JsError> {
        let policies: Vec<Policy> = policies
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(js_err)?;
        let config = ExperimentConfig {
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            policies: policies.clone(),
            queries,
            seed: u64::from(seed),
            train: TrainConfig::default(),
            episode: EpisodeConfig {
                iterations,
                k_page: 40.min(self.index.n()),
                k_ndcg: 50.min(self.index.n()),
                ..EpisodeConfig::default()
            },
        };
        let report = run_experiment_on(&self.index, &config).map_err(js_err)?;
        let curves: Vec<RaceCurve> = policies
            .iter()
            .map(|&p| RaceCurve {
                policy: p.name(),
                mean_percentile: (0..=iterations)
                    .map(|t| report.row(p, t).map_or(f64::NAN, |r| r.mean_percentile_rank))
                    .collect(),
            })
            .collect();
        Ok(json(&curves))
    }
}
