#![allow(dead_code)]

use rand::Rng;
use whittle_core::ranker::train_models;
use whittle_core::relevance::AttributeSpace;
use whittle_core::{synthesize_dataset, Calibration, SearchIndex, SynthConfig, TrainConfig};

pub fn shoes_index(n: usize, seed: u64) -> SearchIndex {
    let synth = SynthConfig {
        pairs_per_attribute: 300,
        ..SynthConfig::shoes(n, 10, 6, seed)
    };
    let manifest = synthesize_dataset(&synth).unwrap();
    let models = train_models(&manifest, &TrainConfig::default()).unwrap();
    SearchIndex::build(&manifest, &models).unwrap()
}

pub fn random_calibration(rng: &mut impl Rng) -> Calibration {
    Calibration {
        alpha: rng.random_range(-6.0..-0.5),
        beta: 0.0,
        gamma: rng.random_range(0.5..6.0),
        delta: rng.random_range(-1.5..1.5),
    }
}

pub fn random_space(rng: &mut impl Rng, n: usize, m: usize) -> AttributeSpace {
    let values = (0..n * m).map(|_| rng.random_range(-3.0..3.0)).collect();
    let cals = (0..m).map(|_| random_calibration(rng)).collect();
    let thresholds = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
    AttributeSpace::new(n, m, values, cals, thresholds).unwrap()
}
