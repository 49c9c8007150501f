#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use whittle_core::eval::{build_index, DatasetSource};
use whittle_core::{SearchIndex, SynthConfig, TrainConfig};
use whittle_service::{Engine, EngineConfig};

pub const DATASET: &str = "shoes";

/// A 300-image synthetic shoe index, built once per test binary.
pub fn index() -> SearchIndex {
    static INDEX: OnceLock<SearchIndex> = OnceLock::new();
    INDEX
        .get_or_init(|| {
            let synth = SynthConfig {
                name: DATASET.into(),
                pairs_per_attribute: 300,
                ..SynthConfig::shoes(300, 8, 6, 17)
            };
            build_index(&DatasetSource::Synthetic(synth), &TrainConfig::default()).unwrap()
        })
        .clone()
}

pub fn engine() -> Arc<Engine> {
    Arc::new(Engine::new(EngineConfig::default()).with_dataset(index()))
}
