//! Everything a search session needs about one dataset, built once and then
//! shared read-only.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::active::kendall_tau;
use crate::dataset::{DatasetManifest, FeatureMatrix};
use crate::error::Result;
use crate::pivots::AttributeTree;
use crate::ranker::ModelSet;
use crate::relevance::AttributeSpace;
use crate::simuser::{equal_threshold_fallback, equal_threshold_from_training};

/// Held-out images used for attribute similarity and the distance scale.
pub const VALIDATION_SIZE: usize = 200;

#[derive(Debug, Clone)]
pub struct SearchIndex {
    pub name: String,
    pub attribute_names: Vec<String>,
    pub features: FeatureMatrix,
    pub space: AttributeSpace,
    pub trees: Vec<AttributeTree>,
    /// Kendall tau between attribute rankings on the validation images.
    pub tau: Vec<Vec<f64>>,
    /// Default question-distance scale: 1 / median pairwise feature distance.
    pub distance_scale: f64,
    pub class_ids: Vec<Option<usize>>,
    pub asset_paths: Vec<Option<String>>,
}

impl SearchIndex {
    pub fn build(manifest: &DatasetManifest, models: &ModelSet) -> Result<Self> {
        Self::assemble(manifest, models, None)
    }

    /// Uses previously built trees instead of rebuilding them.
    pub fn with_trees(
        manifest: &DatasetManifest,
        models: &ModelSet,
        trees: Vec<AttributeTree>,
    ) -> Result<Self> {
        Self::assemble(manifest, models, Some(trees))
    }

    fn assemble(
        manifest: &DatasetManifest,
        models: &ModelSet,
        trees: Option<Vec<AttributeTree>>,
    ) -> Result<Self> {
        manifest.validate()?;
        models.validate()?;
        if models.d != manifest.d || models.m() != manifest.m {
            return Err(crate::Error::invalid(
                "model",
                format!(
                    "model has d = {}, M = {} but dataset has d = {}, M = {}",
                    models.d,
                    models.m(),
                    manifest.d,
                    manifest.m
                ),
            ));
        }
        let features = manifest.feature_matrix();
        let values: Vec<Vec<f64>> = models
            .models
            .iter()
            .map(|md| {
                features
                    .iter_rows()
                    .map(|x| crate::ranker::dot(&md.weights, x))
                    .collect()
            })
            .collect();
        let thresholds: Vec<f64> = (0..manifest.m)
            .map(|m| {
                let (_, equal) = manifest.pairs_for(m);
                let diffs: Vec<f64> = equal
                    .iter()
                    .map(|&(i, j)| (values[m][i] - values[m][j]).abs())
                    .collect();
                equal_threshold_from_training(&diffs)
                    .unwrap_or_else(|| equal_threshold_fallback(&values[m]))
            })
            .collect();
        let space = AttributeSpace::from_models(models, &features, thresholds)?;
        let trees = match trees {
            Some(t) => {
                if t.len() != manifest.m {
                    return Err(crate::Error::DimensionMismatch {
                        field: "index trees".into(),
                        expected: manifest.m,
                        found: t.len(),
                    });
                }
                t
            }
            None => build_trees(&values)?,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(0x7a11_d8e5);
        let k = VALIDATION_SIZE.min(manifest.n);
        let validation: Vec<usize> = sample(&mut rng, manifest.n, k).into_vec();
        let tau = tau_table(&values, &validation);
        let distance_scale = {
            let mut dists = Vec::new();
            for (a, &i) in validation.iter().enumerate() {
                for &j in &validation[a + 1..] {
                    dists.push(features.squared_distance(i, j).sqrt());
                }
            }
            dists.sort_by(f64::total_cmp);
            match dists.get(dists.len() / 2) {
                Some(&med) if med > 0.0 => 1.0 / med,
                _ => 1.0,
            }
        };

        Ok(Self {
            name: manifest.name.clone(),
            attribute_names: manifest.attribute_names.clone(),
            features,
            space,
            trees,
            tau,
            distance_scale,
            class_ids: manifest.images.iter().map(|im| im.class_id).collect(),
            asset_paths: manifest
                .images
                .iter()
                .map(|im| im.asset_path.clone())
                .collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn m(&self) -> usize {
        self.space.m()
    }
}

pub fn build_trees(columns: &[Vec<f64>]) -> Result<Vec<AttributeTree>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        columns
            .par_iter()
            .map(|c| AttributeTree::build(c))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        columns.iter().map(|c| AttributeTree::build(c)).collect()
    }
}

/// Attribute-by-attribute Kendall tau over `ids`; pairs with a constant
/// ranking get 0 off the diagonal.
pub fn tau_table(columns: &[Vec<f64>], ids: &[usize]) -> Vec<Vec<f64>> {
    let m = columns.len();
    let sub: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| ids.iter().map(|&i| c[i]).collect())
        .collect();
    let mut table = vec![vec![0.0; m]; m];
    for a in 0..m {
        table[a][a] = 1.0;
        for b in a + 1..m {
            let t = kendall_tau(&sub[a], &sub[b]).unwrap_or(0.0);
            table[a][b] = t;
            table[b][a] = t;
        }
    }
    table
}
