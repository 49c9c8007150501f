//! Dataset ingestion and synthetic dataset generation.
//!
//! A dataset is one JSON document holding precomputed feature vectors and the
//! pairwise attribute comparisons used to train the rankers. Ids are dense
//! (`0..N`) so every per-image array downstream is index-addressable.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::Response;
use crate::ImageId;

/// Shoe categories, in the column order of [`SHOES_CLASS_ORDERS`].
pub const SHOES_CLASSES: [&str; 10] = [
    "athletic",
    "boots",
    "clogs",
    "flats",
    "heels",
    "pumps",
    "rain boots",
    "sneakers",
    "stiletto",
    "wedding",
];

/// Shoe attributes, in the row order of [`SHOES_CLASS_ORDERS`].
pub const SHOES_ATTRIBUTES: [&str; 10] = [
    "pointy at the front",
    "open",
    "bright in color",
    "covered with ornaments",
    "shiny",
    "high at the heel",
    "long on the leg",
    "formal",
    "sporty",
    "feminine",
];

/// Class ordering per shoe attribute; 10 means the class shows the attribute
/// the most, 1 the least.
pub const SHOES_CLASS_ORDERS: [[u32; 10]; 10] = [
    [2, 6, 3, 5, 10, 9, 4, 1, 8, 7],
    [3, 2, 8, 5, 7, 6, 1, 4, 9, 10],
    [6, 1, 2, 8, 4, 3, 10, 7, 9, 5],
    [4, 9, 6, 5, 8, 7, 1, 3, 10, 2],
    [2, 9, 4, 3, 6, 5, 8, 1, 10, 7],
    [4, 6, 5, 1, 9, 8, 3, 2, 10, 7],
    [7, 9, 2, 3, 6, 5, 10, 8, 4, 1],
    [3, 6, 4, 7, 9, 8, 1, 2, 5, 10],
    [10, 5, 6, 7, 4, 3, 8, 9, 1, 2],
    [1, 6, 4, 5, 10, 9, 3, 2, 8, 7],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_path: Option<String>,
}

/// One pairwise judgement: attribute `attribute` is `relation` in `first`
/// relative to `second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonLabel {
    pub attribute: usize,
    pub first: ImageId,
    pub second: ImageId,
    pub relation: Response,
    pub confidence: u8,
}

/// Two image ids, in the order the comparison states them.
pub type Pair = (ImageId, ImageId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub attribute_names: Vec<String>,
    pub images: Vec<ImageRecord>,
    pub comparisons: Vec<ComparisonLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_orders: Option<Vec<Vec<u32>>>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "feature dimension must be positive"));
        }
        if self.images.len() != self.n {
            return Err(Error::DimensionMismatch {
                field: "images".into(),
                expected: self.n,
                found: self.images.len(),
            });
        }
        if self.attribute_names.len() != self.m {
            return Err(Error::DimensionMismatch {
                field: "attribute_names".into(),
                expected: self.m,
                found: self.attribute_names.len(),
            });
        }
        for (pos, img) in self.images.iter().enumerate() {
            if img.id != pos {
                return Err(Error::invalid(
                    format!("images[{pos}].id"),
                    format!("ids must be dense 0..N-1 in order, found {}", img.id),
                ));
            }
            if img.features.len() != self.d {
                return Err(Error::DimensionMismatch {
                    field: format!("images[{pos}].features"),
                    expected: self.d,
                    found: img.features.len(),
                });
            }
            if let Some(k) = img.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("images[{pos}].features[{k}]")));
            }
        }
        for (pos, c) in self.comparisons.iter().enumerate() {
            if c.attribute >= self.m {
                return Err(Error::DanglingId {
                    field: format!("comparisons[{pos}].attribute"),
                    id: c.attribute,
                });
            }
            for (name, id) in [("first", c.first), ("second", c.second)] {
                if id >= self.n {
                    return Err(Error::DanglingId {
                        field: format!("comparisons[{pos}].{name}"),
                        id,
                    });
                }
            }
            if c.first == c.second {
                return Err(Error::invalid(
                    format!("comparisons[{pos}]"),
                    "first and second must differ",
                ));
            }
            if !(1..=3).contains(&c.confidence) {
                return Err(Error::invalid(
                    format!("comparisons[{pos}].confidence"),
                    format!("must be 1, 2 or 3, found {}", c.confidence),
                ));
            }
        }
        if let Some(orders) = &self.class_orders {
            if orders.len() != self.m {
                return Err(Error::DimensionMismatch {
                    field: "class_orders".into(),
                    expected: self.m,
                    found: orders.len(),
                });
            }
            let classes = orders.first().map_or(0, Vec::len);
            for (row, ranks) in orders.iter().enumerate() {
                if ranks.len() != classes {
                    return Err(Error::DimensionMismatch {
                        field: format!("class_orders[{row}]"),
                        expected: classes,
                        found: ranks.len(),
                    });
                }
                if let Some(bad) = ranks.iter().find(|&&r| r < 1 || r as usize > classes) {
                    return Err(Error::invalid(
                        format!("class_orders[{row}]"),
                        format!("rank {bad} outside 1..={classes}"),
                    ));
                }
            }
            for (pos, img) in self.images.iter().enumerate() {
                if let Some(cls) = img.class_id {
                    if cls >= classes {
                        return Err(Error::DanglingId {
                            field: format!("images[{pos}].class_id"),
                            id: cls,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn feature_matrix(&self) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.n * self.d);
        for img in &self.images {
            data.extend_from_slice(&img.features);
        }
        FeatureMatrix {
            rows: self.n,
            cols: self.d,
            data,
        }
    }

    /// Comparisons for one attribute, split into ordered `(stronger, weaker)`
    /// pairs and unordered equal pairs.
    pub fn pairs_for(&self, attribute: usize) -> (Vec<Pair>, Vec<Pair>) {
        let mut ordered = Vec::new();
        let mut equal = Vec::new();
        for c in self.comparisons.iter().filter(|c| c.attribute == attribute) {
            match c.relation {
                Response::More => ordered.push((c.first, c.second)),
                Response::Less => ordered.push((c.second, c.first)),
                Response::Equal => equal.push((c.first, c.second)),
            }
        }
        (ordered, equal)
    }
}

/// Dense row-major `N x d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                field: "feature matrix".into(),
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "features[{}][{}]",
                k / cols.max(1),
                k % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    field: format!("row {i}"),
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(text)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub c: usize,
    pub pairs_per_attribute: usize,
    /// Probability (capped at 0.5) of flipping a MORE/LESS label.
    pub noise_sd: f64,
    /// Per-image latent jitter SD, in class-rank units.
    pub jitter: f64,
    /// `M x C` class ranks; random permutations are drawn when absent.
    pub class_orders: Option<Vec<Vec<u32>>>,
    pub attribute_names: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n: 2000,
            d: 10,
            m: 6,
            c: 10,
            pairs_per_attribute: 500,
            noise_sd: 0.0,
            jitter: 1.0,
            class_orders: None,
            attribute_names: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Shoe-like data: the first `m` attributes and all ten classes of the
    /// shoe class-order table.
    pub fn shoes(n: usize, d: usize, m: usize, seed: u64) -> Self {
        let m = m.min(SHOES_ATTRIBUTES.len());
        Self {
            name: "synthetic-shoes".into(),
            n,
            d,
            m,
            c: SHOES_CLASSES.len(),
            class_orders: Some(SHOES_CLASS_ORDERS[..m].iter().map(|r| r.to_vec()).collect()),
            attribute_names: Some(
                SHOES_ATTRIBUTES[..m]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            seed,
            ..Self::default()
        }
    }

    /// Half-width of the band inside which latent differences are labeled EQUAL.
    pub fn equality_band(&self) -> f64 {
        0.25 * self.jitter
    }

    fn check(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::invalid("c", "need at least 2 classes"));
        }
        if self.n < self.c {
            return Err(Error::invalid(
                "n",
                format!("N = {} must be >= C = {}", self.n, self.c),
            ));
        }
        if self.m < 1 {
            return Err(Error::invalid("m", "need at least one attribute"));
        }
        if self.d < self.m {
            return Err(Error::invalid(
                "d",
                format!("d = {} must be >= M = {}", self.d, self.m),
            ));
        }
        if !(self.noise_sd >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::invalid("noise_sd/jitter", "must be non-negative"));
        }
        if let Some(orders) = &self.class_orders {
            if orders.len() != self.m || orders.iter().any(|r| r.len() != self.c) {
                return Err(Error::invalid("class_orders", "must be an M x C table"));
            }
        }
        if let Some(names) = &self.attribute_names {
            if names.len() != self.m {
                return Err(Error::invalid("attribute_names", "must have M entries"));
            }
        }
        Ok(())
    }
}

/// Generator output with the latent attribute strengths kept alongside.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    /// `latent[i][m]`: true strength of attribute `m` in image `i`.
    pub latent: Vec<Vec<f64>>,
}

pub fn synthesize_dataset(config: &SynthConfig) -> Result<DatasetManifest> {
    synthesize_with_latents(config).map(|s| s.manifest)
}

pub fn synthesize_with_latents(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.check()?;
    let SynthConfig { n, d, m, c, .. } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let class_orders: Vec<Vec<u32>> = match &config.class_orders {
        Some(t) => t.clone(),
        None => (0..m)
            .map(|_| {
                let mut row: Vec<u32> = (1..=c as u32).collect();
                row.shuffle(&mut rng);
                row
            })
            .collect(),
    };

    let mut classes: Vec<usize> = (0..n).map(|i| i % c).collect();
    classes.shuffle(&mut rng);

    let latent: Vec<Vec<f64>> = classes
        .iter()
        .map(|&cls| {
            (0..m)
                .map(|a| {
                    let z: f64 = rng.sample(StandardNormal);
                    f64::from(class_orders[a][cls]) + config.jitter * z
                })
                .collect()
        })
        .collect();

    // Standardize each latent column into the first M feature dimensions.
    let mut stats = vec![(0.0, 1.0); m];
    for (a, s) in stats.iter_mut().enumerate() {
        let mean = latent.iter().map(|l| l[a]).sum::<f64>() / n as f64;
        let var = latent.iter().map(|l| (l[a] - mean).powi(2)).sum::<f64>() / n as f64;
        *s = (mean, if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    let images: Vec<ImageRecord> = (0..n)
        .map(|i| {
            let mut features = Vec::with_capacity(d);
            for (a, &(mean, sd)) in stats.iter().enumerate() {
                features.push((latent[i][a] - mean) / sd);
            }
            for _ in m..d {
                features.push(rng.sample(StandardNormal));
            }
            ImageRecord {
                id: i,
                features,
                class_id: Some(classes[i]),
                asset_path: None,
            }
        })
        .collect();

    let band = config.equality_band();
    let flip = config.noise_sd.min(0.5);
    let mut comparisons = Vec::with_capacity(m * config.pairs_per_attribute);
    for a in 0..m {
        for _ in 0..config.pairs_per_attribute {
            let first = rng.random_range(0..n);
            let mut second = rng.random_range(0..n - 1);
            if second >= first {
                second += 1;
            }
            let diff = latent[first][a] - latent[second][a];
            let (mut relation, confidence) = if diff.abs() < band {
                (Response::Equal, 2)
            } else if diff > 0.0 {
                (
                    Response::More,
                    if diff.abs() > 2.0 * config.jitter {
                        3
                    } else {
                        2
                    },
                )
            } else {
                (
                    Response::Less,
                    if diff.abs() > 2.0 * config.jitter {
                        3
                    } else {
                        2
                    },
                )
            };
            if relation != Response::Equal && flip > 0.0 && rng.random_bool(flip) {
                relation = relation.flipped();
            }
            comparisons.push(ComparisonLabel {
                attribute: a,
                first,
                second,
                relation,
                confidence,
            });
        }
    }

    let attribute_names = config
        .attribute_names
        .clone()
        .unwrap_or_else(|| (0..m).map(|a| format!("attribute-{a}")).collect());

    let manifest = DatasetManifest {
        name: config.name.clone(),
        n,
        d,
        m,
        attribute_names,
        images,
        comparisons,
        class_orders: Some(class_orders),
    };
    debug_assert!(manifest.validate().is_ok());
    Ok(SyntheticDataset { manifest, latent })
}

/// Redundant crowd labels for one (attribute, first, second) question.
#[derive(Debug, Clone)]
pub struct RedundantLabels {
    pub attribute: usize,
    pub first: ImageId,
    pub second: ImageId,
    pub votes: Vec<(Response, u8)>,
}

/// Majority vote over up to five redundant responses; a label is kept when at
/// least three voters agree. Confidence is the rounded mean of the agreeing
/// voters' confidences.
pub fn majority_vote(labels: &[RedundantLabels]) -> Vec<ComparisonLabel> {
    labels
        .iter()
        .filter_map(|q| {
            [Response::More, Response::Less, Response::Equal]
                .into_iter()
                .find_map(|r| {
                    let agreeing: Vec<u8> = q
                        .votes
                        .iter()
                        .filter(|(v, _)| *v == r)
                        .map(|(_, c)| *c)
                        .collect();
                    (agreeing.len() >= 3).then(|| {
                        let mean = agreeing.iter().map(|&c| f64::from(c)).sum::<f64>()
                            / agreeing.len() as f64;
                        ComparisonLabel {
                            attribute: q.attribute,
                            first: q.first,
                            second: q.second,
                            relation: r,
                            confidence: (mean.round() as u8).clamp(1, 3),
                        }
                    })
                })
        })
        .collect()
}
