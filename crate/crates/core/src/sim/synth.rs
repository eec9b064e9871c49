//! Synthetic corpora whose categories carry planted feature signatures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureSpec, ImageRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpace {
    pub name: String,
    pub dim: usize,
    /// Length of the category prototype added to each member's noise
    /// vector. Zero makes the space pure noise.
    pub signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    pub name: String,
    pub images: usize,
    pub categories: usize,
    /// Range of the fraction of the corpus each category covers.
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub spaces: Vec<SyntheticSpace>,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            name: "synthetic".into(),
            images: 1000,
            categories: 10,
            min_fraction: 0.06,
            max_fraction: 0.12,
            spaces: vec![
                SyntheticSpace {
                    name: "shape".into(),
                    dim: 16,
                    signal: 4.0,
                },
                SyntheticSpace {
                    name: "colour".into(),
                    dim: 16,
                    signal: 2.0,
                },
                SyntheticSpace {
                    name: "noise".into(),
                    dim: 16,
                    signal: 0.0,
                },
            ],
        }
    }
}

pub fn category_name(k: usize) -> String {
    format!("cat{k:02}")
}

/// Images are `img0000`, `img0001`, ... Each category gets a random unit
/// prototype per space; members are `signal * prototype + N(0, I)`, the rest
/// pure noise. Every image belongs to at most one category.
pub fn generate_synthetic_corpus(config: &SyntheticCorpusConfig, seed: u64) -> Result<Corpus> {
    if config.spaces.is_empty() {
        return Err(Error::InvalidConfig("at least one feature space is required".into()));
    }
    if !(0.0 < config.min_fraction && config.min_fraction <= config.max_fraction) {
        return Err(Error::InvalidConfig("need 0 < min_fraction <= max_fraction".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = (0..config.categories)
        .map(|_| {
            let f = rng.random_range(config.min_fraction..=config.max_fraction);
            ((f * config.images as f64).round() as usize).max(1)
        })
        .collect();
    if sizes.iter().sum::<usize>() > config.images {
        return Err(Error::InvalidConfig("category fractions exceed the corpus size".into()));
    }

    let mut order: Vec<usize> = (0..config.images).collect();
    order.shuffle(&mut rng);
    let mut category_of = vec![None; config.images];
    let mut next = 0;
    for (k, &size) in sizes.iter().enumerate() {
        for &i in &order[next..next + size] {
            category_of[i] = Some(k);
        }
        next += size;
    }

    let prototypes: Vec<Vec<Vec<f64>>> = config
        .spaces
        .iter()
        .map(|space| {
            (0..config.categories)
                .map(|_| {
                    let v: Vec<f64> = (0..space.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        })
        .collect();

    let specs: Vec<FeatureSpec> = config
        .spaces
        .iter()
        .map(|s| FeatureSpec::imported(&s.name, s.dim))
        .collect();
    let mut images = Vec::with_capacity(config.images);
    for (i, category) in category_of.iter().enumerate() {
        let mut record = ImageRecord::new(format!("img{i:04}"), "synthetic");
        if let Some(k) = category {
            record = record.with_label(category_name(*k));
        }
        for (s, space) in config.spaces.iter().enumerate() {
            let v: Vec<f64> = (0..space.dim)
                .map(|d| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    noise + category.map_or(0.0, |k| space.signal * prototypes[s][k][d])
                })
                .collect();
            record = record.with_feature(space.name.clone(), v);
        }
        images.push(record);
    }
    Corpus::new(config.name.clone(), specs, images)
}
