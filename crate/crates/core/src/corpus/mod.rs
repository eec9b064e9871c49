//! Image collections: records, feature specs, ingestion and persistence.

mod color;
mod extract;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use color::srgb_to_lab;
pub use extract::{
    extract_features, zone_of, COMPUTED_FEATURES, LAB_MEAN, LAB_MOMENTS, MIN_SIDE,
    RELATIVE_BRIGHTNESS, SOBEL_COOCCURRENCE, SOBEL_FFT, SOBEL_HISTOGRAM, ZONES,
};
pub use store::{import_features, ingest_directory, ImportReport, IngestReport, IngestWarning};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Computed,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub dim: usize,
    pub provenance: Provenance,
}

impl FeatureSpec {
    pub fn computed(name: &str, dim: usize) -> Self {
        FeatureSpec {
            name: name.to_owned(),
            dim,
            provenance: Provenance::Computed,
        }
    }

    pub fn imported(name: &str, dim: usize) -> Self {
        FeatureSpec {
            name: name.to_owned(),
            dim,
            provenance: Provenance::Imported,
        }
    }

    /// Every built-in descriptor.
    pub fn all_computed() -> Vec<FeatureSpec> {
        COMPUTED_FEATURES
            .iter()
            .map(|&(name, dim)| FeatureSpec::computed(name, dim))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub source: String,
    pub labels: BTreeSet<String>,
    pub features: BTreeMap<String, Vec<f64>>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        ImageRecord {
            id: id.into(),
            source: source.into(),
            labels: BTreeSet::new(),
            features: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.labels.insert(label.into());
        self
    }

    pub fn with_feature(mut self, name: impl Into<String>, v: Vec<f64>) -> Self {
        self.features.insert(name.into(), v);
        self
    }

    pub fn feature(&self, name: &str) -> Result<&[f64]> {
        self.features
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingFeature {
                image: self.id.clone(),
                feature: name.to_owned(),
            })
    }
}

/// A searchable collection. Images are kept sorted by id; the corpus is
/// treated as immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    specs: Vec<FeatureSpec>,
    images: Vec<ImageRecord>,
    categories: BTreeMap<String, BTreeSet<String>>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, validating ids, spec names and every present
    /// feature's dimension. Missing features are allowed (imported
    /// descriptors may be attached later).
    pub fn new(
        name: impl Into<String>,
        specs: Vec<FeatureSpec>,
        mut images: Vec<ImageRecord>,
    ) -> Result<Self> {
        let mut names = BTreeSet::new();
        for spec in &specs {
            if spec.dim == 0 {
                return Err(Error::InvalidConfig(format!("feature `{}` has dim 0", spec.name)));
            }
            if !names.insert(spec.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate feature `{}`", spec.name)));
            }
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in images.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidConfig(format!("duplicate image id `{}`", pair[0].id)));
            }
        }
        let mut corpus = Corpus {
            name: name.into(),
            specs,
            images,
            categories: BTreeMap::new(),
            index: HashMap::new(),
        };
        for img in &corpus.images {
            for (feature, v) in &img.features {
                let spec = corpus
                    .spec(feature)
                    .ok_or_else(|| Error::UnknownFeature(feature.clone()))?;
                if spec.dim != v.len() {
                    return Err(Error::DimensionMismatch {
                        image: img.id.clone(),
                        feature: feature.clone(),
                        expected: spec.dim,
                        actual: v.len(),
                        row: None,
                    });
                }
            }
        }
        corpus.reindex();
        Ok(corpus)
    }

    fn reindex(&mut self) {
        self.index = self
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| (img.id.clone(), i))
            .collect();
        self.categories.clear();
        for img in &self.images {
            for label in &img.labels {
                self.categories
                    .entry(label.clone())
                    .or_default()
                    .insert(img.id.clone());
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&FeatureSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.position(id).map(|i| &self.images[i])
    }

    pub fn categories(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.categories
    }

    pub fn members(&self, category: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(category)
    }

    /// Checks that every image carries every feature in the spec set.
    pub fn validate_complete(&self) -> Result<()> {
        for img in &self.images {
            for spec in &self.specs {
                img.feature(&spec.name)?;
            }
        }
        Ok(())
    }

    pub(crate) fn images_mut(&mut self) -> &mut [ImageRecord] {
        &mut self.images
    }

    pub(crate) fn specs_mut(&mut self) -> &mut [FeatureSpec] {
        &mut self.specs
    }

    /// Persists the corpus as `manifest.json` plus a little-endian f64 blob.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        store::save(self, dir)
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        store::load(dir)
    }

    /// Serialized manifest and blob bytes, as written by [`Corpus::save`].
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        store::encode(self)
    }
}
