//! Base kernels over image feature spaces.
//!
//! Every base kernel is the linear kernel on one feature space, cosine
//! normalized so that `k(I, I) = 1` for nonzero vectors. Zero vectors map
//! to 0 against everything.

use nalgebra::DMatrix;

use crate::corpus::{Corpus, ImageRecord};
use crate::error::{Error, Result};

/// Full Gram matrices are cached when the corpus has at most this many images.
const FULL_GRAM_LIMIT: usize = 4096;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

pub fn base_kernel(feature: &str, i: &ImageRecord, j: &ImageRecord) -> Result<f64> {
    Ok(cosine(i.feature(feature)?, j.feature(feature)?))
}

/// Anything that can produce kernel blocks between items addressed by index.
pub trait KernelSource: Sync {
    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64>;

    fn gram(&self, items: &[usize]) -> DMatrix<f64> {
        self.block(items, items)
    }
}

/// Plain linear kernel over explicit feature rows.
#[derive(Debug, Clone)]
pub struct LinearKernel {
    pub features: DMatrix<f64>,
}

impl LinearKernel {
    pub fn new(features: DMatrix<f64>) -> Self {
        LinearKernel { features }
    }
}

impl KernelSource for LinearKernel {
    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let a = self.features.select_rows(rows);
        let b = self.features.select_rows(cols);
        a * b.transpose()
    }
}

/// Per-feature normalized feature matrices for a whole corpus, indexed by
/// corpus position.
#[derive(Debug, Clone)]
pub struct CorpusKernels {
    names: Vec<String>,
    unit_rows: Vec<DMatrix<f64>>,
    full: Vec<Option<DMatrix<f64>>>,
}

impl CorpusKernels {
    /// Uses every feature in the corpus spec set.
    pub fn new(corpus: &Corpus) -> Result<Self> {
        Self::with_features(corpus, &corpus.feature_names())
    }

    pub fn with_features(corpus: &Corpus, names: &[String]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidConfig("no feature spaces selected".into()));
        }
        let mut unit_rows = Vec::with_capacity(names.len());
        for name in names {
            let spec = corpus
                .spec(name)
                .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            let mut m = DMatrix::zeros(corpus.len(), spec.dim);
            for (r, img) in corpus.images().iter().enumerate() {
                let v = img.feature(name)?;
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for (c, x) in v.iter().enumerate() {
                        m[(r, c)] = x / norm;
                    }
                }
            }
            unit_rows.push(m);
        }
        let full = if corpus.len() <= FULL_GRAM_LIMIT {
            unit_rows.iter().map(|m| Some(m * m.transpose())).collect()
        } else {
            vec![None; names.len()]
        };
        Ok(CorpusKernels {
            names: names.to_vec(),
            unit_rows,
            full,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn spaces(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.unit_rows.first().map_or(0, |m| m.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn space_block(&self, space: usize, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        match &self.full[space] {
            Some(g) => DMatrix::from_fn(rows.len(), cols.len(), |i, j| g[(rows[i], cols[j])]),
            None => {
                let a = self.unit_rows[space].select_rows(rows);
                let b = self.unit_rows[space].select_rows(cols);
                a * b.transpose()
            }
        }
    }

    pub fn space_grams(&self, items: &[usize]) -> Vec<DMatrix<f64>> {
        (0..self.spaces()).map(|s| self.space_block(s, items, items)).collect()
    }

    pub fn combined_block(&self, weights: &[f64], rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (s, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                out += self.space_block(s, rows, cols) * w;
            }
        }
        out
    }

    pub fn combined(&self, weights: &[f64]) -> CombinedKernel<'_> {
        CombinedKernel {
            kernels: self,
            weights: weights.to_vec(),
        }
    }
}

/// `k_η(I, J) = Σ_i η_i k_i(I, J)` over a corpus.
#[derive(Debug, Clone)]
pub struct CombinedKernel<'a> {
    kernels: &'a CorpusKernels,
    weights: Vec<f64>,
}

impl KernelSource for CombinedKernel<'_> {
    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        self.kernels.combined_block(&self.weights, rows, cols)
    }
}
