//! Relevance prediction from eye-movement features, fused with clicks.
//!
//! A viewed image scores `1 / (1 + exp(-v·z + b)) + δα` where `z` is the
//! standardized feature vector and `δ` marks a click. Unviewed images score
//! the configured constant plus `δα`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{EyeFeatureVector, EYE_FEATURES, EYE_FEATURE_NAMES};

pub const DEFAULT_UNVIEWED: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_REG_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column statistics; zero-variance columns get std 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss plus `reg/2 · |v|²` for the model `p = σ(v·x − b)`.
/// The bias is not regularized.
pub fn regularized_log_loss(weights: &[f64], bias: f64, x: &[Vec<f64>], y: &[bool], reg: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let z = dot(weights, row) - bias;
            if label {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    data / n + 0.5 * reg * dot(weights, weights)
}

/// Gradient of [`regularized_log_loss`]: `(∂/∂v, ∂/∂b)`.
pub fn log_loss_gradient(
    weights: &[f64],
    bias: f64,
    x: &[Vec<f64>],
    y: &[bool],
    reg: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw: Vec<f64> = weights.iter().map(|w| reg * w).collect();
    let mut gb = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let residual = sigmoid(dot(weights, row) - bias) - f64::from(u8::from(label));
        for (g, xi) in gw.iter_mut().zip(row) {
            *g += residual * xi / n;
        }
        gb -= residual / n;
    }
    (gw, gb)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Damped Newton iterations on the regularized log-loss.
fn fit_logistic(x: &[Vec<f64>], y: &[bool], reg: f64) -> (Vec<f64>, f64) {
    let dim = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut loss = regularized_log_loss(&w, b, x, y, reg);

    for _ in 0..100 {
        let (gw, gb) = log_loss_gradient(&w, b, x, y, reg);
        // Parameter vector is (v, b); z = v·x − b, so the bias column is −1.
        let p = dim + 1;
        let mut hessian = DMatrix::<f64>::zeros(p, p);
        for row in x {
            let s = sigmoid(dot(&w, row) - b);
            let weight = s * (1.0 - s) / n;
            for i in 0..p {
                let xi = if i < dim { row[i] } else { -1.0 };
                for j in 0..=i {
                    let xj = if j < dim { row[j] } else { -1.0 };
                    hessian[(i, j)] += weight * xi * xj;
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hessian[(j, i)] = hessian[(i, j)];
            }
            hessian[(i, i)] += if i < dim { reg } else { 1e-10 };
        }
        let grad = DVector::from_iterator(p, gw.iter().copied().chain(std::iter::once(gb)));
        let Some(step) = hessian.cholesky().map(|c| c.solve(&grad)) else {
            break;
        };

        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let cand_w: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi - t * si).collect();
            let cand_b = b - t * step[dim];
            let cand_loss = regularized_log_loss(&cand_w, cand_b, x, y, reg);
            if cand_loss <= loss {
                improved = loss - cand_loss > 1e-14;
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                break;
            }
            t *= 0.5;
        }
        if !improved || grad.norm() < 1e-10 {
            break;
        }
    }
    (w, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub features: EyeFeatureVector,
    pub relevant: bool,
    #[serde(default)]
    pub task: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTrainingSet {
    pub rows: Vec<TrainingRow>,
}

impl RelevanceTrainingSet {
    pub fn push(&mut self, features: EyeFeatureVector, relevant: bool, task: impl Into<String>) {
        self.rows.push(TrainingRow {
            features,
            relevant,
            task: task.into(),
        });
    }

    /// CSV with a header of the 19 feature names, `label` and an optional
    /// `task` column.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < EYE_FEATURES + 1 {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected {} feature columns and a label", EYE_FEATURES),
            });
        }
        let has_task = headers.len() > EYE_FEATURES + 1;
        let mut set = RelevanceTrainingSet::default();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let mut values = [0.0; EYE_FEATURES];
            for (k, v) in values.iter_mut().enumerate() {
                *v = record[k].trim().parse().map_err(|e| Error::Parse {
                    line,
                    reason: format!("column {}: {e}", headers[k].to_owned()),
                })?;
            }
            let relevant = match record[EYE_FEATURES].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("label must be 0 or 1, got `{other}`"),
                    })
                }
            };
            let task = if has_task {
                record[EYE_FEATURES + 1].to_owned()
            } else {
                String::new()
            };
            set.push(EyeFeatureVector::viewed(values), relevant, task);
        }
        Ok(set)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = EYE_FEATURE_NAMES.to_vec();
        header.extend(["label", "task"]);
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut record: Vec<String> = row.features.values.iter().map(f64::to_string).collect();
            record.push(u8::from(row.relevant).to_string());
            record.push(row.task.clone());
            wtr.write_record(&record)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOptions {
    pub reg_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub default_unviewed: f64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            reg_grid: DEFAULT_REG_GRID.to_vec(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            default_unviewed: DEFAULT_UNVIEWED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancePredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub alpha: f64,
    pub default_unviewed: f64,
    /// Regularization constant picked by cross-validation.
    #[serde(default)]
    pub reg: f64,
}

impl RelevancePredictor {
    /// Zero weights and bias: every viewed image scores 0.5.
    pub fn neutral() -> Self {
        RelevancePredictor {
            weights: vec![0.0; EYE_FEATURES],
            bias: 0.0,
            standardizer: Standardizer::identity(EYE_FEATURES),
            alpha: DEFAULT_ALPHA,
            default_unviewed: DEFAULT_UNVIEWED,
            reg: 0.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// `v·z − b` for the standardized features.
    pub fn margin(&self, psi: &EyeFeatureVector) -> f64 {
        dot(&self.weights, &self.standardizer.transform(&psi.values)) - self.bias
    }

    /// Logistic part only; `default_unviewed` for unviewed images.
    pub fn gaze_score(&self, psi: &EyeFeatureVector) -> f64 {
        if psi.viewed {
            sigmoid(self.margin(psi))
        } else {
            self.default_unviewed
        }
    }

    pub fn predict(&self, psi: &EyeFeatureVector, clicked: bool) -> f64 {
        self.gaze_score(psi) + if clicked { self.alpha } else { 0.0 }
    }

    pub fn score_collage(&self, feedback: &[(EyeFeatureVector, bool)]) -> Vec<f64> {
        feedback.iter().map(|(psi, clicked)| self.predict(psi, *clicked)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    assignment
}

/// Fits the logistic relevance model, choosing the L2 constant by stratified
/// k-fold cross-validated log-loss.
pub fn train_predictor(data: &RelevanceTrainingSet, opts: &TrainingOptions) -> Result<RelevancePredictor> {
    if opts.reg_grid.is_empty() || opts.reg_grid.iter().any(|r| r.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::InvalidConfig("regularization grid must be positive and non-empty".into()));
    }
    if opts.folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    for (i, row) in data.rows.iter().enumerate() {
        if !row.features.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    let labels: Vec<bool> = data.rows.iter().map(|r| r.relevant).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    if positives < opts.folds || negatives < opts.folds {
        return Err(Error::InsufficientData(format!(
            "{positives} positive and {negatives} negative rows for {} folds",
            opts.folds
        )));
    }

    let raw: Vec<Vec<f64>> = data.rows.iter().map(|r| r.features.values.to_vec()).collect();
    let assignment = stratified_folds(&labels, opts.folds, opts.seed);

    let mut best = (f64::INFINITY, opts.reg_grid[0]);
    for &reg in &opts.reg_grid {
        let mut held_out = 0.0;
        for fold in 0..opts.folds {
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..raw.len()).partition(|&i| assignment[i] != fold);
            let train_raw: Vec<Vec<f64>> = train.iter().map(|&i| raw[i].clone()).collect();
            let std = Standardizer::fit(&train_raw);
            let train_x: Vec<Vec<f64>> = train_raw.iter().map(|r| std.transform(r)).collect();
            let train_y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let (w, b) = fit_logistic(&train_x, &train_y, reg);
            let test_x: Vec<Vec<f64>> = test.iter().map(|&i| std.transform(&raw[i])).collect();
            let test_y: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
            held_out += regularized_log_loss(&w, b, &test_x, &test_y, 0.0) * test.len() as f64;
        }
        if held_out < best.0 {
            best = (held_out, reg);
        }
    }

    let reg = best.1;
    let standardizer = Standardizer::fit(&raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.transform(r)).collect();
    let (weights, bias) = fit_logistic(&x, &labels, reg);
    Ok(RelevancePredictor {
        weights,
        bias,
        standardizer,
        alpha: opts.alpha,
        default_unviewed: opts.default_unviewed,
        reg,
    })
}
