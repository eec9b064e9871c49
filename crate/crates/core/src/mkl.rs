//! Elastic-net multiple kernel ridge regression.
//!
//! Minimizes, over per-space predictors `f_i` and simplex weights `η`,
//!
//! ```text
//! μ · Σ_i (λ/η_i + 1 − λ) ‖f_i‖² + ‖Σ_i Φ_iᵀ f_i − r‖²
//! ```
//!
//! by alternating two exact steps. With `η` fixed, `f_i = Φ_i c / d_i` where
//! `d_i = λ/η_i + 1 − λ` and `c = (Σ_i K_i/d_i + μI)⁻¹ r`. With `f` fixed,
//! `η_i ∝ ‖f_i‖`. Both steps solve their subproblem exactly, so the
//! objective never increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const ETA_FLOOR: f64 = 1e-8;
/// Substituted for a zero shared regularization.
pub const MU_JITTER: f64 = 1e-8;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

/// Shared regularization values searched by the offline harness.
pub const MU_GRID: [f64; 7] = [0.0, 0.01, 0.1, 5.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MklParams {
    pub lambda: f64,
    pub mu: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MklParams {
    fn default() -> Self {
        MklParams {
            lambda: DEFAULT_LAMBDA,
            mu: 1.0,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl MklParams {
    pub fn with_mu(mu: f64) -> Self {
        MklParams {
            mu,
            ..Default::default()
        }
    }

    pub fn effective_mu(&self) -> f64 {
        effective_mu(self.mu)
    }
}

pub fn effective_mu(mu: f64) -> f64 {
    if mu > 0.0 {
        mu
    } else {
        MU_JITTER
    }
}

/// Per-space Gram matrices over the seen images.
#[derive(Debug, Clone)]
pub struct KernelBundle {
    pub names: Vec<String>,
    pub grams: Vec<DMatrix<f64>>,
}

impl KernelBundle {
    pub fn new(names: Vec<String>, grams: Vec<DMatrix<f64>>) -> Result<Self> {
        if names.len() != grams.len() || grams.is_empty() {
            return Err(Error::Shape(format!(
                "{} names for {} Gram matrices",
                names.len(),
                grams.len()
            )));
        }
        let n = grams[0].nrows();
        if grams.iter().any(|g| g.nrows() != n || g.ncols() != n) {
            return Err(Error::Shape("Gram matrices must share one square shape".into()));
        }
        Ok(KernelBundle { names, grams })
    }

    pub fn spaces(&self) -> usize {
        self.grams.len()
    }

    pub fn size(&self) -> usize {
        self.grams[0].nrows()
    }

    pub fn combined(&self, eta: &[f64]) -> DMatrix<f64> {
        combine(&self.grams, eta)
    }
}

pub fn combine(grams: &[DMatrix<f64>], eta: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(grams[0].nrows(), grams[0].ncols());
    for (g, &w) in grams.iter().zip(eta) {
        out += g * w;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklModel {
    pub eta: Vec<f64>,
    pub duals: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    /// Objective after each `f`-step.
    pub objective_trace: Vec<f64>,
}

impl MklModel {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }

    /// `d_i` with the floored weights used by the solver.
    pub fn scales(&self) -> Vec<f64> {
        scales(&self.eta, self.lambda)
    }

    /// Fitted values `Σ_i K_i c / d_i` on the training images.
    pub fn fitted(&self, bundle: &KernelBundle) -> Vec<f64> {
        let c = DVector::from_column_slice(&self.duals);
        let mut out = DVector::zeros(c.len());
        for (g, d) in bundle.grams.iter().zip(self.scales()) {
            out += g * &c / d;
        }
        out.iter().copied().collect()
    }

    /// `‖f_i‖²` per space.
    pub fn predictor_norms_sq(&self, bundle: &KernelBundle) -> Vec<f64> {
        let c = DVector::from_column_slice(&self.duals);
        bundle
            .grams
            .iter()
            .zip(self.scales())
            .map(|(g, d)| c.dot(&(g * &c)) / (d * d))
            .collect()
    }

    /// Combined kernel value from per-space base kernel values.
    pub fn combined_kernel(&self, base_values: &[f64]) -> f64 {
        self.eta.iter().zip(base_values).map(|(w, k)| w * k).sum()
    }
}

fn scales(eta: &[f64], lambda: f64) -> Vec<f64> {
    eta.iter()
        .map(|&e| lambda / e.max(ETA_FLOOR) + 1.0 - lambda)
        .collect()
}

/// Below this shared regularization the duals pick up a `1/μ` component in
/// the joint null space of the kernels, and `cᵀK_i c` is evaluated in the
/// eigenbasis with that component dropped.
const SMALL_MU: f64 = 1e-4;
/// Relative eigenvalue cutoff for the joint null space.
const NULL_TOLERANCE: f64 = 1e-12;

/// One ridge step at fixed `d`.
struct DualStep {
    c: DVector<f64>,
    /// `cᵀ K_i c` per space.
    quad: Vec<f64>,
    /// `μ rᵀ c`, equal to the primal objective at the optimal `f`.
    objective: f64,
}

fn dual_step(grams: &[DMatrix<f64>], d: &[f64], mu: f64, r: &DVector<f64>) -> Result<DualStep> {
    let n = r.len();
    let mut combined = DMatrix::<f64>::zeros(n, n);
    for (g, di) in grams.iter().zip(d) {
        combined += g / *di;
    }
    if mu >= SMALL_MU {
        let system = &combined + DMatrix::<f64>::identity(n, n) * mu;
        if let Some(chol) = system.cholesky() {
            let c = chol.solve(r);
            let quad = grams.iter().map(|g| c.dot(&(g * &c)).max(0.0)).collect();
            let objective = mu * r.dot(&c);
            return Ok(DualStep { c, quad, objective });
        }
    }
    let eig = combined.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let cutoff = NULL_TOLERANCE * top.max(f64::MIN_POSITIVE);
    let proj = eig.eigenvectors.transpose() * r;
    let mut coef = DVector::zeros(n);
    let mut range_coef = DVector::zeros(n);
    let mut objective = 0.0;
    for j in 0..n {
        let g = eig.eigenvalues[j];
        let g = if g > cutoff { g } else { 0.0 };
        coef[j] = proj[j] / (g + mu);
        objective += mu * proj[j] * proj[j] / (g + mu);
        if g > 0.0 {
            range_coef[j] = coef[j];
        }
    }
    if !objective.is_finite() {
        return Err(Error::Singular);
    }
    let c = &eig.eigenvectors * coef;
    let c_range = &eig.eigenvectors * range_coef;
    let quad = grams
        .iter()
        .map(|g| c_range.dot(&(g * &c_range)).max(0.0))
        .collect();
    Ok(DualStep { c, quad, objective })
}

/// Alternating minimization. `warm_eta` seeds the weights (uniform when
/// `None`).
pub fn solve_mkl(
    bundle: &KernelBundle,
    r: &[f64],
    params: &MklParams,
    warm_eta: Option<&[f64]>,
) -> Result<MklModel> {
    let n = bundle.spaces();
    if r.len() != bundle.size() || r.is_empty() {
        return Err(Error::Shape(format!(
            "relevance vector of length {} for Gram size {}",
            r.len(),
            bundle.size()
        )));
    }
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(Error::InvalidConfig(format!("lambda {} outside [0, 1]", params.lambda)));
    }
    let uniform = vec![1.0 / n as f64; n];
    let mu = params.effective_mu();

    if r.iter().all(|&x| x == 0.0) {
        return Ok(MklModel {
            eta: uniform,
            duals: vec![0.0; r.len()],
            lambda: params.lambda,
            mu,
            objective_trace: vec![0.0],
        });
    }

    let mut eta = match warm_eta {
        Some(w) if w.len() == n && w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0 => {
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        }
        _ => uniform,
    };
    let r = DVector::from_column_slice(r);
    let mut trace = Vec::new();
    let mut duals;

    let mut iteration = 0;
    loop {
        let d = scales(&eta, params.lambda);
        let step = dual_step(&bundle.grams, &d, mu, &r)?;
        let value = step.objective;
        duals = step.c;
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| prev - value < params.tolerance);
        trace.push(value);
        iteration += 1;
        if converged || iteration >= params.max_iterations {
            break;
        }

        let norms: Vec<f64> = step.quad.iter().zip(&d).map(|(q, di)| q.sqrt() / di).collect();
        let total: f64 = norms.iter().sum();
        if total <= 0.0 {
            break;
        }
        eta = norms.iter().map(|x| x / total).collect();
    }

    Ok(MklModel {
        eta,
        duals: duals.iter().copied().collect(),
        lambda: params.lambda,
        mu,
        objective_trace: trace,
    })
}
