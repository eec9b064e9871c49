//! Image x gaze tensor kernel, its SVM, and the kernel-space decomposition
//! of the resulting weight matrix into per-view dual directions.
//!
//! The implicit weight matrix is `W = Σ_u γ_u φ(I_u) ψ(I_u)ᵀ`. Its left
//! singular directions are `Φᵀ a` with `a` an eigenvector of
//! `D_γ K_Ψ D_γ K_Φ`, the right ones `Ψᵀ b` with `b` an eigenvector of
//! `D_γ K_Φ D_γ K_Ψ`. Both are computed through the symmetric forms
//! `K^{1/2} D_γ K' D_γ K^{1/2}`, so no feature map is ever needed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 5;
pub const DEFAULT_SVM_C: f64 = 1.0;
/// Relevance scores at or above this are the positive class.
pub const LABEL_THRESHOLD: f64 = 0.5;

const PSD_TOLERANCE: f64 = 1e-8;
const RANK_TOLERANCE: f64 = 1e-10;

pub fn tensor_kernel(k_phi: &DMatrix<f64>, k_psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k_phi.shape() != k_psi.shape() || k_phi.nrows() != k_phi.ncols() {
        return Err(Error::Shape(format!(
            "tensor kernel needs equal square inputs, got {:?} and {:?}",
            k_phi.shape(),
            k_psi.shape()
        )));
    }
    Ok(k_phi.component_mul(k_psi))
}

pub fn binarize(r: &[f64]) -> Vec<f64> {
    r.iter()
        .map(|&x| if x >= LABEL_THRESHOLD { 1.0 } else { -1.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: DEFAULT_SVM_C,
            tolerance: 1e-12,
            max_sweeps: 100_000,
        }
    }
}

/// Dual objective `Σ a − ½ Σ a_u a_v y_u y_v K_uv` of the bias-free
/// soft-margin SVM.
pub fn svm_dual_objective(k: &DMatrix<f64>, y: &[f64], a: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for u in 0..n {
        for v in 0..n {
            quad += a[u] * a[v] * y[u] * y[v] * k[(u, v)];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Maximizes the box-constrained dual by exact coordinate ascent and returns
/// the signed weights `γ_u = y_u a_u`.
pub fn train_tensor_svm(k: &DMatrix<f64>, r: &[f64], params: &SvmParams) -> Result<Vec<f64>> {
    let n = r.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::Shape(format!("kernel {:?} for {n} labels", k.shape())));
    }
    let y = binarize(r);
    if y.iter().all(|&l| l > 0.0) || y.iter().all(|&l| l < 0.0) {
        return Err(Error::SingleClass);
    }

    let mut a = vec![0.0; n];
    // Gradient of the dual: 1 − y_u Σ_v a_v y_v K_uv.
    let mut grad = vec![1.0; n];
    for _ in 0..params.max_sweeps {
        let mut largest = 0.0f64;
        for u in 0..n {
            let q = k[(u, u)];
            let target = if q > 0.0 {
                (a[u] + grad[u] / q).clamp(0.0, params.c)
            } else if grad[u] > 0.0 {
                params.c
            } else {
                a[u]
            };
            let delta = target - a[u];
            if delta != 0.0 {
                a[u] = target;
                for v in 0..n {
                    grad[v] -= delta * y[u] * y[v] * k[(u, v)];
                }
                largest = largest.max(delta.abs());
            }
        }
        if largest < params.tolerance {
            break;
        }
    }
    Ok(a.iter().zip(&y).map(|(a, y)| a * y).collect())
}

struct SqrtFactors {
    root: DMatrix<f64>,
    pinv_root: DMatrix<f64>,
}

fn sqrt_factors(k: &DMatrix<f64>) -> Result<SqrtFactors> {
    let eig = SymmetricEigen::new((k + k.transpose()) * 0.5);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd(min));
    }
    let n = k.nrows();
    let mut root = DMatrix::zeros(n, n);
    let mut pinv_root = DMatrix::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= RANK_TOLERANCE * scale {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        let outer = v * v.transpose();
        root += &outer * lambda.sqrt();
        pinv_root += outer / lambda.sqrt();
    }
    Ok(SqrtFactors { root, pinv_root })
}

fn canonical_sign(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

/// Top directions `a_d` (as columns) of `D_γ K_other D_γ K_own`, normalized
/// so `a_dᵀ K_own a_d = 1`, with their eigenvalues.
fn view_directions(
    gamma: &[f64],
    k_own: &DMatrix<f64>,
    k_other: &DMatrix<f64>,
    rank: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = gamma.len();
    let own = sqrt_factors(k_own)?;
    let dg = DMatrix::from_diagonal(&DVector::from_column_slice(gamma));
    let inner = &dg * k_other * &dg;
    let sym = &own.root * inner * &own.root;
    let eig = SymmetricEigen::new((&sym + sym.transpose()) * 0.5);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut columns = Vec::new();
    let mut values = Vec::new();
    for &i in order.iter().take(rank) {
        let lambda = eig.eigenvalues[i];
        if lambda <= RANK_TOLERANCE * top.max(1.0) {
            break;
        }
        // `K^{+1/2} g` only recovers the part of the eigenvector inside the
        // range of `k_own`; one application of the operator restores the
        // rest and keeps `aᵀ K_own a = gᵀ g`.
        let g = eig.eigenvectors.column(i);
        let a = &dg * k_other * &dg * k_own * (&own.pinv_root * g) / lambda;
        let norm = a.dot(&(k_own * &a)).sqrt();
        columns.push(canonical_sign(a / norm));
        values.push(lambda);
    }
    let coeffs = if columns.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    Ok((coeffs, values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `(t−1) x D` image-view directions.
    pub alpha: DMatrix<f64>,
    /// `(t−1) x D` gaze-view directions.
    pub beta: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl Decomposition {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Decomposes the tensor weights into `D ≤ rank` paired directions. The
/// returned rank is the numerical rank of `W` when that is smaller.
pub fn decompose(
    gamma: &[f64],
    k_phi: &DMatrix<f64>,
    k_psi: &DMatrix<f64>,
    rank: usize,
) -> Result<Decomposition> {
    let n = gamma.len();
    if k_phi.shape() != (n, n) || k_psi.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "{n} weights with Gram shapes {:?} and {:?}",
            k_phi.shape(),
            k_psi.shape()
        )));
    }
    if rank > n {
        return Err(Error::InvalidConfig(format!("rank {rank} exceeds {n} seen images")));
    }
    if gamma.iter().all(|&g| g == 0.0) {
        return Err(Error::ZeroWeights);
    }
    if rank == 0 {
        return Ok(Decomposition {
            alpha: DMatrix::zeros(n, 0),
            beta: DMatrix::zeros(n, 0),
            singular_values: Vec::new(),
        });
    }
    let (alpha, phi_values) = view_directions(gamma, k_phi, k_psi, rank)?;
    let (beta, psi_values) = view_directions(gamma, k_psi, k_phi, rank)?;
    let d = phi_values.len().min(psi_values.len());
    Ok(Decomposition {
        alpha: alpha.columns(0, d).into_owned(),
        beta: beta.columns(0, d).into_owned(),
        singular_values: phi_values[..d].iter().map(|v| v.sqrt()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorModel {
    pub gamma: Vec<f64>,
    pub decomposition: Decomposition,
    /// Corpus positions of the seen images, in Gram order.
    pub seen: Vec<usize>,
}

impl TensorModel {
    pub fn rank(&self) -> usize {
        self.decomposition.rank()
    }

    /// `φ̃(I)_d = Σ_u k_η(I_u, I) β[u, d]` for one kernel row over the seen
    /// images.
    pub fn project(&self, kernel_row: &[f64]) -> Vec<f64> {
        let row = DVector::from_column_slice(kernel_row);
        (self.decomposition.beta.transpose() * row).iter().copied().collect()
    }

    /// Projects many images at once: `cross` is `m x (t−1)`.
    pub fn project_block(&self, cross: &DMatrix<f64>) -> DMatrix<f64> {
        cross * &self.decomposition.beta
    }
}

pub fn projected_kernel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
