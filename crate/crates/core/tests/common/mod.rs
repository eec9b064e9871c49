//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// MKL: projected gradient over the simplex on the explicit-feature primal.

pub struct MklOracle {
    pub eta: Vec<f64>,
    pub predictions: DVector<f64>,
    pub objective: f64,
}

fn d_of(eta: f64, lambda: f64) -> f64 {
    lambda / eta + 1.0 - lambda
}

/// Minimizes `‖Σ X_i f_i − r‖² + μ Σ d_i ‖f_i‖²` over `f` for fixed `eta`
/// by one stacked ridge solve. Returns the blocks and the objective.
pub fn primal_for_eta(xs: &[DMatrix<f64>], r: &DVector<f64>, eta: &[f64], lambda: f64, mu: f64) -> (Vec<DVector<f64>>, f64) {
    let dims: Vec<usize> = xs.iter().map(|x| x.ncols()).collect();
    let total: usize = dims.iter().sum();
    let n = r.len();
    let mut x = DMatrix::zeros(n, total);
    let mut penalty = DVector::zeros(total);
    let mut off = 0;
    for (i, xi) in xs.iter().enumerate() {
        x.view_mut((0, off), (n, dims[i])).copy_from(xi);
        for j in 0..dims[i] {
            penalty[off + j] = mu * d_of(eta[i], lambda);
        }
        off += dims[i];
    }
    let system = x.transpose() * &x + DMatrix::from_diagonal(&penalty);
    let f = system.lu().solve(&(x.transpose() * r)).expect("ridge system is nonsingular");
    let residual = &x * &f - r;
    let objective = residual.norm_squared() + f.iter().zip(penalty.iter()).map(|(v, p)| p * v * v).sum::<f64>();
    let mut blocks = Vec::new();
    let mut off = 0;
    for &d in &dims {
        blocks.push(f.rows(off, d).into_owned());
        off += d;
    }
    (blocks, objective)
}

/// Euclidean projection onto `{η : η_i ≥ floor, Σ η_i = 1}`.
pub fn project_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len();
    let budget = 1.0 - floor * n as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - budget) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0) + floor).collect()
}

pub fn mkl_oracle(xs: &[DMatrix<f64>], r: &[f64], lambda: f64, mu: f64) -> MklOracle {
    let r = DVector::from_column_slice(r);
    let n = xs.len();
    let floor = 1e-12;
    let mut eta = vec![1.0 / n as f64; n];
    let (mut blocks, mut value) = primal_for_eta(xs, &r, &eta, lambda, mu);
    let mut step = 1e-2;
    for _ in 0..200_000 {
        // Danskin: dh/dη_i = −μ λ ‖f_i‖² / η_i².
        let grad: Vec<f64> = (0..n)
            .map(|i| -mu * lambda * blocks[i].norm_squared() / (eta[i] * eta[i]))
            .collect();
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = eta.iter().zip(&grad).map(|(e, g)| e - step * g).collect();
            let candidate = project_simplex(&trial, floor);
            let (b, v) = primal_for_eta(xs, &r, &candidate, lambda, mu);
            let moved: f64 = candidate.iter().zip(&eta).map(|(a, b)| (a - b).abs()).sum();
            if v <= value {
                improved = moved > 0.0 && v < value;
                eta = candidate;
                blocks = b;
                value = v;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let mut predictions = DVector::zeros(r.len());
    for (x, f) in xs.iter().zip(&blocks) {
        predictions += x * f;
    }
    MklOracle {
        eta,
        predictions,
        objective: value,
    }
}

// ---------------------------------------------------------------------------
// LinRel: the primal (feature-space) form through the push-through identity
// Φᵀ(ΦΦᵀ + μI)⁻¹ = (ΦᵀΦ + μI)⁻¹Φᵀ.

pub struct PrimalLinRel {
    pub a: DVector<f64>,
    pub estimate: f64,
    pub sigma: f64,
}

pub fn primal_linrel(phi_seen: &DMatrix<f64>, r: &[f64], mu: f64, phi: &DVector<f64>) -> PrimalLinRel {
    let d = phi_seen.ncols();
    let gram = phi_seen.transpose() * phi_seen + DMatrix::<f64>::identity(d, d) * mu;
    let lu = gram.lu();
    let w = lu.solve(&(phi_seen.transpose() * DVector::from_column_slice(r))).unwrap();
    let z = lu.solve(phi).unwrap();
    let a = phi_seen * z;
    PrimalLinRel {
        sigma: a.norm(),
        estimate: phi.dot(&w),
        a,
    }
}

// ---------------------------------------------------------------------------
// Tensor: explicit SVD of W = Σ_u γ_u φ_u ψ_uᵀ.

pub struct ExplicitTensor {
    pub singular_values: Vec<f64>,
    /// Columns are the image-side projection maps `Φᵀ β_d` (feature space),
    /// sign-free; compare through inner products.
    pub projection: DMatrix<f64>,
}

pub fn explicit_tensor(phi: &DMatrix<f64>, psi: &DMatrix<f64>, gamma: &[f64], rank: usize) -> ExplicitTensor {
    let dg = DMatrix::from_diagonal(&DVector::from_column_slice(gamma));
    let w = phi.transpose() * &dg * psi;
    let svd = w.clone().svd(true, true);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut values = Vec::new();
    let mut cols = Vec::new();
    for &k in order.iter().take(rank) {
        let s = svd.singular_values[k];
        values.push(s);
        // β_d = D_γ Φ u_d / s_d, so Φᵀ β_d = Φᵀ D_γ Φ u_d / s_d.
        let beta = &dg * phi * u.column(k) / s;
        cols.push(phi.transpose() * beta);
    }
    ExplicitTensor {
        singular_values: values,
        projection: DMatrix::from_columns(&cols),
    }
}

// ---------------------------------------------------------------------------
// SVM dual: generic projected-gradient QP and a refining grid search.

pub fn dual_value(k: &DMatrix<f64>, y: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for u in 0..n {
        for v in 0..n {
            quad += a[u] * a[v] * y[u] * y[v] * k[(u, v)];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Projected gradient ascent on the box `[0, c]^n`.
pub fn qp_projected_gradient(k: &DMatrix<f64>, y: &[f64], c: f64) -> Vec<f64> {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |u, v| y[u] * y[v] * k[(u, v)]);
    let lipschitz = q.clone().symmetric_eigenvalues().amax().max(1e-12);
    let step = 1.0 / lipschitz;
    let mut a = DVector::zeros(n);
    for _ in 0..200_000 {
        let grad = DVector::from_element(n, 1.0) - &q * &a;
        let next = (&a + grad * step).map(|v: f64| v.clamp(0.0, c));
        let change = (&next - &a).amax();
        a = next;
        if change < 1e-14 {
            break;
        }
    }
    a.iter().copied().collect()
}

/// Brute-force maximization of the dual over `[0, c]^n`: a coarse grid,
/// then repeated local grids around the incumbent with shrinking spacing.
pub fn qp_grid(k: &DMatrix<f64>, y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let coarse = 20usize;
    let mut best = vec![0.0; n];
    let mut best_value = f64::NEG_INFINITY;
    let total = (coarse + 1).pow(n as u32);
    for idx in 0..total {
        let mut rem = idx;
        let a: Vec<f64> = (0..n)
            .map(|_| {
                let g = rem % (coarse + 1);
                rem /= coarse + 1;
                c * g as f64 / coarse as f64
            })
            .collect();
        let v = dual_value(k, y, &a);
        if v > best_value {
            best_value = v;
            best = a;
        }
    }
    let mut spacing = c / coarse as f64;
    while spacing > 1e-9 {
        let mut moved = true;
        while moved {
            moved = false;
            let centre = best.clone();
            for idx in 0..5usize.pow(n as u32) {
                let mut rem = idx;
                let a: Vec<f64> = centre
                    .iter()
                    .map(|&x| {
                        let g = (rem % 5) as f64 - 2.0;
                        rem /= 5;
                        (x + g * spacing).clamp(0.0, c)
                    })
                    .collect();
                let v = dual_value(k, y, &a);
                if v > best_value + 1e-15 {
                    best_value = v;
                    best = a;
                    moved = true;
                }
            }
        }
        spacing /= 2.0;
    }
    (best, best_value)
}

// ---------------------------------------------------------------------------
// Linear-reward retrieval task for exploration checks.

pub struct BanditTask {
    pub features: DMatrix<f64>,
    pub expected: Vec<f64>,
    pub relevant: Vec<bool>,
    pub noise: f64,
}

/// `n` images with `dim` features; reward `φ·w + N(0, noise²)`; the top
/// `relevant` images by expected reward are the relevant ones.
pub fn bandit_task(rng: &mut ChaCha8Rng, n: usize, dim: usize, relevant: usize, noise: f64) -> BanditTask {
    let features = unit_rows(gaussian_matrix(rng, n, dim));
    let w = DVector::from_column_slice(&gaussian_vector(rng, dim)).normalize();
    let expected: Vec<f64> = (0..n).map(|i| features.row(i).transpose().dot(&w)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| expected[b].total_cmp(&expected[a]));
    let mut flags = vec![false; n];
    for &i in order.iter().take(relevant) {
        flags[i] = true;
    }
    BanditTask {
        features,
        expected,
        relevant: flags,
        noise,
    }
}

pub fn noisy_reward(task: &BanditTask, i: usize, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    task.expected[i] + task.noise * z
}

pub fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub struct BanditRun {
    pub relevant_found: usize,
    pub shown: Vec<usize>,
}

/// Plays `rounds` collages of `size` images with kernel LinRel on the
/// linear kernel of the task features. The first collage is a seeded
/// random draw shared by every `c`.
pub fn run_bandit(task: &BanditTask, c: f64, mu: f64, rounds: usize, size: usize, seed: u64) -> BanditRun {
    use pinview_core::kernel::{KernelSource, LinearKernel};
    use pinview_core::linrel::{select_collage, CollageRequest, LinRelParams, LinRelState};
    use rand::SeedableRng;

    let kernel = LinearKernel::new(task.features.clone());
    let n = task.features.nrows();
    let mut reward_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut seen: Vec<usize> = Vec::new();
    let mut r: Vec<f64> = Vec::new();
    for round in 0..rounds {
        let pool: Vec<usize> = (0..n).filter(|i| !seen.contains(i)).collect();
        let request = CollageRequest::new(pool, size);
        let selection = if seen.is_empty() {
            select_collage(&request, None, seed).unwrap()
        } else {
            let gram = kernel.gram(&seen);
            let state = LinRelState::new(seen.clone(), &gram, &r, LinRelParams { mu, c }).unwrap();
            select_collage(&request, Some((&state, &kernel)), seed + round as u64).unwrap()
        };
        for &i in &selection.positions {
            seen.push(i);
            r.push(noisy_reward(task, i, &mut reward_rng));
        }
    }
    BanditRun {
        relevant_found: seen.iter().filter(|&&i| task.relevant[i]).count(),
        shown: seen,
    }
}
