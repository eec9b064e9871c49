//! Regularized kernel LinRel collage selection.
//!
//! For seen images `1..t−1` with relevance `r`, a candidate `I` gets
//! `a(I) = k(I)ᵀ (K + μI)⁻¹`, an estimated relevance `a(I)·r` and an
//! exploration width `‖a(I)‖`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSource;
use crate::mkl::{effective_mu, MU_JITTER};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_COLLAGE_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinRelParams {
    pub mu: f64,
    pub c: f64,
}

impl Default for LinRelParams {
    fn default() -> Self {
        LinRelParams { mu: 1.0, c: DEFAULT_C }
    }
}

/// One round's snapshot: the seen set, its relevance and the factorization
/// of `K_seen + μI`.
#[derive(Debug, Clone)]
pub struct LinRelState {
    seen: Vec<usize>,
    r: DVector<f64>,
    mu: f64,
    c: f64,
    factor: Cholesky<f64, Dyn>,
}

impl LinRelState {
    /// `seen` are corpus positions in the order of `gram` and `r`.
    pub fn new(seen: Vec<usize>, gram: &DMatrix<f64>, r: &[f64], params: LinRelParams) -> Result<Self> {
        let t = seen.len();
        if t == 0 {
            return Err(Error::InsufficientData("LinRel needs at least one seen image".into()));
        }
        if gram.shape() != (t, t) || r.len() != t {
            return Err(Error::Shape(format!(
                "{t} seen images with Gram {:?} and {} scores",
                gram.shape(),
                r.len()
            )));
        }
        if params.c < 0.0 || !params.c.is_finite() {
            return Err(Error::InvalidConfig(format!("exploration constant {} must be >= 0", params.c)));
        }
        let mu = effective_mu(params.mu);
        let mut jitter = 0.0;
        let factor = loop {
            let system = gram + DMatrix::<f64>::identity(t, t) * (mu + jitter);
            if let Some(chol) = system.cholesky() {
                break chol;
            }
            jitter = if jitter == 0.0 { MU_JITTER.max(mu * 1e-10) } else { jitter * 100.0 };
            if jitter > 1.0 {
                return Err(Error::Singular);
            }
        };
        Ok(LinRelState {
            seen,
            r: DVector::from_column_slice(r),
            mu: mu + jitter,
            c: params.c,
            factor,
        })
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn relevance(&self) -> &[f64] {
        self.r.as_slice()
    }

    /// Regularization actually factorized, including any jitter.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `a(I)` from the kernel row `k(I, I_u)` over the seen images.
    pub fn compute_a(&self, k_row: &[f64]) -> DVector<f64> {
        self.factor.solve(&DVector::from_column_slice(k_row))
    }

    pub fn ucb_score(&self, a: &DVector<f64>) -> f64 {
        a.dot(&self.r) + self.c * a.norm()
    }

    /// Scores every row of `cross` (`candidates x seen`).
    pub fn score_block(&self, positions: &[usize], cross: &DMatrix<f64>) -> Vec<CandidateScore> {
        let a = self.factor.solve(&cross.transpose());
        positions
            .iter()
            .enumerate()
            .map(|(j, &position)| {
                let col = a.column(j);
                let estimate = col.dot(&self.r);
                let sigma = col.norm();
                CandidateScore {
                    position,
                    estimate,
                    sigma,
                    ucb: estimate + self.c * sigma,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub position: usize,
    pub estimate: f64,
    pub sigma: f64,
    pub ucb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollageRequest {
    /// Unseen corpus positions. Positions follow id order, so ordering by
    /// position is ordering by id.
    pub pool: Vec<usize>,
    pub size: usize,
    /// How many images are chosen by the upper confidence bound; the rest
    /// by estimated relevance. `None` means all of them.
    pub explore_count: Option<usize>,
}

impl CollageRequest {
    pub fn new(pool: Vec<usize>, size: usize) -> Self {
        CollageRequest {
            pool,
            size,
            explore_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub positions: Vec<usize>,
    /// Set when the pool held fewer than the requested number of images.
    pub short: bool,
    pub scores: Vec<CandidateScore>,
}

/// Seeded uniform sample without replacement, returned in draw order.
pub fn random_selection(pool: &[usize], size: usize, seed: u64) -> Selection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = size.min(pool.len());
    let positions = sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    Selection {
        positions,
        short: take < size,
        scores: Vec::new(),
    }
}

fn by_key_then_position(key: impl Fn(&CandidateScore) -> f64) -> impl Fn(&CandidateScore, &CandidateScore) -> std::cmp::Ordering {
    move |a, b| key(b).total_cmp(&key(a)).then(a.position.cmp(&b.position))
}

/// Picks the next collage. Without a state this is the cold start and falls
/// back to a seeded random sample.
pub fn select_collage(
    request: &CollageRequest,
    state: Option<(&LinRelState, &dyn KernelSource)>,
    seed: u64,
) -> Result<Selection> {
    if request.pool.is_empty() {
        return Err(Error::InsufficientData("candidate pool is empty".into()));
    }
    if request.size == 0 {
        return Err(Error::InvalidConfig("collage size must be >= 1".into()));
    }
    let Some((state, kernel)) = state else {
        return Ok(random_selection(&request.pool, request.size, seed));
    };

    let cross = kernel.block(&request.pool, state.seen());
    let mut remaining = state.score_block(&request.pool, &cross);
    let take = request.size.min(remaining.len());
    let explore = request.explore_count.unwrap_or(take).min(take);

    remaining.sort_by(by_key_then_position(|s| s.ucb));
    let mut chosen: Vec<CandidateScore> = remaining.drain(..explore).collect();
    remaining.sort_by(by_key_then_position(|s| s.estimate));
    chosen.extend(remaining.drain(..take - explore));

    Ok(Selection {
        positions: chosen.iter().map(|s| s.position).collect(),
        short: take < request.size,
        scores: chosen,
    })
}
