//! Simulated search sessions over the categories of a corpus.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::mean;
use super::pool::SimPool;
use crate::error::{Error, Result};
use crate::linrel::DEFAULT_COLLAGE_SIZE;
use crate::mkl::{DEFAULT_LAMBDA, MU_GRID};
use crate::session::{
    round_seed, Advance, FeedbackEvent, Modality, SearchContext, Session, SessionConfig, SessionSummary,
    TensorConfig, DEFAULT_ROUNDS,
};

pub const ALPHA_GRID: [f64; 6] = [0.01, 0.1, 1.0, 5.0, 10.0, 100.0];
pub const DEFAULT_SESSIONS: usize = 40;

/// Simulated user response to one collage.
pub fn simulate_feedback(
    round: usize,
    collage: &[String],
    relevant: &BTreeSet<String>,
    modality: Modality,
    pool: Option<&SimPool>,
    rng: &mut ChaCha8Rng,
) -> Result<FeedbackEvent> {
    let mut event = FeedbackEvent::empty(round);
    let count = collage.iter().filter(|id| relevant.contains(*id)).count();
    if modality.uses_gaze() {
        let pool = pool.ok_or_else(|| Error::InvalidConfig(format!("modality {modality} needs a gaze pool")))?;
        for id in collage {
            let v = pool.draw(relevant.contains(id), count, rng)?;
            event.eye_features.insert(id.clone(), v);
        }
    }
    if modality.uses_clicks() {
        let hits: Vec<&String> = collage.iter().filter(|id| relevant.contains(*id)).collect();
        let pick = if hits.is_empty() {
            collage.choose(rng)
        } else {
            hits.choose(rng).copied()
        };
        event.clicks.extend(pick.cloned());
    }
    if modality == Modality::Full {
        for id in collage {
            let label = if relevant.contains(id) { 1.0 } else { 0.0 };
            event.labels.insert(id.clone(), label);
        }
    }
    Ok(event)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub modality: Modality,
    pub sessions: usize,
    pub rounds: usize,
    pub collage_size: usize,
    pub lambda: f64,
    pub mu: f64,
    pub c: f64,
    pub alpha: Option<f64>,
    pub explore_count: Option<usize>,
    pub tensor: TensorConfig,
    pub seed: u64,
    /// Categories to run; all corpus categories when unset.
    pub categories: Option<Vec<String>>,
    pub mu_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Keep each session's full summary in the result.
    pub keep_summaries: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            modality: Modality::GazeClick,
            sessions: DEFAULT_SESSIONS,
            rounds: DEFAULT_ROUNDS,
            collage_size: DEFAULT_COLLAGE_SIZE,
            lambda: DEFAULT_LAMBDA,
            mu: 1.0,
            c: 1.0,
            alpha: None,
            explore_count: None,
            tensor: TensorConfig::default(),
            seed: 0,
            categories: None,
            mu_grid: MU_GRID.to_vec(),
            alpha_grid: ALPHA_GRID.to_vec(),
            keep_summaries: false,
        }
    }
}

impl ExperimentConfig {
    pub fn new(modality: Modality) -> Self {
        ExperimentConfig {
            modality,
            ..Default::default()
        }
    }

    fn session_config(&self, corpus: &str, category: &str, seed: u64) -> SessionConfig {
        SessionConfig {
            corpus: corpus.to_string(),
            modality: self.modality,
            rounds: self.rounds,
            collage_size: self.collage_size,
            lambda: self.lambda,
            mu: self.mu,
            c: self.c,
            alpha: self.alpha,
            explore_count: self.explore_count,
            tensor: self.tensor,
            seed,
            target: Some(category.to_string()),
        }
    }
}

/// Seed of session `index` on `category`. Depends only on the experiment
/// seed, the category name and the index, so sessions pair up across
/// modalities and do not depend on processing order.
pub fn session_seed(seed: u64, category: &str, index: usize) -> u64 {
    // FNV-1a over the category name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in category.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    round_seed(seed ^ h, index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session: String,
    pub category: String,
    pub index: usize,
    pub seed: u64,
    pub average_precision: f64,
    pub relevant_per_round: Vec<usize>,
    pub relevant_total: usize,
    pub summary: Option<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub members: usize,
    pub map: f64,
    pub sessions: Vec<SessionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub per_category: Vec<CategoryResult>,
    pub macro_map: f64,
    pub skipped: Vec<String>,
}

impl ExperimentResult {
    /// Average precision of every session, ordered by (category, index).
    pub fn unit_scores(&self) -> Vec<f64> {
        self.per_category
            .iter()
            .flat_map(|c| c.sessions.iter().map(|s| s.average_precision))
            .collect()
    }

    pub fn category(&self, name: &str) -> Option<&CategoryResult> {
        self.per_category.iter().find(|c| c.category == name)
    }
}

/// Runs one simulated session to completion.
pub fn run_session(
    context: &SearchContext,
    pool: Option<&SimPool>,
    config: &ExperimentConfig,
    category: &str,
    index: usize,
) -> Result<SessionOutcome> {
    let corpus = &context.corpus;
    let relevant = corpus
        .members(category)
        .ok_or_else(|| Error::UnknownCategory(category.to_string()))?
        .clone();
    let seed = session_seed(config.seed, category, index);
    let id = format!("{category}-{index}");
    let mut session = Session::start(id.clone(), config.session_config(corpus.name(), category, seed), context.clone())?;
    let summary = loop {
        let round = session.round();
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed(seed ^ 0x5eed_f00d, round));
        let event = simulate_feedback(
            round,
            &session.current_collage(),
            &relevant,
            config.modality,
            pool,
            &mut rng,
        )?;
        if let Advance::Summary(s) = session.submit_feedback(event)? {
            break *s;
        }
    };
    let relevant_per_round = summary.relevant_per_round.clone().unwrap_or_default();
    Ok(SessionOutcome {
        session: id,
        category: category.to_string(),
        index,
        seed,
        average_precision: summary.average_precision.unwrap_or(0.0),
        relevant_total: relevant_per_round.iter().sum(),
        relevant_per_round,
        summary: config.keep_summaries.then_some(summary),
    })
}

/// Runs `config.sessions` sessions per category in parallel. Results are
/// ordered by category name and session index.
pub fn run_experiment(context: &SearchContext, pool: Option<&SimPool>, config: &ExperimentConfig) -> Result<ExperimentResult> {
    if config.sessions == 0 {
        return Err(Error::InvalidConfig("sessions must be >= 1".into()));
    }
    if config.modality.uses_gaze() {
        let pool = pool.ok_or_else(|| Error::InvalidConfig(format!("modality {} needs a gaze pool", config.modality)))?;
        pool.check_complete()?;
    }
    let corpus = &context.corpus;
    let mut names: Vec<String> = match &config.categories {
        Some(c) => c.clone(),
        None => corpus.categories().keys().cloned().collect(),
    };
    names.sort();
    names.dedup();

    let mut skipped = Vec::new();
    let mut runnable = Vec::new();
    for name in names {
        match corpus.members(&name) {
            None => return Err(Error::UnknownCategory(name)),
            Some(m) if m.is_empty() => {
                log::warn!("category `{name}` has no relevant images; skipped");
                skipped.push(name);
            }
            Some(m) => runnable.push((name, m.len())),
        }
    }

    let units: Vec<(usize, usize)> = (0..runnable.len())
        .flat_map(|c| (0..config.sessions).map(move |s| (c, s)))
        .collect();
    let outcomes: Vec<SessionOutcome> = units
        .par_iter()
        .map(|&(c, s)| run_session(context, pool, config, &runnable[c].0, s))
        .collect::<Result<_>>()?;

    let mut by_category: BTreeMap<usize, Vec<SessionOutcome>> = BTreeMap::new();
    for ((c, _), outcome) in units.iter().zip(outcomes) {
        by_category.entry(*c).or_default().push(outcome);
    }
    let per_category: Vec<CategoryResult> = by_category
        .into_iter()
        .map(|(c, sessions)| {
            let aps: Vec<f64> = sessions.iter().map(|s| s.average_precision).collect();
            CategoryResult {
                category: runnable[c].0.clone(),
                members: runnable[c].1,
                map: mean(&aps),
                sessions,
            }
        })
        .collect();
    let macro_map = mean(&per_category.iter().map(|c| c.map).collect::<Vec<_>>());
    Ok(ExperimentResult {
        config: config.clone(),
        per_category,
        macro_map,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: Option<f64>,
    pub mu: f64,
    pub macro_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_alpha: Option<f64>,
    pub best_mu: f64,
    pub best_macro_map: f64,
    pub rows: Vec<GridPoint>,
}

fn best(rows: &[GridPoint]) -> &GridPoint {
    // First maximum wins, so ties go to the earlier grid value.
    rows.iter()
        .fold(None::<&GridPoint>, |acc, r| match acc {
            Some(b) if b.macro_map >= r.macro_map => Some(b),
            _ => Some(r),
        })
        .expect("grid is non-empty")
}

/// Sequential grid search: for combined gaze and click feedback the click
/// weight is chosen first with `mu` at its configured value, then `mu` with
/// that weight. Other modalities only search `mu`.
pub fn grid_search(context: &SearchContext, pool: Option<&SimPool>, config: &ExperimentConfig) -> Result<GridSearch> {
    if config.mu_grid.is_empty() || (config.modality == Modality::GazeClick && config.alpha_grid.is_empty()) {
        return Err(Error::InvalidConfig("grids must be non-empty".into()));
    }
    let mut rows = Vec::new();
    let mut alpha = config.alpha;
    if config.modality == Modality::GazeClick {
        let mut alpha_rows = Vec::new();
        for &a in &config.alpha_grid {
            let cfg = ExperimentConfig {
                alpha: Some(a),
                ..config.clone()
            };
            let result = run_experiment(context, pool, &cfg)?;
            alpha_rows.push(GridPoint {
                alpha: Some(a),
                mu: config.mu,
                macro_map: result.macro_map,
            });
        }
        alpha = best(&alpha_rows).alpha;
        rows.extend(alpha_rows);
    }
    let mut mu_rows = Vec::new();
    for &mu in &config.mu_grid {
        let cfg = ExperimentConfig {
            alpha,
            mu,
            ..config.clone()
        };
        let result = run_experiment(context, pool, &cfg)?;
        mu_rows.push(GridPoint {
            alpha,
            mu,
            macro_map: result.macro_map,
        });
    }
    let chosen = best(&mu_rows).clone();
    rows.extend(mu_rows);
    Ok(GridSearch {
        best_alpha: alpha,
        best_mu: chosen.mu,
        best_macro_map: chosen.macro_map,
        rows,
    })
}
