//! One search session: show a collage, take feedback, score relevance,
//! re-learn the metric, pick the next collage.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gaze::{collage_eye_features, CollageLayout, EyeFeatureVector, FixationParams, GazeSample, DEFAULT_SCREEN};
use crate::kernel::{CorpusKernels, KernelSource, LinearKernel};
use crate::linrel::{
    random_selection, select_collage, CandidateScore, CollageRequest, LinRelParams, LinRelState, Selection,
    DEFAULT_C, DEFAULT_COLLAGE_SIZE,
};
use crate::mkl::{solve_mkl, KernelBundle, MklParams, DEFAULT_LAMBDA};
use crate::relevance::RelevancePredictor;
use crate::sim::metrics::average_precision;
use crate::tensor::{decompose, tensor_kernel, train_tensor_svm, SvmParams, TensorModel, DEFAULT_RANK, DEFAULT_SVM_C};

pub const DEFAULT_ROUNDS: usize = 10;
/// Scores at or above this count as judged relevant when no ground truth
/// is configured.
pub const JUDGED_RELEVANT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Gaze,
    Click,
    #[serde(rename = "gaze+click")]
    GazeClick,
    Full,
    Random,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Random,
        Modality::Gaze,
        Modality::Click,
        Modality::GazeClick,
        Modality::Full,
    ];

    pub fn uses_gaze(self) -> bool {
        matches!(self, Modality::Gaze | Modality::GazeClick)
    }

    pub fn uses_clicks(self) -> bool {
        matches!(self, Modality::Click | Modality::GazeClick)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Gaze => "gaze",
            Modality::Click => "click",
            Modality::GazeClick => "gaze+click",
            Modality::Full => "full",
            Modality::Random => "random",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown modality `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TensorConfig {
    pub enabled: bool,
    pub rank: usize,
    pub svm_c: f64,
}

impl Default for TensorConfig {
    fn default() -> Self {
        TensorConfig {
            enabled: false,
            rank: DEFAULT_RANK,
            svm_c: DEFAULT_SVM_C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub corpus: String,
    pub modality: Modality,
    pub rounds: usize,
    pub collage_size: usize,
    pub lambda: f64,
    /// Shared regularization for MKL and LinRel.
    pub mu: f64,
    pub c: f64,
    /// Click weight; the predictor's own value when unset.
    pub alpha: Option<f64>,
    /// Images per collage chosen by the confidence bound; all when unset.
    pub explore_count: Option<usize>,
    pub tensor: TensorConfig,
    pub seed: u64,
    /// Ground-truth category for simulated sessions.
    pub target: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            corpus: String::new(),
            modality: Modality::GazeClick,
            rounds: DEFAULT_ROUNDS,
            collage_size: DEFAULT_COLLAGE_SIZE,
            lambda: DEFAULT_LAMBDA,
            mu: 1.0,
            c: DEFAULT_C,
            alpha: None,
            explore_count: None,
            tensor: TensorConfig::default(),
            seed: 0,
            target: None,
        }
    }
}

impl SessionConfig {
    pub fn new(corpus: impl Into<String>, modality: Modality) -> Self {
        SessionConfig {
            corpus: corpus.into(),
            modality,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.collage_size == 0 {
            return bad("collage size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu {} must be a finite value >= 0", self.mu));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("c {} must be a finite value >= 0", self.c));
        }
        if let Some(a) = self.alpha {
            if !a.is_finite() {
                return bad("alpha must be finite".into());
            }
        }
        if let Some(m) = self.explore_count {
            if m == 0 || m > self.collage_size {
                return bad(format!("explore count {m} outside 1..={}", self.collage_size));
            }
        }
        if self.tensor.enabled && self.tensor.svm_c.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("tensor svm_c must be > 0".into());
        }
        Ok(())
    }
}

/// Feedback for one round. Gaze may come as a raw stream over the collage
/// layout, as precomputed feature vectors, or both (precomputed wins).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackEvent {
    pub round: usize,
    pub clicks: Vec<String>,
    pub gaze: Vec<GazeSample>,
    pub eye_features: BTreeMap<String, EyeFeatureVector>,
    /// Relevance given directly, used by the full-feedback modality.
    pub labels: BTreeMap<String, f64>,
}

impl FeedbackEvent {
    pub fn empty(round: usize) -> Self {
        FeedbackEvent {
            round,
            ..Default::default()
        }
    }

    fn referenced(&self) -> impl Iterator<Item = &String> {
        self.clicks
            .iter()
            .chain(self.eye_features.keys())
            .chain(self.labels.keys())
    }
}

/// Shared read-only inputs for every session over one corpus.
#[derive(Debug, Clone)]
pub struct SearchContext {
    pub corpus: Arc<Corpus>,
    pub kernels: Arc<CorpusKernels>,
    pub predictor: Arc<RelevancePredictor>,
}

impl SearchContext {
    pub fn new(corpus: Corpus, predictor: RelevancePredictor) -> Result<Self> {
        let kernels = CorpusKernels::new(&corpus)?;
        Ok(SearchContext {
            corpus: Arc::new(corpus),
            kernels: Arc::new(kernels),
            predictor: Arc::new(predictor),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRound {
    pub applied: bool,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub note: Option<String>,
}

/// What each pipeline stage produced in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub collage: Vec<String>,
    pub scores: Vec<f64>,
    pub eta: Vec<f64>,
    pub mkl_iterations: usize,
    pub mkl_objective: f64,
    pub tensor: Option<TensorRound>,
    /// Scores of the images picked for the next collage.
    pub selection: Vec<CandidateScore>,
    pub relevant: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionBasis {
    /// Ground-truth category membership.
    Labels,
    /// Images whose feedback score reached the judged-relevant threshold.
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub config: SessionConfig,
    pub finished: bool,
    pub rounds_completed: usize,
    pub collages: Vec<Vec<String>>,
    pub feature_names: Vec<String>,
    pub final_eta: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub precision_basis: PrecisionBasis,
    /// Cumulative precision after each completed round.
    pub precision_curve: Vec<f64>,
    pub relevant_per_round: Option<Vec<usize>>,
    pub average_precision: Option<f64>,
}

impl SessionSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Started { session: String, config: SessionConfig },
    Collage { round: usize, images: Vec<String> },
    Feedback { event: FeedbackEvent },
    Scores { round: usize, scores: Vec<f64> },
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    Collage(Vec<String>),
    Summary(Box<SessionSummary>),
}

/// Per-round seed derived from the session seed.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: SessionConfig,
    context: SearchContext,
    predictor: RelevancePredictor,
    target: Option<BTreeSet<usize>>,
    round: usize,
    finished: bool,
    collages: Vec<Vec<usize>>,
    seen: Vec<usize>,
    shown: BTreeSet<usize>,
    r: Vec<f64>,
    psi: Vec<EyeFeatureVector>,
    eta: Vec<f64>,
    records: Vec<RoundRecord>,
    events: Vec<SessionEvent>,
}

impl Session {
    /// Validates the config and shows the first collage, a seeded random
    /// sample of the corpus.
    pub fn start(id: impl Into<String>, config: SessionConfig, context: SearchContext) -> Result<Self> {
        config.validate()?;
        let corpus = &context.corpus;
        if config.corpus != corpus.name() {
            return Err(Error::UnknownCorpus(config.corpus.clone()));
        }
        if corpus.len() < config.collage_size {
            return Err(Error::InvalidConfig(format!(
                "corpus `{}` has {} images, fewer than the collage size {}",
                corpus.name(),
                corpus.len(),
                config.collage_size
            )));
        }
        let target = match &config.target {
            Some(cat) => {
                let members = corpus
                    .members(cat)
                    .ok_or_else(|| Error::UnknownCategory(cat.clone()))?;
                Some(members.iter().filter_map(|id| corpus.position(id)).collect())
            }
            None => None,
        };
        let mut predictor = (*context.predictor).clone();
        if let Some(a) = config.alpha {
            predictor.alpha = a;
        }
        let spaces = context.kernels.spaces();
        let id = id.into();
        let mut session = Session {
            events: vec![SessionEvent::Started {
                session: id.clone(),
                config: config.clone(),
            }],
            id,
            config,
            context,
            predictor,
            target,
            round: 0,
            finished: false,
            collages: Vec::new(),
            seen: Vec::new(),
            shown: BTreeSet::new(),
            r: Vec::new(),
            psi: Vec::new(),
            eta: vec![1.0 / spaces as f64; spaces],
            records: Vec::new(),
        };
        let pool: Vec<usize> = (0..session.context.corpus.len()).collect();
        let first = random_selection(&pool, session.config.collage_size, round_seed(session.config.seed, 0));
        session.show(first.positions);
        Ok(session)
    }

    /// Rebuilds a session from its event log, checking that every logged
    /// collage is reproduced.
    pub fn replay(events: &[SessionEvent], context: SearchContext) -> Result<Self> {
        let Some(SessionEvent::Started { session, config }) = events.first() else {
            return Err(Error::InvalidConfig("event log does not start with a session start".into()));
        };
        let mut s = Session::start(session.clone(), config.clone(), context)?;
        let mut produced = 1;
        for event in &events[1..] {
            match event {
                SessionEvent::Feedback { event } => {
                    s.submit_feedback(event.clone())?;
                }
                SessionEvent::Collage { round, images } => {
                    if s.collage_ids(*round).as_ref() != Some(images) {
                        return Err(Error::ReplayDiverged(*round));
                    }
                    produced = produced.max(round + 1);
                }
                SessionEvent::Scores { round, scores } => {
                    if s.records.get(*round).map(|r| &r.scores) != Some(scores) {
                        return Err(Error::ReplayDiverged(*round));
                    }
                }
                SessionEvent::Started { .. } | SessionEvent::Finished => {}
            }
        }
        if produced > s.collages.len() {
            return Err(Error::ReplayDiverged(produced - 1));
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn context(&self) -> &SearchContext {
        &self.context
    }

    /// Index of the round awaiting feedback.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn relevance(&self) -> &[f64] {
        &self.r
    }

    pub fn seen_ids(&self) -> Vec<String> {
        self.ids(&self.seen)
    }

    pub fn current_collage(&self) -> Vec<String> {
        self.collages.last().map(|c| self.ids(c)).unwrap_or_default()
    }

    pub fn collage_ids(&self, round: usize) -> Option<Vec<String>> {
        self.collages.get(round).map(|c| self.ids(c))
    }

    pub fn layout(&self) -> CollageLayout {
        CollageLayout::grid(&self.current_collage(), DEFAULT_SCREEN)
    }

    fn ids(&self, positions: &[usize]) -> Vec<String> {
        positions
            .iter()
            .map(|&p| self.context.corpus.images()[p].id.clone())
            .collect()
    }

    fn show(&mut self, positions: Vec<usize>) {
        self.shown.extend(positions.iter().copied());
        let images = self.ids(&positions);
        self.events.push(SessionEvent::Collage {
            round: self.collages.len(),
            images,
        });
        self.collages.push(positions);
    }

    fn is_relevant(&self, position: usize) -> Option<bool> {
        self.target.as_ref().map(|t| t.contains(&position))
    }

    fn score(&self, event: &FeedbackEvent, collage: &[String]) -> Vec<f64> {
        let modality = self.config.modality;
        if modality == Modality::Random {
            return vec![self.predictor.default_unviewed; collage.len()];
        }
        if modality == Modality::Full {
            return collage
                .iter()
                .map(|id| event.labels.get(id).copied().unwrap_or(0.0))
                .collect();
        }
        let clicks: BTreeSet<&String> = event.clicks.iter().collect();
        let gaze = self.gaze_features(event, collage);
        collage
            .iter()
            .map(|id| {
                let psi = gaze.get(id).copied().unwrap_or_default();
                let clicked = modality.uses_clicks() && clicks.contains(id);
                self.predictor.predict(&psi, clicked)
            })
            .collect()
    }

    fn gaze_features(&self, event: &FeedbackEvent, collage: &[String]) -> BTreeMap<String, EyeFeatureVector> {
        if !self.config.modality.uses_gaze() {
            return BTreeMap::new();
        }
        let mut out = if event.gaze.is_empty() {
            BTreeMap::new()
        } else {
            let layout = CollageLayout::grid(collage, DEFAULT_SCREEN);
            collage_eye_features(&event.gaze, &layout, FixationParams::default())
        };
        out.extend(event.eye_features.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }

    /// Takes the feedback for the current round. Returns the next collage,
    /// or the summary once the last round is answered.
    pub fn submit_feedback(&mut self, event: FeedbackEvent) -> Result<Advance> {
        if self.finished {
            return Err(Error::SessionFinished);
        }
        if event.round != self.round {
            return Err(Error::RoundMismatch {
                expected: self.round,
                got: event.round,
            });
        }
        let collage = self.current_collage();
        let on_screen: BTreeSet<&String> = collage.iter().collect();
        if let Some(id) = event.referenced().find(|id| !on_screen.contains(id)) {
            return Err(if self.context.corpus.position(id).is_some() {
                Error::NotShown(id.clone())
            } else {
                Error::UnknownImage(id.clone())
            });
        }
        for s in &event.gaze {
            if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite()) {
                return Err(Error::InvalidConfig("gaze samples must be finite".into()));
            }
        }

        let scores = self.score(&event, &collage);
        let gaze = self.gaze_features(&event, &collage);
        let positions = self.collages[self.round].clone();
        self.events.push(SessionEvent::Feedback { event: event.clone() });
        self.events.push(SessionEvent::Scores {
            round: self.round,
            scores: scores.clone(),
        });
        self.seen.extend(&positions);
        self.r.extend(&scores);
        self.psi
            .extend(collage.iter().map(|id| gaze.get(id).copied().unwrap_or_default()));

        let relevant = self
            .target
            .as_ref()
            .map(|t| positions.iter().filter(|p| t.contains(p)).count());
        let mut record = RoundRecord {
            round: self.round,
            collage,
            scores,
            eta: self.eta.clone(),
            mkl_iterations: 0,
            mkl_objective: 0.0,
            tensor: None,
            selection: Vec::new(),
            relevant,
        };

        let last = self.round + 1 == self.config.rounds;
        let pool: Vec<usize> = (0..self.context.corpus.len())
            .filter(|p| !self.shown.contains(p))
            .collect();
        if last || pool.is_empty() {
            if self.config.modality != Modality::Random {
                self.learn_metric(&mut record)?;
            }
            self.records.push(record);
            self.round += 1;
            self.finished = true;
            self.events.push(SessionEvent::Finished);
            return Ok(Advance::Summary(Box::new(self.summary())));
        }

        let seed = round_seed(self.config.seed, self.round + 1);
        let selection = if self.config.modality == Modality::Random {
            random_selection(&pool, self.config.collage_size, seed)
        } else {
            let embedding = self.learn_metric(&mut record)?;
            let kernel: Box<dyn KernelSource + '_> = match embedding {
                Some(e) => Box::new(LinearKernel::new(e)),
                None => Box::new(self.context.kernels.combined(&self.eta)),
            };
            let gram = kernel.gram(&self.seen);
            let state = LinRelState::new(
                self.seen.clone(),
                &gram,
                &self.r,
                LinRelParams {
                    mu: self.config.mu,
                    c: self.config.c,
                },
            )?;
            let request = CollageRequest {
                pool,
                size: self.config.collage_size,
                explore_count: self.config.explore_count,
            };
            select_collage(&request, Some((&state, kernel.as_ref())), seed)?
        };
        let Selection { positions, scores, .. } = selection;
        record.selection = scores;
        self.records.push(record);
        self.round += 1;
        self.show(positions);
        Ok(Advance::Collage(self.current_collage()))
    }

    /// Solves MKL on everything seen so far and, when enabled, the tensor
    /// stage. Returns the projected features when the tensor stage applied.
    fn learn_metric(&mut self, record: &mut RoundRecord) -> Result<Option<DMatrix<f64>>> {
        let kernels = self.context.kernels.as_ref();
        let bundle = KernelBundle::new(kernels.names().to_vec(), kernels.space_grams(&self.seen))?;
        let params = MklParams {
            lambda: self.config.lambda,
            mu: self.config.mu,
            ..Default::default()
        };
        let model = solve_mkl(&bundle, &self.r, &params, Some(&self.eta))?;
        self.eta = model.eta.clone();
        record.eta = model.eta.clone();
        record.mkl_iterations = model.objective_trace.len();
        record.mkl_objective = model.objective();

        if self.config.tensor.enabled {
            match self.tensor_stage(&bundle) {
                Ok((model, embedding)) => {
                    record.tensor = Some(TensorRound {
                        applied: true,
                        rank: model.rank(),
                        singular_values: model.decomposition.singular_values.clone(),
                        note: None,
                    });
                    return Ok(Some(embedding));
                }
                Err(e) => {
                    record.tensor = Some(TensorRound {
                        applied: false,
                        rank: 0,
                        singular_values: Vec::new(),
                        note: Some(e.to_string()),
                    });
                }
            }
        }
        Ok(None)
    }

    /// Trains the tensor model on the seen images and returns it with the
    /// projected features of every corpus image.
    fn tensor_stage(&self, bundle: &KernelBundle) -> Result<(TensorModel, DMatrix<f64>)> {
        if !self.config.modality.uses_gaze() {
            return Err(Error::InsufficientData("modality carries no gaze".into()));
        }
        let k_phi = bundle.combined(&self.eta);
        let rows: Vec<Vec<f64>> = self
            .psi
            .iter()
            .map(|psi| {
                if psi.viewed {
                    self.predictor.standardizer.transform(&psi.values)
                } else {
                    vec![0.0; psi.values.len()]
                }
            })
            .collect();
        let t = rows.len();
        let dim = rows.first().map_or(0, |r| r.len());
        let mut psi = DMatrix::from_fn(t, dim, |i, j| rows[i][j]);
        for mut row in psi.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
        let k_psi = &psi * psi.transpose();
        let k_tensor = tensor_kernel(&k_phi, &k_psi)?;
        let svm = SvmParams {
            c: self.config.tensor.svm_c,
            ..Default::default()
        };
        let gamma = train_tensor_svm(&k_tensor, &self.r, &svm)?;
        let rank = self.config.tensor.rank.min(t);
        let decomposition = decompose(&gamma, &k_phi, &k_psi, rank)?;
        if decomposition.rank() == 0 {
            return Err(Error::DegenerateInput("tensor decomposition has rank 0".into()));
        }
        let model = TensorModel {
            gamma,
            decomposition,
            seen: self.seen.clone(),
        };
        let all: Vec<usize> = (0..self.context.corpus.len()).collect();
        let cross = self.context.kernels.combined_block(&self.eta, &all, &self.seen);
        let embedding = model.project_block(&cross);
        Ok((model, embedding))
    }

    pub fn summary(&self) -> SessionSummary {
        let completed = self.records.len();
        let answered: Vec<usize> = self.collages[..completed].iter().flatten().copied().collect();
        let (basis, hits): (PrecisionBasis, Vec<bool>) = match &self.target {
            Some(t) => (PrecisionBasis::Labels, answered.iter().map(|p| t.contains(p)).collect()),
            None => (
                PrecisionBasis::Feedback,
                self.r[..answered.len()].iter().map(|&s| s >= JUDGED_RELEVANT).collect(),
            ),
        };
        let mut precision_curve = Vec::with_capacity(completed);
        let mut found = 0usize;
        let mut shown = 0usize;
        for c in &self.collages[..completed] {
            found += hits[shown..shown + c.len()].iter().filter(|&&h| h).count();
            shown += c.len();
            precision_curve.push(found as f64 / shown as f64);
        }
        let labelled = self.target.is_some();
        let relevant_per_round = labelled.then(|| self.records.iter().filter_map(|r| r.relevant).collect());
        let average_precision = labelled.then(|| {
            let all: Vec<bool> = self
                .collages
                .iter()
                .flatten()
                .map(|&p| self.is_relevant(p).unwrap_or(false))
                .collect();
            average_precision(&all[..answered.len()])
        });
        SessionSummary {
            session: self.id.clone(),
            config: self.config.clone(),
            finished: self.finished,
            rounds_completed: completed,
            collages: self.collages.iter().map(|c| self.ids(c)).collect(),
            feature_names: self.context.kernels.names().to_vec(),
            final_eta: self.eta.clone(),
            rounds: self.records.clone(),
            precision_basis: basis,
            precision_curve,
            relevant_per_round,
            average_precision,
        }
    }
}
