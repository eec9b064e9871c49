//! Live sessions, their logs and the corpora they search.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use pinview_core::corpus::Corpus;
use pinview_core::gaze::{CollageLayout, Rect, DEFAULT_SCREEN};
use pinview_core::session::{
    Advance, FeedbackEvent, PrecisionBasis, SearchContext, Session, SessionConfig, SessionEvent, SessionSummary,
    JUDGED_RELEVANT,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::store::{append_jsonl, open_append, read_events, read_jsonl, KeyRecord, StoreLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub id: String,
    pub url: String,
    pub cell: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session: String,
    pub config: SessionConfig,
    pub round: usize,
    pub finished: bool,
    /// Unix seconds after which the session no longer accepts requests.
    pub expires_at: u64,
    pub screen: (f64, f64),
    pub collage: Vec<ImageDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeedbackResponse {
    Collage { round: usize, collage: Vec<ImageDescriptor> },
    Finished { summary: Box<SessionSummary> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub name: String,
    pub images: usize,
    pub features: Vec<FeatureInfo>,
    /// Category sizes; per-image membership is never exposed.
    pub categories: BTreeMap<String, usize>,
}

struct SessionEntry {
    session: Session,
    log: File,
    log_path: PathBuf,
    keys: File,
    keys_path: PathBuf,
    idempotency: HashMap<String, usize>,
    last_active: SystemTime,
}

pub struct AppState {
    layout: StoreLayout,
    ttl: Duration,
    corpora: BTreeMap<String, SearchContext>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    seeds: Mutex<StdRng>,
}

fn unix_secs(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn lock_poisoned() -> ServiceError {
    ServiceError::Internal("session lock poisoned".into())
}

/// 128 random bits from the operating system generator, as hex.
fn new_session_id() -> String {
    let bits: u128 = rand::rng().random();
    format!("{bits:032x}")
}

pub fn asset_url(corpus: &str, image: &str) -> String {
    format!("/assets/{image}?corpus={corpus}")
}

fn descriptors(corpus: &str, ids: &[String]) -> Vec<ImageDescriptor> {
    CollageLayout::grid(ids, DEFAULT_SCREEN)
        .cells
        .into_iter()
        .map(|c| ImageDescriptor {
            url: asset_url(corpus, &c.image),
            id: c.image,
            cell: c.rect,
        })
        .collect()
}

/// Summary as shown to clients. While a search runs, everything derived from
/// category labels is withheld and precision is reported from feedback.
pub fn public_summary(session: &Session) -> SessionSummary {
    let mut s = session.summary();
    if s.finished || s.precision_basis == PrecisionBasis::Feedback {
        return s;
    }
    s.relevant_per_round = None;
    s.average_precision = None;
    for r in &mut s.rounds {
        r.relevant = None;
    }
    s.precision_basis = PrecisionBasis::Feedback;
    let mut found = 0usize;
    let mut shown = 0usize;
    s.precision_curve = s
        .rounds
        .iter()
        .map(|r| {
            found += r.scores.iter().filter(|&&x| x >= JUDGED_RELEVANT).count();
            shown += r.scores.len();
            found as f64 / shown.max(1) as f64
        })
        .collect();
    s
}

impl SessionEntry {
    fn view(&self, ttl: Duration) -> SessionView {
        let s = &self.session;
        SessionView {
            session: s.id().to_string(),
            config: s.config().clone(),
            round: s.round(),
            finished: s.is_finished(),
            expires_at: unix_secs(self.last_active + ttl),
            screen: DEFAULT_SCREEN,
            collage: if s.is_finished() { Vec::new() } else { descriptors(&s.config().corpus, &s.current_collage()) },
        }
    }

    /// What answering `round` returned: the next collage, or the summary
    /// once the last round is in.
    fn response_for(&self, round: usize) -> FeedbackResponse {
        let s = &self.session;
        match s.collage_ids(round + 1) {
            Some(ids) => FeedbackResponse::Collage {
                round: round + 1,
                collage: descriptors(&s.config().corpus, &ids),
            },
            None => FeedbackResponse::Finished {
                summary: Box::new(public_summary(s)),
            },
        }
    }

    fn logged_feedback(&self, round: usize) -> Option<&FeedbackEvent> {
        self.session.events().iter().find_map(|e| match e {
            SessionEvent::Feedback { event } if event.round == round => Some(event),
            _ => None,
        })
    }
}

impl AppState {
    /// Loads every corpus and replays every session log under the data
    /// directory.
    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let layout = StoreLayout::new(&config.data_dir);
        layout.create_dirs()?;
        let mut corpora = BTreeMap::new();
        for (name, corpus) in layout.load_corpora()? {
            let predictor = layout.load_predictor(&name)?;
            corpora.insert(name, SearchContext::new(corpus, predictor)?);
        }
        let seeds = match config.seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_os_rng(),
        };
        let state = AppState {
            layout,
            ttl: Duration::from_secs(config.session_ttl_secs),
            corpora,
            sessions: RwLock::new(HashMap::new()),
            seeds: Mutex::new(seeds),
        };
        state.replay_logs()?;
        Ok(state)
    }

    fn replay_logs(&self) -> Result<(), ServiceError> {
        let mut sessions = self.sessions.write().map_err(|_| lock_poisoned())?;
        for id in self.layout.session_ids()? {
            let log_path = self.layout.session_log(&id);
            let events = read_events(&log_path)?;
            let Some(SessionEvent::Started { config, .. }) = events.first() else {
                log::warn!("{}: empty or headless log; skipped", log_path.display());
                continue;
            };
            let Some(context) = self.corpora.get(&config.corpus) else {
                log::warn!("session {id}: corpus `{}` is not loaded; skipped", config.corpus);
                continue;
            };
            let session = match Session::replay(&events, context.clone()) {
                Ok(s) => s,
                Err(e) => {
                    log::error!("session {id}: replay failed ({e}); skipped");
                    continue;
                }
            };
            let keys_path = self.layout.session_keys(&id);
            let mut idempotency = HashMap::new();
            if keys_path.is_file() {
                for k in read_jsonl::<KeyRecord>(&keys_path)? {
                    idempotency.insert(k.key, k.round);
                }
            }
            let last_active = std::fs::metadata(&log_path)
                .and_then(|m| m.modified())
                .unwrap_or_else(|_| SystemTime::now());
            let entry = SessionEntry {
                session,
                log: open_append(&log_path)?,
                log_path,
                keys: open_append(&keys_path)?,
                keys_path,
                idempotency,
                last_active,
            };
            sessions.insert(id, Arc::new(Mutex::new(entry)));
        }
        log::info!("replayed {} session logs", sessions.len());
        Ok(())
    }

    pub fn layout(&self) -> &StoreLayout {
        &self.layout
    }

    pub fn corpus(&self, name: &str) -> Option<&Corpus> {
        self.corpora.get(name).map(|c| c.corpus.as_ref())
    }

    /// The only loaded corpus, if there is exactly one.
    pub fn sole_corpus(&self) -> Option<&Corpus> {
        let mut it = self.corpora.values();
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c.corpus.as_ref()),
            _ => None,
        }
    }

    pub fn corpora(&self) -> Vec<CorpusInfo> {
        self.corpora
            .values()
            .map(|ctx| {
                let c = &ctx.corpus;
                CorpusInfo {
                    name: c.name().to_string(),
                    images: c.len(),
                    features: c.specs().iter().map(|s| FeatureInfo { name: s.name.clone(), dim: s.dim }).collect(),
                    categories: c.categories().iter().map(|(k, v)| (k.clone(), v.len())).collect(),
                }
            })
            .collect()
    }

    /// Starts a session. `config.seed` is replaced by a fresh draw when
    /// `seed_given` is false.
    pub fn create_session(&self, mut config: SessionConfig, seed_given: bool) -> Result<SessionView, ServiceError> {
        let context = self
            .corpora
            .get(&config.corpus)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown corpus `{}`", config.corpus)))?;
        if !seed_given {
            config.seed = self.seeds.lock().map_err(|_| lock_poisoned())?.random();
        }
        let id = new_session_id();
        let session = Session::start(id.clone(), config, context.clone())?;
        let log_path = self.layout.session_log(&id);
        let keys_path = self.layout.session_keys(&id);
        let mut log = open_append(&log_path)?;
        append_jsonl(&mut log, &log_path, session.events())?;
        let entry = SessionEntry {
            session,
            log,
            log_path,
            keys: open_append(&keys_path)?,
            keys_path,
            idempotency: HashMap::new(),
            last_active: SystemTime::now(),
        };
        let view = entry.view(self.ttl);
        self.sessions
            .write()
            .map_err(|_| lock_poisoned())?
            .insert(id, Arc::new(Mutex::new(entry)));
        Ok(view)
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ServiceError> {
        let entry = self
            .sessions
            .read()
            .map_err(|_| lock_poisoned())?
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session `{id}`")))?;
        Ok(entry)
    }

    fn live_entry(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ServiceError> {
        let entry = self.entry(id)?;
        let expired = {
            let e = entry.lock().map_err(|_| lock_poisoned())?;
            e.last_active + self.ttl < SystemTime::now()
        };
        if expired {
            return Err(ServiceError::NotFound(format!("session `{id}` has expired")));
        }
        Ok(entry)
    }

    pub fn session_view(&self, id: &str) -> Result<SessionView, ServiceError> {
        let entry = self.live_entry(id)?;
        let e = entry.lock().map_err(|_| lock_poisoned())?;
        Ok(e.view(self.ttl))
    }

    /// Applies one round of feedback. A repeated idempotency key returns the
    /// original response without advancing the session again.
    pub fn submit_feedback(
        &self,
        id: &str,
        event: FeedbackEvent,
        key: Option<String>,
    ) -> Result<FeedbackResponse, ServiceError> {
        let entry = self.live_entry(id)?;
        let mut e = entry.lock().map_err(|_| lock_poisoned())?;
        if let Some(k) = &key {
            if let Some(&round) = e.idempotency.get(k) {
                if e.logged_feedback(round) != Some(&event) {
                    return Err(ServiceError::Unprocessable(format!(
                        "idempotency key `{k}` was used for a different request"
                    )));
                }
                return Ok(e.response_for(round));
            }
        }
        let round = event.round;
        // Advance a copy so a failed log write leaves the live state intact.
        let mut next = e.session.clone();
        let before = next.events().len();
        let advance = next.submit_feedback(event)?;
        let SessionEntry { log, log_path, .. } = &mut *e;
        append_jsonl(log, log_path, &next.events()[before..])?;
        e.session = next;
        e.last_active = SystemTime::now();
        if let Some(k) = key {
            let SessionEntry { keys, keys_path, .. } = &mut *e;
            append_jsonl(keys, keys_path, &[KeyRecord { key: k.clone(), round }])?;
            e.idempotency.insert(k, round);
        }
        Ok(match advance {
            Advance::Collage(_) => e.response_for(round),
            Advance::Summary(_) => FeedbackResponse::Finished {
                summary: Box::new(public_summary(&e.session)),
            },
        })
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        let entry = self.entry(id)?;
        let e = entry.lock().map_err(|_| lock_poisoned())?;
        Ok(public_summary(&e.session))
    }

    /// Full internal summaries of every session, for recovery checks.
    pub fn all_summaries(&self) -> Result<BTreeMap<String, SessionSummary>, ServiceError> {
        let sessions = self.sessions.read().map_err(|_| lock_poisoned())?;
        let mut out = BTreeMap::new();
        for (id, entry) in sessions.iter() {
            let e = entry.lock().map_err(|_| lock_poisoned())?;
            out.insert(id.clone(), e.session.summary());
        }
        Ok(out)
    }
}
