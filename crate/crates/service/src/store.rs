//! On-disk layout: saved corpora, trained predictors and append-only
//! session event logs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use pinview_core::corpus::Corpus;
use pinview_core::relevance::RelevancePredictor;
use pinview_core::session::SessionEvent;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const DEFAULT_PREDICTOR: &str = "default";

#[derive(Debug, Clone)]
pub struct StoreLayout {
    root: PathBuf,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Io(path.to_path_buf(), e)
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StoreLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpora_dir(&self) -> PathBuf {
        self.root.join("corpora")
    }

    pub fn corpus_dir(&self, name: &str) -> PathBuf {
        self.corpora_dir().join(name)
    }

    pub fn predictors_dir(&self) -> PathBuf {
        self.root.join("predictors")
    }

    pub fn predictor_path(&self, name: &str) -> PathBuf {
        self.predictors_dir().join(format!("{name}.json"))
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn session_log(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(format!("{id}.jsonl"))
    }

    pub fn session_keys(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(format!("{id}.keys.jsonl"))
    }

    pub fn create_dirs(&self) -> Result<(), ServiceError> {
        for dir in [self.corpora_dir(), self.predictors_dir(), self.sessions_dir()] {
            fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        Ok(())
    }

    /// Every saved corpus, keyed by its manifest name. Unreadable
    /// directories are skipped with a warning.
    pub fn load_corpora(&self) -> Result<BTreeMap<String, Corpus>, ServiceError> {
        let dir = self.corpora_dir();
        let mut out = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for path in entries {
            match Corpus::load(&path) {
                Ok(corpus) => {
                    if out.contains_key(corpus.name()) {
                        log::warn!("{}: duplicate corpus name `{}`; ignored", path.display(), corpus.name());
                    } else {
                        out.insert(corpus.name().to_string(), corpus);
                    }
                }
                Err(e) => log::warn!("{}: not a corpus ({e}); ignored", path.display()),
            }
        }
        Ok(out)
    }

    /// Predictor for `corpus`: its own file, else the default one, else a
    /// neutral model.
    pub fn load_predictor(&self, corpus: &str) -> Result<RelevancePredictor, ServiceError> {
        for name in [corpus, DEFAULT_PREDICTOR] {
            let path = self.predictor_path(name);
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(io(&path))?;
                return Ok(RelevancePredictor::from_json(&text)?);
            }
        }
        log::warn!("no trained predictor for corpus `{corpus}`; gaze feedback will score neutrally");
        Ok(RelevancePredictor::neutral())
    }

    /// Ids of all sessions with an event log, sorted.
    pub fn session_ids(&self) -> Result<Vec<String>, ServiceError> {
        let dir = self.sessions_dir();
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name.strip_suffix(".jsonl")?;
                (!id.ends_with(".keys")).then(|| id.to_string())
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// Reads a JSON-lines file. A torn final line, left by a crash mid-append,
/// is cut off the file; a bad line anywhere else is an error.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    let mut good_len = 0u64;
    let mut lines = BufReader::new(file).lines().peekable();
    let mut offset = 0u64;
    while let Some(line) = lines.next() {
        let line = line.map_err(io(path))?;
        let len = line.len() as u64 + 1;
        if line.trim().is_empty() {
            offset += len;
            good_len = offset;
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => {
                out.push(v);
                offset += len;
                good_len = offset;
            }
            Err(e) if lines.peek().is_none() => {
                log::warn!("{}: dropping torn final line ({e})", path.display());
                let file = OpenOptions::new().write(true).open(path).map_err(io(path))?;
                file.set_len(good_len).map_err(io(path))?;
                break;
            }
            Err(e) => {
                return Err(ServiceError::Internal(format!("{}: bad log line: {e}", path.display())));
            }
        }
    }
    Ok(out)
}

/// Appends records as JSON lines and syncs them to disk.
pub fn append_jsonl<T: Serialize>(file: &mut File, path: &Path, records: &[T]) -> Result<(), ServiceError> {
    if records.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| ServiceError::Internal(e.to_string()))?;
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(io(path))?;
    file.sync_data().map_err(io(path))
}

pub fn open_append(path: &Path) -> Result<File, ServiceError> {
    OpenOptions::new().create(true).append(true).open(path).map_err(io(path))
}

pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, ServiceError> {
    read_jsonl(path)
}

/// An idempotency key and the round whose feedback it carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub key: String,
    pub round: usize,
}
