//! Per-session state and its append-only event log.
//!
//! Every mutation is written as one JSON line before it is applied in
//! memory, so a log file is a complete, replayable history. Opening a log
//! re-applies each feedback entry and checks that the stored weights come out
//! bit-identical.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use recombot_core::{
    apply_feedback, FeedbackEvent, GeoPoint, LearningRate, PreferenceCategory, Query,
    RankedRecommendation, WeightVector,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session log {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("session log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("session {0} already exists")]
    Duplicate(String),
    #[error("refusing to persist invalid weights: {0}")]
    InvalidWeights(String),
}

/// A station in a past result list, with the categories its rationale named.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRef {
    pub station_id: String,
    pub top_categories: [PreferenceCategory; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: Query,
    /// Set when the rule-based fallback parsed the request.
    pub degraded: bool,
    pub k: usize,
    pub radius_km: f64,
    pub session_weights: WeightVector,
    pub effective_weights: WeightVector,
    pub results: Vec<ResultRef>,
    /// SHA-256 of the serialized result list.
    pub digest: String,
    pub at_ms: i64,
}

/// A feedback request as it arrived on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub request: FeedbackRequest,
    pub event: FeedbackEvent,
    pub eta: LearningRate,
    pub weights_after: WeightVector,
    pub reset: bool,
    pub at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEntry {
    Query(QueryRecord),
    Feedback(FeedbackRecord),
}

impl HistoryEntry {
    pub fn at_ms(&self) -> i64 {
        match self {
            HistoryEntry::Query(q) => q.at_ms,
            HistoryEntry::Feedback(f) => f.at_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub id: String,
    pub origin: GeoPoint,
    pub weights: WeightVector,
    pub created_ms: i64,
    pub updated_ms: i64,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    pub fn new(id: impl Into<String>, origin: GeoPoint, created_ms: i64) -> Self {
        Session {
            id: id.into(),
            origin,
            weights: WeightVector::uniform(),
            created_ms,
            updated_ms: created_ms,
            history: Vec::new(),
        }
    }

    /// Rationale categories from the most recent result list naming `station_id`.
    pub fn latest_rationale(&self, station_id: &str) -> Option<[PreferenceCategory; 2]> {
        self.history.iter().rev().find_map(|entry| match entry {
            HistoryEntry::Query(q) => q
                .results
                .iter()
                .find(|r| r.station_id == station_id)
                .map(|r| r.top_categories),
            HistoryEntry::Feedback(_) => None,
        })
    }

    /// Appends `entry`. Feedback entries must reproduce their stored weights
    /// from the current ones.
    pub fn apply(&mut self, entry: HistoryEntry) -> Result<(), String> {
        if let HistoryEntry::Feedback(f) = &entry {
            let outcome = apply_feedback(&self.weights, &f.event, f.eta);
            if !same_bits(&outcome.weights, &f.weights_after) || outcome.reset != f.reset {
                return Err(format!(
                    "feedback at {} does not reproduce its stored weights",
                    f.at_ms
                ));
            }
            self.weights = f.weights_after;
        }
        self.updated_ms = entry.at_ms();
        self.history.push(entry);
        Ok(())
    }
}

pub fn same_bits(a: &WeightVector, b: &WeightVector) -> bool {
    a.as_array()
        .iter()
        .zip(b.as_array())
        .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Hex SHA-256 of a result list's JSON encoding.
pub fn digest_results(results: &[RankedRecommendation]) -> String {
    let bytes = serde_json::to_vec(results).expect("recommendations serialize");
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(&bytes).iter() {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Created {
        session_id: String,
        origin: GeoPoint,
        at_ms: i64,
    },
    Appended {
        session_id: String,
        entry: Box<HistoryEntry>,
    },
}

type Clock = Box<dyn Fn() -> i64 + Send + Sync>;

fn system_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Sessions in memory, optionally backed by a JSONL log file.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    order: Mutex<Vec<String>>,
    log: Option<(PathBuf, Mutex<File>)>,
    clock: Clock,
    last_ms: Mutex<i64>,
}

impl std::fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionStore")
            .field("sessions", &self.sessions.read().len())
            .field("log", &self.log.as_ref().map(|(p, _)| p))
            .finish()
    }
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            sessions: RwLock::new(HashMap::new()),
            order: Mutex::new(Vec::new()),
            log: None,
            clock: Box::new(system_ms),
            last_ms: Mutex::new(i64::MIN),
        }
    }

    /// Loads `path` (creating it if absent) and appends to it from then on.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut store = SessionStore::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| StoreError::Corrupt {
                    line: i + 1,
                    message,
                };
                let event: LogEvent =
                    serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                store.replay_event(event).map_err(corrupt)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        store.log = Some((path, Mutex::new(file)));
        Ok(store)
    }

    /// Replaces the wall clock, for deterministic timestamps.
    pub fn with_clock(mut self, clock: impl Fn() -> i64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    /// Milliseconds since the epoch, strictly increasing across calls.
    pub fn now_ms(&self) -> i64 {
        let mut last = self.last_ms.lock();
        let now = (self.clock)().max(last.saturating_add(1));
        *last = now;
        now
    }

    fn observe(&self, at_ms: i64) {
        let mut last = self.last_ms.lock();
        *last = (*last).max(at_ms);
    }

    fn replay_event(&self, event: LogEvent) -> Result<(), String> {
        match event {
            LogEvent::Created {
                session_id,
                origin,
                at_ms,
            } => {
                self.observe(at_ms);
                self.insert(Session::new(session_id, origin, at_ms))
                    .map_err(|e| e.to_string())
            }
            LogEvent::Appended { session_id, entry } => {
                self.observe(entry.at_ms());
                let session = self
                    .get(&session_id)
                    .ok_or_else(|| format!("entry for unknown session {session_id}"))?;
                let mut session = session.lock();
                session.apply(*entry)
            }
        }
    }

    fn insert(&self, session: Session) -> Result<(), StoreError> {
        let mut sessions = self.sessions.write();
        if sessions.contains_key(&session.id) {
            return Err(StoreError::Duplicate(session.id));
        }
        self.order.lock().push(session.id.clone());
        sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        Ok(())
    }

    fn write(&self, event: &LogEvent) -> Result<(), StoreError> {
        if let Some((path, file)) = &self.log {
            let mut line = serde_json::to_string(event).expect("log events serialize");
            line.push('\n');
            let mut file = file.lock();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        Ok(())
    }

    /// Starts a session with a fresh URL-safe id.
    pub fn create(&self, origin: GeoPoint) -> Result<Session, StoreError> {
        self.create_with_id(uuid::Uuid::new_v4().simple().to_string(), origin)
    }

    pub fn create_with_id(&self, id: String, origin: GeoPoint) -> Result<Session, StoreError> {
        if self.sessions.read().contains_key(&id) {
            return Err(StoreError::Duplicate(id));
        }
        let at_ms = self.now_ms();
        self.write(&LogEvent::Created {
            session_id: id.clone(),
            origin,
            at_ms,
        })?;
        let session = Session::new(id, origin, at_ms);
        self.insert(session.clone())?;
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().get(id).cloned()
    }

    pub fn snapshot(&self, id: &str) -> Option<Session> {
        self.get(id).map(|s| s.lock().clone())
    }

    /// Session ids in creation order.
    pub fn ids(&self) -> Vec<String> {
        self.order.lock().clone()
    }

    /// Persists `entry` and then applies it to `session`.
    ///
    /// The caller holds the session's lock, which keeps one session's entries
    /// in arrival order both in memory and in the file.
    pub fn append(&self, session: &mut Session, entry: HistoryEntry) -> Result<(), StoreError> {
        if let HistoryEntry::Feedback(f) = &entry {
            WeightVector::validate(*f.weights_after.as_map())
                .map_err(|e| StoreError::InvalidWeights(e.to_string()))?;
        }
        let mut next = session.clone();
        next.apply(entry.clone())
            .map_err(StoreError::InvalidWeights)?;
        self.write(&LogEvent::Appended {
            session_id: session.id.clone(),
            entry: Box::new(entry),
        })?;
        *session = next;
        Ok(())
    }
}
