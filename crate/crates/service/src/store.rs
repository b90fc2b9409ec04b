//! Session registry with per-session locking and optional on-disk persistence.
//!
//! Each session owns `<id>.events.jsonl`, an append-only log, and
//! `<id>.snapshot.json`, rewritten atomically every few events and when the
//! session closes. The log is authoritative; snapshots are checked against it
//! on startup.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use log::{info, warn};
use survey_core::model_file::ModelFile;

use crate::error::{Result, ServiceError};
use crate::session::{CreateSession, Event, NextQuestion, Prediction, Progress, Session, SessionStatus};

pub const SNAPSHOT_EVERY: usize = 5;

/// A submitted answer: a value or a skip.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitResponse {
    pub question_id: String,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub skip: bool,
}

pub struct SessionStore {
    model: Arc<ModelFile>,
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

fn events_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.events.jsonl"))
}

fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.snapshot.json"))
}

pub fn serialize_session(session: &Session) -> Result<String> {
    Ok(serde_json::to_string(session)?)
}

/// Reads a session's event log.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&line)
                .map_err(|e| ServiceError::CorruptLog(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(events)
}

impl SessionStore {
    /// In-memory store.
    pub fn new(model: ModelFile) -> Self {
        Self { model: Arc::new(model), dir: None, sessions: RwLock::new(HashMap::new()) }
    }

    /// Store persisted under `dir`; existing sessions are replayed from their logs.
    pub fn open(model: ModelFile, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let store = Self { model: Arc::new(model), dir: Some(dir.clone()), sessions: RwLock::new(HashMap::new()) };
        let mut logs: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".events.jsonl"))
            .collect();
        logs.sort();
        let mut map = store.sessions.write().expect("session map poisoned");
        for path in logs {
            let session = Session::replay(&read_events(&path)?, &store.model)?;
            let snap = snapshot_path(&dir, &session.id);
            if snap.exists() {
                let stored = fs::read_to_string(&snap)?;
                let stored_events = serde_json::from_str::<Session>(&stored).map(|s| s.events).unwrap_or(0);
                if stored_events == session.events && stored != serialize_session(&session)? {
                    warn!("snapshot of session {} differs from its replayed log", session.id);
                }
            }
            map.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        info!("restored {} sessions from {}", map.len(), dir.display());
        drop(map);
        Ok(store)
    }

    pub fn model(&self) -> &ModelFile {
        &self.model
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn persist(&self, session: &Session, event: &Event) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut log = OpenOptions::new().create(true).append(true).open(events_path(dir, &session.id))?;
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        log.write_all(line.as_bytes())?;
        log.sync_data()?;
        if session.events.is_multiple_of(SNAPSHOT_EVERY) || session.status != SessionStatus::Active {
            let path = snapshot_path(dir, &session.id);
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serialize_session(session)?)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(())
    }

    /// Applies `event` to a copy, persists it, then commits the copy.
    fn commit(&self, current: &mut Session, event: Event) -> Result<()> {
        let mut next = current.clone();
        next.apply(&event, &self.model)?;
        self.persist(&next, &event)?;
        *current = next;
        Ok(())
    }

    pub fn create(&self, request: &CreateSession) -> Result<Session> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let event = Session::creation_event(id.clone(), request, &self.model)?;
        let session = Session::create(&event, &self.model)?;
        self.persist(&session, &event)?;
        self.sessions.write().expect("session map poisoned").insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Session> {
        Ok(self.lookup(id)?.lock().expect("session poisoned").clone())
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// The pending question, choosing and recording one if none is pending.
    pub fn next_question(&self, id: &str) -> Result<NextQuestion> {
        let handle = self.lookup(id)?;
        let mut session = handle.lock().expect("session poisoned");
        if session.status != SessionStatus::Active {
            return Ok(NextQuestion { status: session.status, question: None });
        }
        if session.pending.is_none() {
            let j = session.choose_next(&self.model)?;
            let question_id = self.model.questions[j].id.clone();
            self.commit(&mut session, Event::Asked { question_id })?;
        }
        let pending = session.pending.clone().expect("pending was just set");
        Ok(NextQuestion { status: session.status, question: Some(session.question_view(&self.model, &pending)?) })
    }

    pub fn submit(&self, id: &str, response: &SubmitResponse) -> Result<Progress> {
        let event = match (response.value, response.skip) {
            (Some(value), false) => Event::Answered { question_id: response.question_id.clone(), value },
            (None, true) => Event::Skipped { question_id: response.question_id.clone() },
            _ => return Err(ServiceError::InvalidValue("give exactly one of a value or a skip".into())),
        };
        let handle = self.lookup(id)?;
        let mut session = handle.lock().expect("session poisoned");
        self.commit(&mut session, event)?;
        Ok(session.progress())
    }

    pub fn end(&self, id: &str, abandoned: bool) -> Result<Progress> {
        let handle = self.lookup(id)?;
        let mut session = handle.lock().expect("session poisoned");
        self.commit(&mut session, Event::Ended { abandoned })?;
        Ok(session.progress())
    }

    pub fn predictions(&self, id: &str) -> Result<Vec<Prediction>> {
        let handle = self.lookup(id)?;
        let session = handle.lock().expect("session poisoned");
        session.predictions(&self.model)
    }

    /// Path of a session's event log when persisted.
    pub fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_deref().map(|d| events_path(d, id))
    }
}
