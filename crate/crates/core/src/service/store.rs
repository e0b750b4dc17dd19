use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::agency::{parse_log, AgencyError, Clock, Engine, Journal, LogEntry, ReplayError, Supervisor};

const EVENT_BUFFER: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Meta {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("session `{session}`: {source}")]
    Replay {
        session: String,
        #[source]
        source: ReplayError,
    },
    #[error("session `{session}`: {source}")]
    Resume {
        session: String,
        #[source]
        source: AgencyError,
    },
    #[error("session `{session}` uses pack `{pack}`, which is not installed")]
    MissingPack { session: String, pack: String },
}

/// Sidecar file naming the pack of a journaled session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SessionMeta {
    id: String,
    pack: String,
}

pub struct Session {
    pub id: String,
    pub pack: String,
    pub supervisor: Supervisor,
    pub events: broadcast::Sender<LogEntry>,
}

impl Session {
    /// Forwards entries produced by a command to stream subscribers.
    pub fn publish(&self, entries: &[LogEntry]) {
        for entry in entries {
            let _ = self.events.send(entry.clone());
        }
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// Live sessions, optionally journaled to `<data>/sessions/<id>.jsonl`.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
    next: AtomicU64,
    wall_clock: bool,
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn journal_to(path: &Path) -> Result<Journal, StoreError> {
    let mut file: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_error(path))?;
    Ok(Box::new(move |entry: &LogEntry| {
        let mut line = entry.to_line();
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()
    }))
}

impl SessionStore {
    pub fn in_memory(wall_clock: bool) -> Self {
        SessionStore {
            dir: None,
            sessions: RwLock::new(BTreeMap::new()),
            next: AtomicU64::new(1),
            wall_clock,
        }
    }

    /// Opens a journal directory and resumes every session found in it.
    pub fn open(
        data: impl AsRef<Path>,
        engines: &BTreeMap<String, Engine>,
        wall_clock: bool,
    ) -> Result<Self, StoreError> {
        let dir = data.as_ref().join("sessions");
        fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        let mut metas = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_error(&dir))? {
            let path = entry.map_err(io_error(&dir))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).map_err(io_error(&path))?;
                let meta: SessionMeta = serde_json::from_str(&text).map_err(|source| StoreError::Meta {
                    path: path.clone(),
                    source,
                })?;
                metas.push(meta);
            }
        }
        let mut sessions = BTreeMap::new();
        let mut highest = 0;
        for meta in metas {
            let engine = engines.get(&meta.pack).ok_or_else(|| StoreError::MissingPack {
                session: meta.id.clone(),
                pack: meta.pack.clone(),
            })?;
            let log_path = dir.join(format!("{}.jsonl", meta.id));
            let text = match fs::read_to_string(&log_path) {
                Ok(text) => text,
                Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
                Err(e) => return Err(io_error(&log_path)(e)),
            };
            let log = parse_log(&text).map_err(|source| StoreError::Replay {
                session: meta.id.clone(),
                source,
            })?;
            let supervisor = Supervisor::resume(engine.clone(), engine.standard_agents(), log, wall_clock)
                .map_err(|source| StoreError::Resume {
                    session: meta.id.clone(),
                    source,
                })?
                .with_journal(journal_to(&log_path)?);
            highest = highest.max(session_number(&meta.id).unwrap_or(0));
            let (events, _) = broadcast::channel(EVENT_BUFFER);
            tracing::info!(session = %meta.id, entries = supervisor.log().len(), "resumed session");
            sessions.insert(
                meta.id.clone(),
                Arc::new(Mutex::new(Session {
                    id: meta.id,
                    pack: meta.pack,
                    supervisor,
                    events,
                })),
            );
        }
        Ok(SessionStore {
            dir: Some(dir),
            sessions: RwLock::new(sessions),
            next: AtomicU64::new(highest + 1),
            wall_clock,
        })
    }

    /// Registers a fresh, not yet started session.
    pub fn create(&self, engine: &Engine) -> Result<SessionHandle, StoreError> {
        let id = format!("session-{:06}", self.next.fetch_add(1, Ordering::SeqCst));
        let pack = engine.pack.id().to_string();
        let mut supervisor = engine.supervisor();
        if self.wall_clock {
            supervisor = supervisor.with_clock(Clock::wall());
        }
        if let Some(dir) = &self.dir {
            let meta_path = dir.join(format!("{id}.json"));
            let meta = SessionMeta {
                id: id.clone(),
                pack: pack.clone(),
            };
            fs::write(&meta_path, serde_json::to_string(&meta).expect("meta serializes"))
                .map_err(io_error(&meta_path))?;
            supervisor = supervisor.with_journal(journal_to(&dir.join(format!("{id}.jsonl")))?);
        }
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let handle = Arc::new(Mutex::new(Session {
            id: id.clone(),
            pack,
            supervisor,
            events,
        }));
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, handle.clone());
        Ok(handle)
    }

    /// Drops a session whose creation failed, along with its files.
    pub fn discard(&self, id: &str) {
        self.sessions.write().unwrap_or_else(|p| p.into_inner()).remove(id);
        if let Some(dir) = &self.dir {
            let _ = fs::remove_file(dir.join(format!("{id}.json")));
            let _ = fs::remove_file(dir.join(format!("{id}.jsonl")));
        }
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    pub fn handles(&self) -> Vec<SessionHandle> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect()
    }
}

fn session_number(id: &str) -> Option<u64> {
    id.strip_prefix("session-")?.parse().ok()
}
