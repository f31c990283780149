use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use softrules::episode::Episode;
use softrules::rule::RuleKind;
use softrules::rulegen::RuleGenConfig;
use softrules::semantic::Embedder;
use softrules::session::{EditSession, RuleBook};
use softrules::sieve::SieveConfig;
use tokio::sync::{Mutex, RwLock};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Everything a request handler needs. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    pub inner: Arc<Inner>,
}

pub struct Inner {
    pub episodes: Arc<Vec<Episode>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    /// Defaults for evaluate requests that omit mode or threshold.
    pub defaults: SieveConfig,
    pub rule_kind: RuleKind,
    pub rulegen: RuleGenConfig,
    /// Each session sits behind its own lock, so mutations of one session
    /// are applied one at a time in arrival order.
    pub sessions: RwLock<BTreeMap<String, Arc<Mutex<EditSession>>>>,
    /// Server-wide counter bumped by every accepted mutation.
    pub version: AtomicU64,
    next_session: AtomicU64,
    pub persist_dir: Option<PathBuf>,
    snapshot: RuleBook,
}

impl AppState {
    pub fn new(episodes: Vec<Episode>, embedder: Option<Arc<dyn Embedder>>, defaults: SieveConfig) -> Self {
        Self::with_rules(episodes, embedder, defaults, RuleKind::Syntactic, RuleGenConfig::default())
    }

    pub fn with_rules(
        episodes: Vec<Episode>,
        embedder: Option<Arc<dyn Embedder>>,
        defaults: SieveConfig,
        rule_kind: RuleKind,
        rulegen: RuleGenConfig,
    ) -> Self {
        let snapshot = RuleBook::from_episodes(&episodes, rule_kind, &rulegen);
        Self {
            inner: Arc::new(Inner {
                episodes: Arc::new(episodes),
                embedder,
                defaults,
                rule_kind,
                rulegen,
                sessions: RwLock::new(BTreeMap::new()),
                version: AtomicU64::new(0),
                next_session: AtomicU64::new(0),
                persist_dir: None,
                snapshot,
            }),
        }
    }

    /// Persists sessions as JSON files in `dir` and loads any found there.
    pub fn persist_to(mut self, dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut loaded = BTreeMap::new();
        let entries = fs::read_dir(&dir).map_err(|source| StoreError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|source| StoreError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let mut s: EditSession = serde_json::from_str(&text).map_err(|source| StoreError::Json {
                path: path.display().to_string(),
                source,
            })?;
            s.rules();
            loaded.insert(s.id.clone(), Arc::new(Mutex::new(s)));
        }
        let inner = Arc::get_mut(&mut self.inner).expect("state not shared yet");
        inner.persist_dir = Some(dir);
        inner.next_session = AtomicU64::new(loaded.len() as u64);
        inner.sessions = RwLock::new(loaded);
        Ok(self)
    }

    pub fn embedder(&self) -> Option<&dyn Embedder> {
        self.inner.embedder.as_deref()
    }

    pub fn bump(&self) -> u64 {
        self.inner.version.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn version(&self) -> u64 {
        self.inner.version.load(Ordering::SeqCst)
    }

    pub async fn session(&self, id: &str) -> Option<Arc<Mutex<EditSession>>> {
        self.inner.sessions.read().await.get(id).cloned()
    }

    /// Creates a session over the support-derived rules. `id` defaults to
    /// the next free `s{n}`; `None` is returned when `id` is taken.
    pub async fn create_session(&self, id: Option<String>) -> Option<EditSession> {
        let mut sessions = self.inner.sessions.write().await;
        let id = match id {
            Some(id) if sessions.contains_key(&id) => return None,
            Some(id) => id,
            None => loop {
                let n = self.inner.next_session.fetch_add(1, Ordering::SeqCst) + 1;
                let candidate = format!("s{n}");
                if !sessions.contains_key(&candidate) {
                    break candidate;
                }
            },
        };
        let s = EditSession::new(id.clone(), self.inner.snapshot.clone(), now());
        sessions.insert(id, Arc::new(Mutex::new(s.clone())));
        self.bump();
        Some(s)
    }

    pub fn save(&self, session: &EditSession) -> Result<(), StoreError> {
        let Some(dir) = &self.inner.persist_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{}.json", session.id));
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(session).map_err(|source| StoreError::Json {
            path: path.display().to_string(),
            source,
        })?;
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|source| StoreError::Io {
                path: path.display().to_string(),
                source,
            })
    }
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
