//! Live chat sessions over a shared pipeline.
//!
//! Each session is guarded by its own mutex, so turns of one session are
//! serialized while different sessions proceed in parallel. Sessions can be
//! journaled to JSONL and replayed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::MovieId;
use crate::corpus::{CorpusPosition, Speaker};
use crate::pipeline::{Pipeline, TurnDebug, TurnOutcome, TurnParams};
use crate::retrieval::{ContextUtterance, DialogContext};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("session {session} has no system turn {turn}")]
    TurnNotFound { session: String, turn: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("journal {path}: {message}")]
    Journal { path: String, message: String },
}

/// Per-session parameter overrides accepted at creation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOverrides {
    pub n: Option<usize>,
    pub min_words: Option<usize>,
    pub max_words: Option<usize>,
    pub boost_recommend: Option<i32>,
    pub boost_chitchat: Option<i32>,
    pub min_mean_rating: Option<f64>,
    pub min_rating_count: Option<u32>,
    pub min_year: Option<i32>,
}

impl SessionOverrides {
    pub fn apply(&self, base: TurnParams) -> Result<TurnParams, SessionError> {
        let mut p = base;
        let r = &mut p.retrieval;
        r.n = self.n.unwrap_or(r.n);
        r.min_words = self.min_words.unwrap_or(r.min_words);
        r.max_words = self.max_words.unwrap_or(r.max_words);
        p.boosts.recommend = self.boost_recommend.unwrap_or(p.boosts.recommend);
        p.boosts.chitchat = self.boost_chitchat.unwrap_or(p.boosts.chitchat);
        let f = &mut p.popularity;
        f.min_mean_rating = self.min_mean_rating.unwrap_or(f.min_mean_rating);
        f.min_rating_count = self.min_rating_count.unwrap_or(f.min_rating_count);
        f.min_year = self.min_year.unwrap_or(f.min_year);
        let r = &p.retrieval;
        if r.n < 1 || r.min_words < 1 || r.max_words < r.min_words {
            return Err(SessionError::InvalidInput(format!(
                "need n >= 1 and 1 <= min_words <= max_words, got n={} min_words={} max_words={}",
                r.n, r.min_words, r.max_words
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub speaker: Speaker,
    pub text: String,
    /// Movies recommended in this turn.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub movies: Vec<MovieId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<CorpusPosition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_substitution_text: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub history: Vec<TranscriptTurn>,
    pub recommended_ids: Vec<MovieId>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub last_active: u64,
    pub config_snapshot: TurnParams,
    #[serde(skip)]
    debug: Vec<TurnDebug>,
}

impl Session {
    fn context_with(&self, seeker_text: &str) -> DialogContext {
        let mut history: Vec<ContextUtterance> = self
            .history
            .iter()
            .map(|t| match t.speaker {
                Speaker::Seeker => ContextUtterance::seeker(t.text.clone()),
                Speaker::Recommender => ContextUtterance::system(t.text.clone(), t.movies.clone()),
            })
            .collect();
        history.push(ContextUtterance::seeker(seeker_text));
        DialogContext::new(history).expect("ends with a seeker turn")
    }

    /// Number of system turns so far.
    pub fn system_turns(&self) -> usize {
        self.history.iter().filter(|t| t.speaker == Speaker::Recommender).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReply {
    pub session_id: String,
    /// Zero-based index of this system turn within the session.
    pub turn: usize,
    pub outcome: TurnOutcome,
    pub latency_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Create { session_id: String, created_at: u64, params: TurnParams },
    Turn { seeker: String, response: String, movies: Vec<MovieId>, fallback: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub turns: usize,
    /// `(turn, journaled, replayed)` for every differing response.
    pub mismatches: Vec<(usize, String, String)>,
}

pub struct SessionStore {
    pipeline: Arc<Pipeline>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    journal_dir: Option<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl SessionStore {
    pub fn new(pipeline: Arc<Pipeline>, journal_dir: Option<PathBuf>) -> Self {
        SessionStore { pipeline, sessions: RwLock::new(HashMap::new()), journal_dir }
    }

    pub fn pipeline(&self) -> &Arc<Pipeline> {
        &self.pipeline
    }

    fn journal_path(&self, id: &str) -> Option<PathBuf> {
        self.journal_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn journal(&self, id: &str, event: &JournalEvent) -> Result<(), SessionError> {
        let Some(path) = self.journal_path(id) else { return Ok(()) };
        let err = |e: std::io::Error| SessionError::Journal { path: path.display().to_string(), message: e.to_string() };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        writeln!(f, "{}", serde_json::to_string(event).expect("journal event serializes")).map_err(err)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| SessionError::NotFound(id.to_owned()))
    }

    pub fn create(&self, overrides: &SessionOverrides) -> Result<String, SessionError> {
        let params = overrides.apply(self.pipeline.default_params())?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = now_ms();
        let session = Session {
            session_id: id.clone(),
            history: Vec::new(),
            recommended_ids: Vec::new(),
            created_at: now,
            last_active: now,
            config_snapshot: params,
            debug: Vec::new(),
        };
        self.journal(&id, &JournalEvent::Create { session_id: id.clone(), created_at: now, params })?;
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn post(&self, id: &str, text: &str) -> Result<TurnReply, SessionError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(SessionError::InvalidInput("utterance text is empty".into()));
        }
        let cell = self.session(id)?;
        let mut session = cell.lock().unwrap();
        let (outcome, latency_ms) = self.advance(&mut session, text);
        let turn = session.debug.len() - 1;
        let movies = session.history.last().map(|t| t.movies.clone()).unwrap_or_default();
        self.journal(
            id,
            &JournalEvent::Turn { seeker: text.to_owned(), response: outcome.response.text.clone(), movies, fallback: outcome.fallback },
        )?;
        Ok(TurnReply { session_id: id.to_owned(), turn, outcome, latency_ms })
    }

    /// Runs one turn and appends both utterances to the session.
    fn advance(&self, session: &mut Session, text: &str) -> (TurnOutcome, f64) {
        let started = Instant::now();
        let ctx = session.context_with(text);
        let outcome = self.pipeline.respond(&ctx, &session.config_snapshot, &session.recommended_ids);
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;

        let mut movies: Vec<MovieId> = outcome.response.recommended_movie_id.into_iter().collect();
        movies.extend(&outcome.response.additional_movie_ids);
        for m in &movies {
            if !session.recommended_ids.contains(m) {
                session.recommended_ids.push(*m);
            }
        }
        session.history.push(TranscriptTurn {
            speaker: Speaker::Seeker,
            text: text.to_owned(),
            movies: Vec::new(),
            provenance: None,
            pre_substitution_text: None,
            fallback: false,
            latency_ms: None,
        });
        session.history.push(TranscriptTurn {
            speaker: Speaker::Recommender,
            text: outcome.response.text.clone(),
            movies,
            provenance: Some(outcome.response.provenance.clone()),
            pre_substitution_text: Some(outcome.pre_substitution_text.clone()),
            fallback: outcome.fallback,
            latency_ms: Some(latency_ms),
        });
        session.debug.push(outcome.debug.clone());
        session.last_active = now_ms();
        (outcome, latency_ms)
    }

    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        Ok(self.session(id)?.lock().unwrap().clone())
    }

    pub fn debug(&self, id: &str, turn: usize) -> Result<TurnDebug, SessionError> {
        let cell = self.session(id)?;
        let session = cell.lock().unwrap();
        session.debug.get(turn).cloned().ok_or(SessionError::TurnNotFound { session: id.to_owned(), turn })
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Re-runs a journaled session in a fresh session and compares responses.
    pub fn replay(&self, journal: &Path) -> Result<ReplayReport, SessionError> {
        let err = |message: String| SessionError::Journal { path: journal.display().to_string(), message };
        let file = File::open(journal).map_err(|e| err(e.to_string()))?;
        let mut params = None;
        let mut turns = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))? {
                JournalEvent::Create { params: p, .. } => params = Some(p),
                JournalEvent::Turn { seeker, response, .. } => turns.push((seeker, response)),
            }
        }
        let params = params.ok_or_else(|| err("no create event".into()))?;
        let mut session = Session {
            session_id: "replay".into(),
            history: Vec::new(),
            recommended_ids: Vec::new(),
            created_at: 0,
            last_active: 0,
            config_snapshot: params,
            debug: Vec::new(),
        };
        let mut mismatches = Vec::new();
        for (i, (seeker, journaled)) in turns.iter().enumerate() {
            let (outcome, _) = self.advance(&mut session, seeker);
            if outcome.response.text != *journaled {
                mismatches.push((i, journaled.clone(), outcome.response.text));
            }
        }
        Ok(ReplayReport { turns: turns.len(), mismatches })
    }
}
