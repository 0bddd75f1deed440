//! Context-window queries and candidate response retrieval.
//!
//! Up to four queries are built from the ongoing dialog, each widening the
//! window backwards from the last seeker utterance. For each query the full
//! similarity ranking is walked; the corpus utterance right after each hit is
//! a candidate when it is a recommender turn within the length bounds.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::MovieId;
use crate::corpus::{Corpus, CorpusPosition, Speaker};
use crate::lexical::LexicalIndex;
use crate::text::{self, MentionId, Preprocessor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextUtterance {
    pub speaker: Speaker,
    pub text: String,
    /// Catalog movies whose titles were inserted into `text` by the system.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub movies: Vec<MovieId>,
}

impl ContextUtterance {
    pub fn seeker(text: impl Into<String>) -> Self {
        ContextUtterance { speaker: Speaker::Seeker, text: text.into(), movies: Vec::new() }
    }

    pub fn recommender(text: impl Into<String>) -> Self {
        ContextUtterance { speaker: Speaker::Recommender, text: text.into(), movies: Vec::new() }
    }

    /// A system turn that inserted the titles of `movies`.
    pub fn system(text: impl Into<String>, movies: Vec<MovieId>) -> Self {
        ContextUtterance { speaker: Speaker::Recommender, text: text.into(), movies }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("dialog context is empty")]
    Empty,
    #[error("dialog context must end with a seeker utterance")]
    NotSeekerTurn,
}

/// History of an ongoing dialog, ending with a seeker utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogContext {
    history: Vec<ContextUtterance>,
}

impl DialogContext {
    pub fn new(history: Vec<ContextUtterance>) -> Result<Self, ContextError> {
        match history.last() {
            None => Err(ContextError::Empty),
            Some(u) if u.speaker != Speaker::Seeker => Err(ContextError::NotSeekerTurn),
            Some(_) => Ok(DialogContext { history }),
        }
    }

    pub fn history(&self) -> &[ContextUtterance] {
        &self.history
    }

    pub fn last_seeker(&self) -> &ContextUtterance {
        self.history.last().expect("validated non-empty")
    }

    pub fn seeker_utterances(&self) -> impl DoubleEndedIterator<Item = &ContextUtterance> {
        self.history.iter().filter(|u| u.speaker == Speaker::Seeker)
    }
}

/// Context window used to build a retrieval query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ContextConfig {
    /// The last seeker utterance alone.
    LastSeeker = 1,
    /// From the previous recommender response to the end.
    WithRecommender = 2,
    /// From the seeker utterance before the previous recommender response to the end.
    WithPreviousPair = 3,
    /// The whole history.
    FullHistory = 4,
}

impl ContextConfig {
    pub const ALL: [ContextConfig; 4] =
        [ContextConfig::LastSeeker, ContextConfig::WithRecommender, ContextConfig::WithPreviousPair, ContextConfig::FullHistory];

    pub fn id(self) -> u8 {
        self as u8
    }
}

impl From<ContextConfig> for u8 {
    fn from(c: ContextConfig) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for ContextConfig {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ContextConfig::ALL.get((v as usize).wrapping_sub(1)).copied().ok_or_else(|| format!("context config {v} is not in 1..=4"))
    }
}

impl fmt::Display for ContextConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextQuery {
    pub config: ContextConfig,
    /// Preprocessed query text.
    pub text: String,
}

/// Start index of each producible window; absent windows are omitted.
fn window_starts(history: &[ContextUtterance]) -> Vec<(ContextConfig, usize)> {
    let last = history.len() - 1;
    let mut out = vec![(ContextConfig::LastSeeker, last)];
    let prev_rec = history[..last].iter().rposition(|u| u.speaker == Speaker::Recommender);
    if let Some(r) = prev_rec {
        out.push((ContextConfig::WithRecommender, r));
        if let Some(s) = history[..r].iter().rposition(|u| u.speaker == Speaker::Seeker) {
            out.push((ContextConfig::WithPreviousPair, s));
        }
    }
    out.push((ContextConfig::FullHistory, 0));
    out
}

pub fn build_context_queries(ctx: &DialogContext, pre: &Preprocessor) -> Vec<ContextQuery> {
    let history = ctx.history();
    window_starts(history)
        .into_iter()
        .map(|(config, start)| {
            let joined = history[start..].iter().map(|u| u.text.as_str()).collect::<Vec<_>>().join(" ");
            ContextQuery { config, text: pre.preprocess(&joined).text }
        })
        .collect()
}

/// Retrieval parameters: `n` candidates per set, word-count bounds `[min_words, max_words]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub n: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams { n: 5, min_words: 3, max_words: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub raw_text: String,
    pub preprocessed_text: String,
    /// Position of the response itself in the corpus.
    pub source: CorpusPosition,
    pub origin_config: ContextConfig,
    /// Cosine of the seeker utterance the response followed.
    pub source_similarity: f64,
    pub word_count: usize,
    pub original_mentioned_movie_ids: Vec<MentionId>,
}

impl CandidateResponse {
    pub fn has_placeholder(&self) -> bool {
        !text::marker_spans(&self.raw_text).is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSets {
    pub sets: BTreeMap<ContextConfig, Vec<CandidateResponse>>,
}

impl CandidateSets {
    pub fn total(&self) -> usize {
        self.sets.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("no candidate response survived retrieval")]
    NoCandidates,
    #[error("candidates per set must be at least 1")]
    ZeroN,
}

/// Candidates for one preprocessed query.
pub fn retrieve_for_query(
    index: &LexicalIndex,
    corpus: &Corpus,
    query: &ContextQuery,
    params: RetrievalParams,
) -> Vec<CandidateResponse> {
    let mut kept = Vec::new();
    for hit in index.ranking(&query.text) {
        let Some(dialog) = corpus.dialog(&hit.dialog_id) else { continue };
        let Some(next) = dialog.utterances.get(hit.turn_index + 1) else { continue };
        if next.speaker != Speaker::Recommender {
            continue;
        }
        let words = next.word_count();
        if words < params.min_words || words > params.max_words {
            continue;
        }
        kept.push(CandidateResponse {
            raw_text: next.raw_text.clone(),
            preprocessed_text: next.preprocessed_text.clone(),
            source: next.position(),
            origin_config: query.config,
            source_similarity: hit.cosine,
            word_count: words,
            original_mentioned_movie_ids: next.mentioned_movie_ids.clone(),
        });
        if kept.len() == params.n {
            break;
        }
    }
    kept
}

pub fn retrieve_candidates(
    index: &LexicalIndex,
    corpus: &Corpus,
    queries: &[ContextQuery],
    params: RetrievalParams,
) -> Result<CandidateSets, RetrievalError> {
    if params.n == 0 {
        return Err(RetrievalError::ZeroN);
    }
    let mut sets = CandidateSets::default();
    for q in queries {
        let found = retrieve_for_query(index, corpus, q, params);
        if !found.is_empty() {
            sets.sets.insert(q.config, found);
        }
    }
    if sets.total() == 0 {
        return Err(RetrievalError::NoCandidates);
    }
    Ok(sets)
}
