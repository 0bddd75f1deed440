//! Fluency scoring with a bigram model, intent detection and final selection.
//!
//! The fluency score of a candidate with tokens `w_0 .. w_k` is the mean over
//! its neighboring bigrams of
//!
//! ```text
//! ln( count(w_i, w_{i+1}) / (count(w_i) + |vocabulary|) )
//! ```
//!
//! with counts taken over preprocessed recommender responses. Bigrams never
//! seen in training use a numerator of 1.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusPosition, Dialog, Speaker};
use crate::pruning::PrunedSet;
use crate::resources::{self, ResourceError};
use crate::retrieval::{CandidateResponse, ContextConfig, DialogContext};
use crate::text::{self, Token};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankingError {
    #[error("no training text for the bigram model")]
    EmptyTraining,
    #[error("candidate has no bigram; fluency is undefined")]
    ScoreUndefined,
    #[error("no scoreable candidate; answer with the fallback response")]
    FallbackResponse,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BigramLanguageModel {
    unigrams: HashMap<String, u64>,
    bigrams: HashMap<String, HashMap<String, u64>>,
}

impl BigramLanguageModel {
    /// Counts over preprocessed recommender responses of the given dialogs.
    pub fn train<'a>(dialogs: impl IntoIterator<Item = &'a Dialog>) -> Result<Self, RankingError> {
        Self::from_texts(
            dialogs
                .into_iter()
                .flat_map(|d| &d.utterances)
                .filter(|u| u.speaker == Speaker::Recommender)
                .map(|u| u.preprocessed_text.as_str()),
        )
    }

    /// Counts over already-preprocessed texts; bigrams never cross text boundaries.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, RankingError> {
        let mut model = BigramLanguageModel::default();
        for t in texts {
            let tokens: Vec<&str> = t.split_whitespace().collect();
            for w in &tokens {
                *model.unigrams.entry((*w).to_owned()).or_insert(0) += 1;
            }
            for pair in tokens.windows(2) {
                *model.bigrams.entry(pair[0].to_owned()).or_default().entry(pair[1].to_owned()).or_insert(0) += 1;
            }
        }
        if model.unigrams.is_empty() {
            return Err(RankingError::EmptyTraining);
        }
        Ok(model)
    }

    pub fn unigram(&self, w: &str) -> u64 {
        self.unigrams.get(w).copied().unwrap_or(0)
    }

    pub fn bigram(&self, a: &str, b: &str) -> u64 {
        self.bigrams.get(a).and_then(|m| m.get(b)).copied().unwrap_or(0)
    }

    /// Number of distinct unigrams.
    pub fn vocab_size(&self) -> usize {
        self.unigrams.len()
    }

    pub fn distinct_bigrams(&self) -> usize {
        self.bigrams.values().map(HashMap::len).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.unigrams.values().sum()
    }

    /// Mean log bigram likelihood of a preprocessed token sequence.
    pub fn score_tokens(&self, tokens: &[&str]) -> Result<f64, RankingError> {
        if tokens.len() < 2 {
            return Err(RankingError::ScoreUndefined);
        }
        let vocab = self.vocab_size() as f64;
        let sum: f64 = tokens
            .windows(2)
            .map(|p| {
                let numerator = self.bigram(p[0], p[1]).max(1) as f64;
                (numerator / (self.unigram(p[0]) as f64 + vocab)).ln()
            })
            .sum();
        Ok(sum / (tokens.len() - 1) as f64)
    }
}

pub fn score_fluency(model: &BigramLanguageModel, candidate: &CandidateResponse) -> Result<f64, RankingError> {
    let tokens: Vec<&str> = candidate.preprocessed_text.split_whitespace().collect();
    model.score_tokens(&tokens)
}

/// Keywords marking chit-chat utterances.
#[derive(Debug, Clone)]
pub struct ChitChatLexicon(HashSet<String>);

impl ChitChatLexicon {
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        ChitChatLexicon(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        Ok(Self::from_words(resources::lines(&resources::read(path)?)))
    }

    /// First chit-chat keyword appearing as a whole token.
    pub fn find(&self, raw: &str) -> Option<String> {
        text::words(raw).into_iter().find(|w| self.0.contains(w))
    }
}

impl Default for ChitChatLexicon {
    fn default() -> Self {
        Self::from_words(resources::lines(resources::CHITCHAT_KEYWORDS))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    MovieMention,
    ChitChat,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSignal {
    pub kind: IntentKind,
    pub evidence: Option<String>,
}

pub fn detect_intent(ctx: &DialogContext, lexicon: &ChitChatLexicon) -> IntentSignal {
    let last = &ctx.last_seeker().text;
    let tokens = text::tokenize(last);
    if let Some(Token::Mention(id)) = tokens.iter().find(|t| matches!(t, Token::Mention(_))) {
        return IntentSignal { kind: IntentKind::MovieMention, evidence: Some(id.to_string()) };
    }
    match lexicon.find(last) {
        Some(word) => IntentSignal { kind: IntentKind::ChitChat, evidence: Some(word) },
        None => IntentSignal { kind: IntentKind::None, evidence: None },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoostWeights {
    pub recommend: i32,
    pub chitchat: i32,
}

impl Default for BoostWeights {
    fn default() -> Self {
        BoostWeights { recommend: 5, chitchat: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate: CandidateResponse,
    pub fluency_score: f64,
    pub intent_boost: i32,
    pub final_score: f64,
    pub bigram_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub intent: IntentSignal,
    /// Best first; the winner is `ranked[0]`.
    pub ranked: Vec<RankedCandidate>,
    /// Candidates dropped because their fluency is undefined.
    pub unscoreable: Vec<CorpusPosition>,
}

impl Ranking {
    pub fn winner(&self) -> &RankedCandidate {
        &self.ranked[0]
    }
}

fn selection_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.final_score
        .total_cmp(&a.final_score)
        .then_with(|| b.candidate.source_similarity.total_cmp(&a.candidate.source_similarity))
        .then_with(|| a.candidate.source.cmp(&b.candidate.source))
}

/// Merges the sets in config order, keeping one candidate per distinct text
/// (the one with the highest source similarity, earliest config on ties).
pub fn merge_candidates<'a>(sets: impl IntoIterator<Item = &'a PrunedSet>) -> Vec<CandidateResponse> {
    let mut merged: Vec<CandidateResponse> = Vec::new();
    let mut by_text: HashMap<String, usize> = HashMap::new();
    for set in sets {
        for c in &set.retained {
            match by_text.get(&c.raw_text) {
                Some(&i) if merged[i].source_similarity >= c.source_similarity => {}
                Some(&i) => merged[i] = c.clone(),
                None => {
                    by_text.insert(c.raw_text.clone(), merged.len());
                    merged.push(c.clone());
                }
            }
        }
    }
    merged
}

pub fn intent_boost(candidate: &CandidateResponse, intent: &IntentSignal, lexicon: &ChitChatLexicon, weights: BoostWeights) -> i32 {
    let recommends = candidate.has_placeholder();
    match intent.kind {
        IntentKind::MovieMention if recommends => weights.recommend,
        IntentKind::ChitChat if !recommends && lexicon.find(&candidate.raw_text).is_some() => weights.chitchat,
        _ => 0,
    }
}

pub fn rank_and_select(
    sets: &[(ContextConfig, PrunedSet)],
    model: &BigramLanguageModel,
    intent: &IntentSignal,
    lexicon: &ChitChatLexicon,
    weights: BoostWeights,
) -> Result<Ranking, RankingError> {
    let mut ranked = Vec::new();
    let mut unscoreable = Vec::new();
    for candidate in merge_candidates(sets.iter().map(|(_, s)| s)) {
        match score_fluency(model, &candidate) {
            Ok(fluency) => {
                let boost = intent_boost(&candidate, intent, lexicon, weights);
                let bigram_count = candidate.preprocessed_text.split_whitespace().count() - 1;
                ranked.push(RankedCandidate {
                    candidate,
                    fluency_score: fluency,
                    intent_boost: boost,
                    final_score: fluency + boost as f64,
                    bigram_count,
                });
            }
            Err(_) => unscoreable.push(candidate.source),
        }
    }
    if ranked.is_empty() {
        return Err(RankingError::FallbackResponse);
    }
    ranked.sort_by(selection_order);
    Ok(Ranking { intent: intent.clone(), ranked, unscoreable })
}
