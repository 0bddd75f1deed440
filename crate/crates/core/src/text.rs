//! Tokenization and utterance normalization shared by every stage.
//!
//! A single tokenizer is used for length filtering, TF-IDF, bigram counts and
//! keyword matching: lowercase, every non-alphanumeric character becomes a
//! separator, and movie mentions (`@` followed by digits) are kept as one
//! token each.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::resources::{self, ResourceError};

/// Token standing in for a movie mention in preprocessed text.
pub const PLACEHOLDER: &str = "MOVIE_PLACEHOLDER";

static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@(\d+)").unwrap());

/// Movie identifier as written in dialog text (`@<id>`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MentionId(pub u64);

impl fmt::Display for MentionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Word(String),
    Mention(MentionId),
}

impl Token {
    /// Surface form used for counting and matching; mentions render as the placeholder.
    pub fn as_str(&self) -> &str {
        match self {
            Token::Word(w) => w,
            Token::Mention(_) => PLACEHOLDER,
        }
    }
}

fn push_words(segment: &str, out: &mut Vec<Token>) {
    let lowered = segment.to_lowercase();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            out.push(Token::Word(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        out.push(Token::Word(current));
    }
}

/// Splits raw text into lowercase word tokens and mention tokens, in order.
pub fn tokenize(raw: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut last = 0;
    for caps in MENTION.captures_iter(raw) {
        let whole = caps.get(0).unwrap();
        push_words(&raw[last..whole.start()], &mut tokens);
        // ids longer than u64 are not mentions ReDial can produce; treat them as words
        match caps[1].parse::<u64>() {
            Ok(id) => tokens.push(Token::Mention(MentionId(id))),
            Err(_) => push_words(&caps[1], &mut tokens),
        }
        last = whole.end();
    }
    push_words(&raw[last..], &mut tokens);
    tokens
}

/// Lowercase surface tokens, with mentions rendered as [`PLACEHOLDER`].
pub fn words(raw: &str) -> Vec<String> {
    tokenize(raw).iter().map(|t| t.as_str().to_owned()).collect()
}

/// Number of words in raw text, counted before stop-word removal.
pub fn word_count(raw: &str) -> usize {
    tokenize(raw).len()
}

/// Movie mentions in order of appearance.
pub fn extract_mentions(raw: &str) -> Vec<MentionId> {
    tokenize(raw)
        .into_iter()
        .filter_map(|t| match t {
            Token::Mention(id) => Some(id),
            Token::Word(_) => None,
        })
        .collect()
}

/// Byte ranges of every movie marker (`@<id>` or a literal placeholder) in raw text.
pub fn marker_spans(raw: &str) -> Vec<(std::ops::Range<usize>, Option<MentionId>)> {
    static MARKER: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(&format!(r"@(\d+)|{PLACEHOLDER}")).unwrap());
    MARKER
        .captures_iter(raw)
        .map(|caps| {
            let whole = caps.get(0).unwrap();
            let id = caps.get(1).and_then(|m| m.as_str().parse().ok()).map(MentionId);
            (whole.range(), id)
        })
        .collect()
}

/// Byte span of one alphanumeric word inside raw text, lowercased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
    pub lower: String,
}

/// Alphanumeric word spans with byte offsets, used for in-place rewrites.
pub fn word_spans(raw: &str) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in raw.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(WordSpan { start: s, end: i, lower: raw[s..i].to_lowercase() });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(WordSpan { start: s, end: raw.len(), lower: raw[s..].to_lowercase() });
    }
    spans
}

#[derive(Debug, Clone)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        StopWords(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        let text = resources::read(path)?;
        Ok(Self::from_words(resources::lines(&text)))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for StopWords {
    fn default() -> Self {
        Self::from_words(resources::lines(resources::STOP_WORDS))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessed {
    pub text: String,
    pub mentioned_movie_ids: Vec<MentionId>,
}

/// Normalizes utterances for retrieval and language modelling.
#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    stop_words: StopWords,
}

impl Preprocessor {
    pub fn new(stop_words: StopWords) -> Self {
        Preprocessor { stop_words }
    }

    pub fn stop_words(&self) -> &StopWords {
        &self.stop_words
    }

    /// Lowercases, strips punctuation, removes stop words and replaces each
    /// mention with [`PLACEHOLDER`]. Mentioned ids are returned in order.
    pub fn preprocess(&self, raw: &str) -> Preprocessed {
        let mut kept = Vec::new();
        let mut ids = Vec::new();
        for token in tokenize(raw) {
            match token {
                Token::Mention(id) => {
                    ids.push(id);
                    kept.push(PLACEHOLDER.to_owned());
                }
                Token::Word(w) if !self.stop_words.contains(&w) => kept.push(w),
                Token::Word(_) => {}
            }
        }
        Preprocessed { text: kept.join(" "), mentioned_movie_ids: ids }
    }
}
