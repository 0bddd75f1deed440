//! Recorded dialog corpus: loading, validation, train/test split and length statistics.
//!
//! The on-disk format is JSON Lines, one dialog per line:
//!
//! ```json
//! {"dialog_id": "391", "utterances": [{"speaker": "seeker", "text": "Hi, I like @111776"}]}
//! ```
//!
//! An optional `"split": "train" | "test"` field pins a dialog to a split;
//! unpinned dialogs are assigned by a seeded shuffle.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{self, MentionId, Preprocessor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Recommender,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Seeker => "seeker",
            Speaker::Recommender => "recommender",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Position of an utterance in the corpus. Ordering is `(dialog_id, turn_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorpusPosition {
    pub dialog_id: String,
    pub turn_index: usize,
}

impl fmt::Display for CorpusPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.dialog_id, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub dialog_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub raw_text: String,
    pub preprocessed_text: String,
    pub mentioned_movie_ids: Vec<MentionId>,
}

impl Utterance {
    pub fn position(&self) -> CorpusPosition {
        CorpusPosition { dialog_id: self.dialog_id.clone(), turn_index: self.turn_index }
    }

    pub fn word_count(&self) -> usize {
        text::word_count(&self.raw_text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    pub utterances: Vec<Utterance>,
    pub split: Split,
}

/// Raw record as stored in the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub dialog_id: String,
    pub utterances: Vec<UtteranceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub speaker: Speaker,
    pub text: String,
}

impl From<&Dialog> for DialogRecord {
    fn from(d: &Dialog) -> Self {
        DialogRecord {
            dialog_id: d.dialog_id.clone(),
            utterances: d
                .utterances
                .iter()
                .map(|u| UtteranceRecord { speaker: u.speaker, text: u.raw_text.clone() })
                .collect(),
            split: Some(d.split),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    /// ReDial ships 10,006 training and 1,342 test dialogs.
    fn default() -> Self {
        SplitSpec { train_ratio: 0.88, seed: 42 }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corpus line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("corpus is empty")]
    Empty,
    #[error("train ratio {0} is outside [0, 1]")]
    BadRatio(f64),
    #[error("no recommender utterances to measure")]
    NoRecommenderUtterances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub recommender_utterances: usize,
    pub mean_recommender_response_length: f64,
    pub sd_recommender_response_length: f64,
    pub fraction_within_length_bounds: f64,
    pub lower: usize,
    pub upper: usize,
}

/// Immutable, validated dialog collection.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    dialogs: Vec<Dialog>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn load(path: &Path, split: SplitSpec, pre: &Preprocessor) -> Result<Self, CorpusError> {
        let file = File::open(path)
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DialogRecord = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
            records.push((i + 1, record));
        }
        Self::from_numbered_records(records, split, pre)
    }

    pub fn from_records(records: Vec<DialogRecord>, split: SplitSpec, pre: &Preprocessor) -> Result<Self, CorpusError> {
        Self::from_numbered_records(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(), split, pre)
    }

    fn from_numbered_records(
        records: Vec<(usize, DialogRecord)>,
        split: SplitSpec,
        pre: &Preprocessor,
    ) -> Result<Self, CorpusError> {
        if records.is_empty() {
            return Err(CorpusError::Empty);
        }
        if !(0.0..=1.0).contains(&split.train_ratio) {
            return Err(CorpusError::BadRatio(split.train_ratio));
        }
        let mut seen = HashMap::new();
        for (line, r) in &records {
            if r.utterances.is_empty() {
                return Err(CorpusError::Malformed { line: *line, message: format!("dialog {} has no utterances", r.dialog_id) });
            }
            if let Some(prev) = seen.insert(r.dialog_id.clone(), *line) {
                return Err(CorpusError::Malformed {
                    line: *line,
                    message: format!("duplicate dialog_id {} (first seen on line {prev})", r.dialog_id),
                });
            }
        }

        let unpinned: Vec<usize> = records.iter().enumerate().filter(|(_, (_, r))| r.split.is_none()).map(|(i, _)| i).collect();
        let mut order = unpinned.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
        let n_train = (split.train_ratio * unpinned.len() as f64).round() as usize;
        let mut assigned = vec![Split::Train; records.len()];
        for &i in &order[n_train..] {
            assigned[i] = Split::Test;
        }

        let mut dialogs = Vec::with_capacity(records.len());
        for (i, (_, record)) in records.into_iter().enumerate() {
            let split = record.split.unwrap_or(assigned[i]);
            let utterances = record
                .utterances
                .into_iter()
                .enumerate()
                .map(|(turn_index, u)| {
                    let p = pre.preprocess(&u.text);
                    Utterance {
                        dialog_id: record.dialog_id.clone(),
                        turn_index,
                        speaker: u.speaker,
                        raw_text: u.text,
                        preprocessed_text: p.text,
                        mentioned_movie_ids: p.mentioned_movie_ids,
                    }
                })
                .collect();
            dialogs.push(Dialog { dialog_id: record.dialog_id, utterances, split });
        }
        let by_id = dialogs.iter().enumerate().map(|(i, d)| (d.dialog_id.clone(), i)).collect();
        Ok(Corpus { dialogs, by_id })
    }

    pub fn dialogs(&self) -> &[Dialog] {
        &self.dialogs
    }

    pub fn train(&self) -> impl Iterator<Item = &Dialog> {
        self.dialogs.iter().filter(|d| d.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Dialog> {
        self.dialogs.iter().filter(|d| d.split == Split::Test)
    }

    pub fn dialog(&self, dialog_id: &str) -> Option<&Dialog> {
        self.by_id.get(dialog_id).map(|&i| &self.dialogs[i])
    }

    pub fn utterance(&self, pos: &CorpusPosition) -> Option<&Utterance> {
        self.dialog(&pos.dialog_id)?.utterances.get(pos.turn_index)
    }

    pub fn len(&self) -> usize {
        self.dialogs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogs.is_empty()
    }

    /// Writes the corpus back in its file format, split pinned.
    pub fn write_jsonl(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for d in &self.dialogs {
            serde_json::to_writer(&mut *out, &DialogRecord::from(d))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RedialMessage {
    text: String,
    #[serde(rename = "senderWorkerId")]
    sender: u64,
}

#[derive(Deserialize)]
struct RedialConversation {
    #[serde(rename = "conversationId")]
    conversation_id: serde_json::Value,
    #[serde(rename = "initiatorWorkerId")]
    initiator: u64,
    messages: Vec<RedialMessage>,
}

/// Converts ReDial release records (one conversation per line) into corpus
/// records pinned to `split`. The initiator is the seeker; conversations
/// without messages are skipped.
pub fn read_redial(reader: impl BufRead, split: Option<Split>) -> Result<Vec<DialogRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: "<redial>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let c: RedialConversation =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
        if c.messages.is_empty() {
            continue;
        }
        let dialog_id = match c.conversation_id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        let utterances = c
            .messages
            .into_iter()
            .map(|m| UtteranceRecord {
                speaker: if m.sender == c.initiator { Speaker::Seeker } else { Speaker::Recommender },
                text: m.text,
            })
            .collect();
        out.push(DialogRecord { dialog_id, utterances, split });
    }
    Ok(out)
}

/// Length statistics of recommender utterances; lengths are raw token counts
/// (before stop-word removal).
pub fn compute_corpus_stats<'a>(
    dialogs: impl IntoIterator<Item = &'a Dialog>,
    lower: usize,
    upper: usize,
) -> Result<CorpusStats, CorpusError> {
    let lengths: Vec<usize> = dialogs
        .into_iter()
        .flat_map(|d| &d.utterances)
        .filter(|u| u.speaker == Speaker::Recommender)
        .map(Utterance::word_count)
        .collect();
    if lengths.is_empty() {
        return Err(CorpusError::NoRecommenderUtterances);
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<usize>() as f64 / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    let within = lengths.iter().filter(|&&l| lower <= l && l <= upper).count();
    Ok(CorpusStats {
        recommender_utterances: lengths.len(),
        mean_recommender_response_length: mean,
        sd_recommender_response_length: var.sqrt(),
        fraction_within_length_bounds: within as f64 / n,
        lower,
        upper,
    })
}
