//! Offline study mechanics: sampling dialog situations, generating responses,
//! writing annotation sheets and aggregating scored sheets.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusPosition, Dialog, Speaker};
use crate::pipeline::{Pipeline, TurnParams};
use crate::retrieval::{ContextUtterance, DialogContext};

/// Labels of the 5-point meaningfulness scale, rating 1 first.
pub const SCALE: [&str; 5] = ["Entirely meaningless", "Meaningless", "Neither meaningless nor meaningful", "Meaningful", "Perfectly meaningful"];

pub const ATTENTION_CHECK_ID: &str = "attention-check";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {wanted} dialogs with a seeker utterance, only {available} available")]
    NotEnoughDialogs { wanted: usize, available: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{source_name} line {line}: {message}")]
    Malformed { source_name: String, line: usize, message: String },
    #[error("score sheet has no valid rows")]
    EmptySheet,
}

fn io_err(path: &str) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io { path: path.to_owned(), message: e.to_string() }
}

fn csv_err(path: &str) -> impl Fn(csv::Error) -> EvalError + '_ {
    move |e| EvalError::Io { path: path.to_owned(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogSituation {
    pub situation_id: String,
    pub dialog_id: String,
    /// Number of utterances kept from the start of the dialog.
    pub cut_index: usize,
    pub prefix: Vec<ContextUtterance>,
}

impl DialogSituation {
    pub fn context(&self) -> DialogContext {
        DialogContext::new(self.prefix.clone()).expect("situations end with a seeker utterance")
    }

    /// Where the cut falls within the dialog, in `(0, 1]`.
    pub fn relative_position(&self, dialog_len: usize) -> f64 {
        self.cut_index as f64 / dialog_len as f64
    }
}

/// Prefix lengths that end with a seeker utterance.
pub fn valid_cuts(dialog: &Dialog) -> Vec<usize> {
    dialog.utterances.iter().enumerate().filter(|(_, u)| u.speaker == Speaker::Seeker).map(|(i, _)| i + 1).collect()
}

/// Picks `count` distinct dialogs and, for each, a uniformly random cut
/// among the prefixes ending at a seeker utterance.
pub fn sample_situations<'a>(
    dialogs: impl IntoIterator<Item = &'a Dialog>,
    count: usize,
    seed: u64,
) -> Result<Vec<DialogSituation>, EvalError> {
    let mut eligible: Vec<&Dialog> = Vec::new();
    for d in dialogs {
        if valid_cuts(d).is_empty() {
            tracing::warn!(dialog = %d.dialog_id, "skipping dialog without seeker utterance");
        } else {
            eligible.push(d);
        }
    }
    if eligible.len() < count {
        return Err(EvalError::NotEnoughDialogs { wanted: count, available: eligible.len() });
    }
    eligible.sort_by(|a, b| a.dialog_id.cmp(&b.dialog_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let width = count.to_string().len().max(3);
    Ok(eligible
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, d)| {
            let cuts = valid_cuts(d);
            let cut = cuts[rng.random_range(0..cuts.len())];
            DialogSituation {
                situation_id: format!("s{:0width$}", i + 1),
                dialog_id: d.dialog_id.clone(),
                cut_index: cut,
                prefix: d.utterances[..cut]
                    .iter()
                    .map(|u| ContextUtterance { speaker: u.speaker, text: u.raw_text.clone(), movies: Vec::new() })
                    .collect(),
            }
        })
        .collect())
}

pub fn write_situations(situations: &[DialogSituation], out: &mut impl Write) -> std::io::Result<()> {
    for s in situations {
        writeln!(out, "{}", serde_json::to_string(s)?)?;
    }
    Ok(())
}

pub fn read_situations(path: &Path) -> Result<Vec<DialogSituation>, EvalError> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io_err(&name))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&name))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: DialogSituation = serde_json::from_str(&line)
            .map_err(|e| EvalError::Malformed { source_name: name.clone(), line: i + 1, message: e.to_string() })?;
        if s.prefix.last().map(|u| u.speaker) != Some(Speaker::Seeker) {
            return Err(EvalError::Malformed { source_name: name, line: i + 1, message: "prefix must end with a seeker utterance".into() });
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub situation_id: String,
    pub system: String,
    pub response: String,
    #[serde(default)]
    pub provenance: Option<String>,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub situation_id: String,
    pub latency_ms: f64,
}

/// Responses keyed by situation, in situation then system order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseTable {
    pub rows: Vec<ResponseRow>,
}

impl ResponseTable {
    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, EvalError> {
        let name = path.display().to_string();
        let mut reader = csv::Reader::from_path(path).map_err(csv_err(&name))?;
        let rows = reader.deserialize().collect::<Result<Vec<ResponseRow>, _>>().map_err(csv_err(&name))?;
        Ok(ResponseTable { rows })
    }

    /// Union of both tables; a row of `other` replaces one with the same
    /// situation and system.
    pub fn merge(&self, other: &ResponseTable) -> ResponseTable {
        let mut by_key: BTreeMap<(String, String), ResponseRow> = BTreeMap::new();
        for r in self.rows.iter().chain(&other.rows) {
            by_key.insert((r.situation_id.clone(), r.system.clone()), r.clone());
        }
        ResponseTable { rows: by_key.into_values().collect() }
    }

    pub fn systems(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.rows.iter().map(|r| r.system.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedResponses {
    pub table: ResponseTable,
    pub timings: Vec<TimingRow>,
}

/// Runs the pipeline on every situation in parallel; output order follows the input.
pub fn generate_responses(situations: &[DialogSituation], pipeline: &Pipeline, params: &TurnParams, system: &str) -> GeneratedResponses {
    let results: Vec<(ResponseRow, TimingRow)> = situations
        .par_iter()
        .map(|s| {
            let started = Instant::now();
            let row = match DialogContext::new(s.prefix.clone()) {
                Ok(ctx) => {
                    let outcome = pipeline.respond(&ctx, params, &[]);
                    ResponseRow {
                        situation_id: s.situation_id.clone(),
                        system: system.to_owned(),
                        response: outcome.response.text,
                        provenance: Some(outcome.response.provenance.to_string()),
                        fallback: outcome.fallback,
                    }
                }
                Err(e) => {
                    tracing::warn!(situation = %s.situation_id, error = %e, "situation skipped");
                    ResponseRow {
                        situation_id: s.situation_id.clone(),
                        system: system.to_owned(),
                        response: String::new(),
                        provenance: None,
                        fallback: false,
                    }
                }
            };
            let timing = TimingRow { situation_id: s.situation_id.clone(), latency_ms: started.elapsed().as_secs_f64() * 1000.0 };
            (row, timing)
        })
        .collect();
    let (rows, timings) = results.into_iter().unzip();
    GeneratedResponses { table: ResponseTable { rows }, timings }
}

pub fn write_timings(timings: &[TimingRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for t in timings {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

fn render_context(prefix: &[ContextUtterance]) -> String {
    prefix
        .iter()
        .map(|u| format!("{}: {}", if u.speaker == Speaker::Seeker { "SEEKER" } else { "RECOMMENDER" }, u.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetRow {
    pub situation_id: String,
    pub context: String,
    pub system: String,
    pub response: String,
    pub rating: String,
    pub rater_id: String,
}

/// Annotation sheet: per situation, every system's response in a seeded
/// random order. With `attention_check`, a directive row asking for rating
/// `attention_rating` is inserted at a random position.
pub fn annotation_sheet(
    situations: &[DialogSituation],
    table: &ResponseTable,
    seed: u64,
    attention_rating: Option<u8>,
) -> Vec<SheetRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for s in situations {
        let context = render_context(&s.prefix);
        let mut responses: Vec<&ResponseRow> = table.rows.iter().filter(|r| r.situation_id == s.situation_id).collect();
        responses.sort_by(|a, b| a.system.cmp(&b.system));
        responses.shuffle(&mut rng);
        rows.extend(responses.into_iter().map(|r| SheetRow {
            situation_id: s.situation_id.clone(),
            context: context.clone(),
            system: r.system.clone(),
            response: r.response.clone(),
            rating: String::new(),
            rater_id: String::new(),
        }));
    }
    if let Some(rating) = attention_rating {
        let label = SCALE[(rating.clamp(1, 5) - 1) as usize];
        let at = rng.random_range(0..=rows.len());
        rows.insert(
            at,
            SheetRow {
                situation_id: ATTENTION_CHECK_ID.into(),
                context: "This dialog situation checks your attention.".into(),
                system: ATTENTION_CHECK_ID.into(),
                response: format!("Please rate this response as {rating} ({label})."),
                rating: String::new(),
                rater_id: String::new(),
            },
        );
    }
    rows
}

pub fn write_sheet(rows: &[SheetRow], out: &mut impl Write) -> Result<(), csv::Error> {
    for (i, label) in SCALE.iter().enumerate() {
        writeln!(out, "# {} = {label}", i + 1)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub situation_id: String,
    pub system: String,
    pub rating: u8,
    pub rater_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSheet {
    pub rows: Vec<ScoreRow>,
    /// Scale labels read from `#` comment lines.
    pub anchors: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawScoreRow {
    situation_id: String,
    system: String,
    rating: String,
    rater_id: String,
}

impl ScoreSheet {
    /// Reads `situation_id,system,rating,rater_id` CSV. Rows whose rating is
    /// not an integer in 1..=5 are rejected and reported; attention-check
    /// rows are skipped.
    pub fn parse(input: impl Read, source_name: &str) -> Result<(ScoreSheet, Vec<RejectedRow>), EvalError> {
        let mut text = String::new();
        std::io::BufReader::new(input).read_to_string(&mut text).map_err(io_err(source_name))?;
        let mut anchors = Vec::new();
        let mut body = String::new();
        let mut line_numbers = Vec::new();
        for (i, line) in text.lines().enumerate() {
            match line.trim_start().strip_prefix('#') {
                Some(comment) => anchors.push(comment.trim().to_owned()),
                None if line.trim().is_empty() => {}
                None => {
                    body.push_str(line);
                    body.push('\n');
                    line_numbers.push(i + 1);
                }
            }
        }
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(body.as_bytes());
        let mut rows = Vec::new();
        let mut rejected = Vec::new();
        for (k, record) in reader.deserialize::<RawScoreRow>().enumerate() {
            let line = line_numbers.get(k + 1).copied().unwrap_or(0);
            let raw = match record {
                Ok(r) => r,
                Err(e) => {
                    rejected.push(RejectedRow { line, reason: e.to_string() });
                    continue;
                }
            };
            if raw.situation_id == ATTENTION_CHECK_ID {
                continue;
            }
            match raw.rating.trim().parse::<u8>() {
                Ok(r @ 1..=5) => rows.push(ScoreRow { situation_id: raw.situation_id, system: raw.system, rating: r, rater_id: raw.rater_id }),
                _ => rejected.push(RejectedRow { line, reason: format!("rating {:?} is not an integer in 1..=5", raw.rating) }),
            }
        }
        Ok((ScoreSheet { rows, anchors }, rejected))
    }

    pub fn load(path: &Path) -> Result<(ScoreSheet, Vec<RejectedRow>), EvalError> {
        let name = path.display().to_string();
        let file = std::fs::File::open(path).map_err(io_err(&name))?;
        Self::parse(file, &name)
    }

    pub fn write(&self, out: &mut impl Write) -> Result<(), csv::Error> {
        let anchors: Vec<String> = if self.anchors.is_empty() {
            SCALE.iter().enumerate().map(|(i, l)| format!("{} = {l}", i + 1)).collect()
        } else {
            self.anchors.clone()
        };
        for a in &anchors {
            writeln!(out, "# {a}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub system: String,
    pub ratings: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single rating.
    pub sd: f64,
    /// Count of ratings 1 through 5.
    pub histogram: [u64; 5],
}

/// Per-system mean, sample standard deviation and rating histogram, by system name.
pub fn aggregate_scores(sheet: &ScoreSheet) -> Result<Vec<SystemScore>, EvalError> {
    if sheet.rows.is_empty() {
        return Err(EvalError::EmptySheet);
    }
    let mut by_system: BTreeMap<&str, [u64; 5]> = BTreeMap::new();
    for r in &sheet.rows {
        by_system.entry(&r.system).or_default()[(r.rating - 1) as usize] += 1;
    }
    Ok(by_system
        .into_iter()
        .map(|(system, histogram)| {
            // from counts, so the result does not depend on row order
            let n: u64 = histogram.iter().sum();
            let sum: f64 = histogram.iter().enumerate().map(|(i, c)| (i + 1) as f64 * *c as f64).sum();
            let mean = sum / n as f64;
            let ss: f64 = histogram.iter().enumerate().map(|(i, c)| *c as f64 * ((i + 1) as f64 - mean).powi(2)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            SystemScore { system: system.to_owned(), ratings: n as usize, mean, sd, histogram }
        })
        .collect())
}

/// Every situation id covered by the table for all of `systems`.
pub fn complete_situations(table: &ResponseTable, systems: &[String]) -> HashSet<String> {
    let mut have: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    for r in &table.rows {
        have.entry(&r.situation_id).or_default().insert(&r.system);
    }
    have.into_iter().filter(|(_, s)| systems.iter().all(|x| s.contains(x.as_str()))).map(|(k, _)| k.to_owned()).collect()
}

/// Source position string of a response row, parsed back.
pub fn parse_provenance(s: &str) -> Option<CorpusPosition> {
    let (dialog_id, turn) = s.rsplit_once('#')?;
    Some(CorpusPosition { dialog_id: dialog_id.to_owned(), turn_index: turn.parse().ok()? })
}
