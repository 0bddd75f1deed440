//! TF-IDF index over corpus seeker utterances with cosine retrieval.
//!
//! Weights are raw term counts times `ln((1 + N) / (1 + df)) + 1`, rows are
//! L2-normalized, and queries are vectorized the same way. Scoring walks an
//! inverted list per query term, so only rows sharing a term are touched.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusPosition, Dialog, Speaker};

pub const INDEX_FORMAT: &str = "retrocrs.lexical-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("no seeker utterance with indexable text")]
    EmptyCorpus,
    #[error("top_n must be at least 1")]
    ZeroTopN,
    #[error("index file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub row: u32,
    pub dialog_id: String,
    pub turn_index: usize,
    pub cosine: f64,
}

impl SimilarityHit {
    pub fn position(&self) -> CorpusPosition {
        CorpusPosition { dialog_id: self.dialog_id.clone(), turn_index: self.turn_index }
    }
}

/// Sparse row: `(column, weight)` sorted by column.
pub type SparseRow = Vec<(u32, f64)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    terms: Vec<String>,
    idf: Vec<f64>,
    rows: Vec<SparseRow>,
    row_map: Vec<CorpusPosition>,
}

#[derive(Debug, Clone)]
pub struct LexicalIndex {
    terms: Vec<String>,
    vocabulary: HashMap<String, u32>,
    idf: Vec<f64>,
    rows: Vec<SparseRow>,
    row_map: Vec<CorpusPosition>,
    postings: Vec<Vec<(u32, f64)>>,
}

fn term_counts(text: &str) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for w in text.split_whitespace() {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

fn normalize(row: &mut SparseRow) {
    let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in row.iter_mut() {
            *w /= norm;
        }
    }
}

fn rank_order(a: &SimilarityHit, b: &SimilarityHit) -> Ordering {
    b.cosine
        .total_cmp(&a.cosine)
        .then_with(|| a.dialog_id.cmp(&b.dialog_id))
        .then_with(|| a.turn_index.cmp(&b.turn_index))
}

impl LexicalIndex {
    /// Indexes every seeker utterance of the given dialogs (normally the Train split).
    pub fn build<'a>(dialogs: impl IntoIterator<Item = &'a Dialog>) -> Result<Self, IndexError> {
        let docs: Vec<(CorpusPosition, &str)> = dialogs
            .into_iter()
            .flat_map(|d| &d.utterances)
            .filter(|u| u.speaker == Speaker::Seeker)
            .map(|u| (u.position(), u.preprocessed_text.as_str()))
            .collect();
        Self::from_documents(docs)
    }

    /// Indexes already-preprocessed documents keyed by corpus position.
    pub fn from_documents(docs: Vec<(CorpusPosition, &str)>) -> Result<Self, IndexError> {
        if docs.iter().all(|(_, t)| t.split_whitespace().next().is_none()) {
            return Err(IndexError::EmptyCorpus);
        }
        let counts: Vec<BTreeMap<&str, usize>> = docs.iter().map(|(_, t)| term_counts(t)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &counts {
            for term in c.keys() {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        let n = docs.len() as f64;
        let terms: Vec<String> = df.keys().map(|t| (*t).to_owned()).collect();
        let idf: Vec<f64> = df.values().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let vocabulary: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let rows = counts
            .iter()
            .map(|c| {
                let mut row: SparseRow = c
                    .iter()
                    .map(|(t, &tf)| {
                        let col = vocabulary[*t];
                        (col, tf as f64 * idf[col as usize])
                    })
                    .collect();
                row.sort_by_key(|(c, _)| *c);
                normalize(&mut row);
                row
            })
            .collect();
        let row_map = docs.into_iter().map(|(p, _)| p).collect();
        Ok(Self::assemble(terms, idf, rows, row_map))
    }

    fn assemble(terms: Vec<String>, idf: Vec<f64>, rows: Vec<SparseRow>, row_map: Vec<CorpusPosition>) -> Self {
        let vocabulary = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut postings = vec![Vec::new(); terms.len()];
        for (r, row) in rows.iter().enumerate() {
            for &(col, w) in row {
                postings[col as usize].push((r as u32, w));
            }
        }
        LexicalIndex { terms, vocabulary, idf, rows, row_map, postings }
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, row: u32) -> &SparseRow {
        &self.rows[row as usize]
    }

    pub fn row_position(&self, row: u32) -> &CorpusPosition {
        &self.row_map[row as usize]
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_id(term).map(|c| self.idf[c as usize])
    }

    /// Normalized TF-IDF vector of preprocessed text; out-of-vocabulary terms are dropped.
    pub fn vectorize(&self, text: &str) -> SparseRow {
        let mut row: SparseRow = term_counts(text)
            .into_iter()
            .filter_map(|(t, tf)| self.term_id(t).map(|c| (c, tf as f64 * self.idf[c as usize])))
            .collect();
        row.sort_by_key(|(c, _)| *c);
        normalize(&mut row);
        row
    }

    /// Every row with positive cosine to the query, best first; ties by `(dialog_id, turn_index)`.
    /// An empty result means the query carries no lexical signal.
    pub fn ranking(&self, text: &str) -> Vec<SimilarityHit> {
        let q = self.vectorize(text);
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for &(col, qw) in &q {
            for &(r, w) in &self.postings[col as usize] {
                *scores.entry(r).or_insert(0.0) += qw * w;
            }
        }
        let mut hits: Vec<SimilarityHit> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(r, s)| {
                let pos = &self.row_map[r as usize];
                SimilarityHit { row: r, dialog_id: pos.dialog_id.clone(), turn_index: pos.turn_index, cosine: s.min(1.0) }
            })
            .collect();
        hits.sort_by(rank_order);
        hits
    }

    pub fn query(&self, text: &str, top_n: usize) -> Result<Vec<SimilarityHit>, IndexError> {
        if top_n == 0 {
            return Err(IndexError::ZeroTopN);
        }
        let mut hits = self.ranking(text);
        hits.truncate(top_n);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            terms: self.terms.clone(),
            idf: self.idf.clone(),
            rows: self.rows.clone(),
            row_map: self.row_map.clone(),
        };
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, &file).map_err(|e| IndexError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let r = BufReader::new(File::open(path)?);
        let file: IndexFile = serde_json::from_reader(r).map_err(|e| IndexError::Format(e.to_string()))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(IndexError::Format(format!(
                "expected {INDEX_FORMAT} v{INDEX_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if file.idf.len() != file.terms.len() || file.rows.len() != file.row_map.len() {
            return Err(IndexError::Format("inconsistent table sizes".into()));
        }
        if file.rows.iter().flatten().any(|(c, _)| *c as usize >= file.terms.len()) {
            return Err(IndexError::Format("row references unknown term".into()));
        }
        Ok(Self::assemble(file.terms, file.idf, file.rows, file.row_map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(d: &str, t: usize) -> CorpusPosition {
        CorpusPosition { dialog_id: d.into(), turn_index: t }
    }

    #[test]
    fn single_document_has_unit_norm() {
        let idx = LexicalIndex::from_documents(vec![(pos("a", 0), "love scary movies")]).unwrap();
        assert_eq!(idx.vocabulary_size(), 3);
        let norm: f64 = idx.row(0).iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ubiquitous_terms_get_the_smallest_idf() {
        let idx = LexicalIndex::from_documents(vec![
            (pos("a", 0), "movie scary"),
            (pos("b", 0), "movie funny"),
            (pos("c", 0), "movie"),
        ])
        .unwrap();
        assert!((idx.idf("movie").unwrap() - 1.0).abs() < 1e-12);
        assert!(idx.idf("movie").unwrap() < idx.idf("scary").unwrap());
    }

    #[test]
    fn self_query_ranks_first_with_unit_cosine() {
        let idx = LexicalIndex::from_documents(vec![
            (pos("a", 0), "love scary movies"),
            (pos("b", 2), "funny movies please"),
        ])
        .unwrap();
        let hits = idx.query("funny movies please", 5).unwrap();
        assert_eq!(hits[0].dialog_id, "b");
        assert!((hits[0].cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_query_has_no_hits() {
        let idx = LexicalIndex::from_documents(vec![(pos("a", 0), "love scary movies")]).unwrap();
        assert!(idx.ranking("zebra quantum").is_empty());
        assert!(idx.ranking("").is_empty());
        assert!(matches!(idx.query("love", 0), Err(IndexError::ZeroTopN)));
    }

    #[test]
    fn ties_break_by_position() {
        let idx = LexicalIndex::from_documents(vec![
            (pos("b", 1), "scary"),
            (pos("a", 3), "scary"),
            (pos("a", 1), "scary"),
        ])
        .unwrap();
        let order: Vec<_> = idx.ranking("scary").iter().map(|h| (h.dialog_id.clone(), h.turn_index)).collect();
        assert_eq!(order, vec![("a".into(), 1), ("a".into(), 3), ("b".into(), 1)]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(LexicalIndex::from_documents(vec![(pos("a", 0), "")]), Err(IndexError::EmptyCorpus)));
    }

    #[test]
    fn save_load_round_trip_and_version_check() {
        let idx = LexicalIndex::from_documents(vec![(pos("a", 0), "love scary movies"), (pos("b", 0), "funny")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let back = LexicalIndex::load(&path).unwrap();
        assert_eq!(back.ranking("scary movies"), idx.ranking("scary movies"));

        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(LexicalIndex::load(&path), Err(IndexError::Format(_))));
    }
}
