//! Outlier pruning of a candidate set by pairwise embedding similarity.
//!
//! All unordered pairs are scored by cosine, sorted best first, and the top
//! `t = floor(|pairs| / |set|)` pairs are kept. The retained candidates are the
//! members of those pairs. When `t` is zero the set is returned unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusPosition;
use crate::embedding::{cosine, EmbeddingBackend, EmbeddingError};
use crate::retrieval::CandidateResponse;

#[derive(Debug, Error)]
pub enum PruningError {
    #[error("cannot prune an empty candidate set")]
    EmptySet,
    #[error("pruning unavailable: {0}")]
    Unavailable(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedPair {
    pub first: CorpusPosition,
    pub second: CorpusPosition,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedSet {
    pub retained: Vec<CandidateResponse>,
    pub retained_pairs: Vec<RetainedPair>,
    /// True when the set was passed through without pruning.
    pub skipped: bool,
}

impl PrunedSet {
    pub fn unpruned(candidates: Vec<CandidateResponse>) -> Self {
        PrunedSet { retained: candidates, retained_pairs: Vec::new(), skipped: true }
    }
}

/// Number of pairs kept for a set of `set_size` candidates.
pub fn pair_budget(set_size: usize) -> usize {
    if set_size < 2 {
        return 0;
    }
    let pairs = set_size * (set_size - 1) / 2;
    pairs / set_size
}

/// Pairwise cosines `(i, j, cos)` with `i < j` in candidate order.
pub fn score_pairs(vectors: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::with_capacity(vectors.len() * vectors.len().saturating_sub(1) / 2);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            pairs.push((i, j, cosine(&vectors[i], &vectors[j])));
        }
    }
    pairs
}

/// Keeps the members of the `t` most similar pairs, where `t = floor(|P| / |S|)`.
///
/// Ties in cosine are broken by the corpus positions of the pair members.
/// Retained candidates keep their input order.
pub fn prune(candidates: Vec<CandidateResponse>, backend: &dyn EmbeddingBackend) -> Result<PrunedSet, PruningError> {
    if candidates.is_empty() {
        return Err(PruningError::EmptySet);
    }
    let budget = pair_budget(candidates.len());
    if budget == 0 {
        return Ok(PrunedSet::unpruned(candidates));
    }
    let texts: Vec<&str> = candidates.iter().map(|c| c.raw_text.as_str()).collect();
    let vectors = backend.embed(&texts)?;
    if vectors.len() != candidates.len() {
        return Err(EmbeddingError::Shape {
            got: vectors.len(),
            dim: backend.dimension(),
            expected_count: candidates.len(),
            expected_dim: backend.dimension(),
        }
        .into());
    }

    // each pair keyed by its members' corpus positions, smaller first
    let key = |i: usize, j: usize| {
        let (a, b) = (&candidates[i].source, &candidates[j].source);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let mut pairs = score_pairs(&vectors);
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then_with(|| key(x.0, x.1).cmp(&key(y.0, y.1))));
    pairs.truncate(budget);

    let mut keep = vec![false; candidates.len()];
    let retained_pairs = pairs
        .iter()
        .map(|&(i, j, c)| {
            keep[i] = true;
            keep[j] = true;
            let (first, second) = key(i, j);
            RetainedPair { first: first.clone(), second: second.clone(), cosine: c }
        })
        .collect();
    let retained = candidates.into_iter().zip(keep).filter_map(|(c, k)| k.then_some(c)).collect();
    Ok(PrunedSet { retained, retained_pairs, skipped: false })
}
