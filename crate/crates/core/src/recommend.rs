//! Choosing the movie that fills a placeholder.
//!
//! Movie-based: nearest neighbor of the last mentioned movie in latent space,
//! restricted to movies sharing a genre with it. Genre-based: cosine between
//! genre indicator vectors. Both apply a popularity filter that is relaxed
//! step by step (year, then mean rating, then the genre-overlap requirement)
//! when nothing passes.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Genre, GenreLexicon, ItemCatalog, Movie, MovieId};
use crate::latent::LatentItemSpace;
use crate::retrieval::DialogContext;
use crate::text::{self, MentionId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopularityFilter {
    pub min_mean_rating: f64,
    pub min_rating_count: u32,
    pub min_year: i32,
}

impl Default for PopularityFilter {
    fn default() -> Self {
        PopularityFilter { min_mean_rating: 3.5, min_rating_count: 50, min_year: 1990 }
    }
}

/// How far the popularity filter was relaxed to find a recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    None,
    NoYear,
    NoYearNoRating,
}

impl Relaxation {
    const LADDER: [Relaxation; 3] = [Relaxation::None, Relaxation::NoYear, Relaxation::NoYearNoRating];
}

impl PopularityFilter {
    pub fn passes(&self, m: &Movie) -> bool {
        self.passes_at(m, Relaxation::None)
    }

    pub fn passes_at(&self, m: &Movie, level: Relaxation) -> bool {
        let year_ok = level >= Relaxation::NoYear || m.year.is_some_and(|y| y >= self.min_year);
        let rating_ok = level >= Relaxation::NoYearNoRating || m.mean_rating >= self.min_mean_rating;
        year_ok && rating_ok && m.rating_count >= self.min_rating_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MovieBased,
    GenreBased,
    OriginalMovie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub movie_id: MovieId,
    pub strategy: Strategy,
    pub score: f64,
    pub relaxation: Relaxation,
    /// False only when no genre-sharing movie passed even the relaxed filter.
    pub genre_overlap: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("anchor movie {0} is unknown to the catalog or latent space")]
    AnchorUnknown(MovieId),
    #[error("none of the genre terms {0:?} is a known genre")]
    GenreUnknown(Vec<String>),
    #[error("no movie passes the filters")]
    NoCandidate,
    #[error("mentioned movie {0} has no catalog entry")]
    UnmappedMention(MentionId),
}

/// Best-scoring movie; ties go to more ratings, then the lower id.
fn best<'a>(scored: impl Iterator<Item = (&'a Movie, f64)>) -> Option<(&'a Movie, f64)> {
    scored.max_by(|(a, sa), (b, sb)| {
        sa.total_cmp(sb).then_with(|| a.rating_count.cmp(&b.rating_count)).then_with(|| b.movie_id.cmp(&a.movie_id))
    })
}

pub fn recommend_by_movie(
    space: &LatentItemSpace,
    catalog: &ItemCatalog,
    anchor: MovieId,
    filter: &PopularityFilter,
    exclude: &HashSet<MovieId>,
) -> Result<Recommendation, RecommendError> {
    let anchor_movie = catalog.get(anchor).ok_or(RecommendError::AnchorUnknown(anchor))?;
    let anchor_vec = space.vector(anchor).ok_or(RecommendError::AnchorUnknown(anchor))?;
    for genre_overlap in [true, false] {
        for level in Relaxation::LADDER {
            let pool = catalog.movies().iter().filter(|m| {
                m.movie_id != anchor
                    && !exclude.contains(&m.movie_id)
                    && (!genre_overlap || !m.genres.is_disjoint(&anchor_movie.genres))
                    && filter.passes_at(m, level)
            });
            let scored = pool.filter_map(|m| space.vector(m.movie_id).map(|v| (m, crate::embedding::cosine(anchor_vec, v))));
            if let Some((m, score)) = best(scored) {
                return Ok(Recommendation {
                    movie_id: m.movie_id,
                    strategy: Strategy::MovieBased,
                    score,
                    relaxation: level,
                    genre_overlap,
                });
            }
        }
    }
    Err(RecommendError::NoCandidate)
}

/// Cosine between binary genre indicator vectors.
pub fn genre_cosine(query: &BTreeSet<Genre>, genres: &BTreeSet<Genre>) -> f64 {
    if query.is_empty() || genres.is_empty() {
        return 0.0;
    }
    let shared = query.intersection(genres).count() as f64;
    shared / ((query.len() * genres.len()) as f64).sqrt()
}

pub fn recommend_by_genre(
    catalog: &ItemCatalog,
    lexicon: &GenreLexicon,
    genre_terms: &[String],
    filter: &PopularityFilter,
    exclude: &HashSet<MovieId>,
) -> Result<Recommendation, RecommendError> {
    let query: BTreeSet<Genre> = genre_terms.iter().filter_map(|t| lexicon.resolve(t)).collect();
    if query.is_empty() {
        return Err(RecommendError::GenreUnknown(genre_terms.to_vec()));
    }
    for level in Relaxation::LADDER {
        let scored = catalog
            .movies()
            .iter()
            .filter(|m| !exclude.contains(&m.movie_id) && filter.passes_at(m, level))
            .map(|m| (m, genre_cosine(&query, &m.genres)))
            .filter(|(_, s)| *s > 0.0);
        if let Some((m, score)) = best(scored) {
            return Ok(Recommendation {
                movie_id: m.movie_id,
                strategy: Strategy::GenreBased,
                score,
                relaxation: level,
                genre_overlap: true,
            });
        }
    }
    Err(RecommendError::NoCandidate)
}

/// Movie a movie-based recommendation is anchored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Anchor {
    /// An `@<id>` mention in dialog text, still to be mapped to the catalog.
    Mention(MentionId),
    /// A catalog movie the system inserted in an earlier turn.
    Movie(MovieId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyChoice {
    pub strategy: Strategy,
    /// Most recent movie mentioned in the dialog.
    pub anchor: Option<Anchor>,
    /// Genre keywords of the most recent utterance that mentions any.
    pub genre_terms: Vec<String>,
}

/// Movie mentions take precedence over genre keywords; with neither, the
/// movie of the original corpus utterance is kept.
pub fn choose_strategy(ctx: &DialogContext, lexicon: &GenreLexicon) -> StrategyChoice {
    let anchor = ctx.history().iter().rev().find_map(|u| {
        let mut markers = text::marker_spans(&u.text);
        markers.retain(|(_, id)| id.is_some());
        // a system turn's text holds titles, not markers
        match (u.movies.last(), markers.last()) {
            (Some(m), _) => Some(Anchor::Movie(*m)),
            (None, Some((_, Some(id)))) => Some(Anchor::Mention(*id)),
            _ => None,
        }
    });
    let genre_terms: Vec<String> = ctx
        .history()
        .iter()
        .rev()
        .map(|u| lexicon.find(&u.text))
        .find(|found| !found.is_empty())
        .map(|found| found.into_iter().map(|m| m.keyword).collect())
        .unwrap_or_default();
    let strategy = if anchor.is_some() {
        Strategy::MovieBased
    } else if !genre_terms.is_empty() {
        Strategy::GenreBased
    } else {
        Strategy::OriginalMovie
    };
    StrategyChoice { strategy, anchor, genre_terms }
}
