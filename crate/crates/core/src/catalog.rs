//! Movie catalog, genre vocabulary and dialog-id mapping.
//!
//! The catalog is built from MovieLens files (`movies.csv`, `ratings.csv`, and
//! an optional `movieId,actors,plot` metadata CSV) and stored as a single CSV
//! with the columns `movieId,title,genres,year,mean_rating,rating_count,actors,plot`
//! where `genres` and `actors` are `|`-separated.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resources::{self, ResourceError};
use crate::text::{self, MentionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MovieId(pub u32);

impl fmt::Display for MovieId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Genres known to the catalog, lowercased MovieLens names.
pub const GENRES: [&str; 19] = [
    "action", "adventure", "animation", "children", "comedy", "crime", "documentary", "drama", "fantasy", "film-noir",
    "horror", "imax", "musical", "mystery", "romance", "sci-fi", "thriller", "war", "western",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genre(String);

impl Genre {
    /// Canonical genre for a MovieLens-style name, if it is in the vocabulary.
    pub fn parse(name: &str) -> Option<Genre> {
        let lower = name.trim().to_lowercase();
        GENRES.contains(&lower.as_str()).then_some(Genre(lower))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog csv {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("catalog {path}, record {record}: {message}")]
    Invalid { path: String, record: usize, message: String },
    #[error(transparent)]
    Resource(#[from] ResourceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Movie {
    pub movie_id: MovieId,
    /// Title as recorded, usually with the year, e.g. `"Matrix, The (1999)"`.
    pub title: String,
    pub genres: BTreeSet<Genre>,
    pub actors: Vec<String>,
    pub year: Option<i32>,
    /// Mean rating on the 0.5..=5 scale; 0 when unrated.
    pub mean_rating: f64,
    pub rating_count: u32,
    pub plot_summary: Option<String>,
}

static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\((\d{4})\)\s*$").unwrap());
static ARTICLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(.+), (The|A|An|Les|La|Le|Il|El|Das|Der|Die) (\(\d{4}\))$").unwrap());

pub fn parse_year(title: &str) -> Option<i32> {
    let y: i32 = YEAR.captures(title)?[1].parse().ok()?;
    (1870..=2100).contains(&y).then_some(y)
}

impl Movie {
    /// Title with a trailing article moved to the front, e.g. `"The Matrix (1999)"`.
    pub fn display_title(&self) -> String {
        let t = self.title.trim();
        match ARTICLE.captures(t) {
            Some(c) => format!("{} {} {}", &c[2], &c[1], &c[3]),
            None if self.year.is_some() && YEAR.is_match(t) => t.to_owned(),
            None => match self.year {
                Some(y) => format!("{t} ({y})"),
                None => t.to_owned(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogRow {
    #[serde(rename = "movieId")]
    movie_id: u32,
    title: String,
    genres: String,
    year: Option<i32>,
    mean_rating: f64,
    rating_count: u32,
    actors: String,
    plot: String,
}

#[derive(Debug, Deserialize)]
struct MovieLensMovie {
    #[serde(rename = "movieId")]
    movie_id: u32,
    title: String,
    genres: String,
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    #[serde(rename = "movieId")]
    movie_id: u32,
    #[serde(default)]
    actors: String,
    #[serde(default)]
    plot: String,
}

fn split_genres(field: &str) -> BTreeSet<Genre> {
    field.split('|').filter_map(Genre::parse).collect()
}

fn split_actors(field: &str) -> Vec<String> {
    field.split('|').map(str::trim).filter(|a| !a.is_empty()).map(str::to_owned).collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CatalogError + '_ {
    move |source| CatalogError::Csv { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Default)]
pub struct ItemCatalog {
    movies: Vec<Movie>,
    by_id: HashMap<MovieId, usize>,
}

impl ItemCatalog {
    pub fn new(mut movies: Vec<Movie>) -> Self {
        movies.sort_by_key(|m| m.movie_id);
        movies.dedup_by_key(|m| m.movie_id);
        let by_id = movies.iter().enumerate().map(|(i, m)| (m.movie_id, i)).collect();
        ItemCatalog { movies, by_id }
    }

    pub fn get(&self, id: MovieId) -> Option<&Movie> {
        self.by_id.get(&id).map(|&i| &self.movies[i])
    }

    pub fn movies(&self) -> &[Movie] {
        &self.movies
    }

    pub fn len(&self) -> usize {
        self.movies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.movies.is_empty()
    }

    /// Every distinct actor name in the catalog.
    pub fn actor_names(&self) -> BTreeSet<&str> {
        self.movies.iter().flat_map(|m| m.actors.iter().map(String::as_str)).collect()
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let mut movies = Vec::new();
        for (i, row) in reader.deserialize::<CatalogRow>().enumerate() {
            let row = row.map_err(csv_err(path))?;
            if row.rating_count > 0 && !(0.5..=5.0).contains(&row.mean_rating) {
                return Err(CatalogError::Invalid {
                    path: path.display().to_string(),
                    record: i + 1,
                    message: format!("mean rating {} outside 0.5..=5", row.mean_rating),
                });
            }
            movies.push(Movie {
                movie_id: MovieId(row.movie_id),
                title: row.title,
                genres: split_genres(&row.genres),
                actors: split_actors(&row.actors),
                year: row.year.filter(|y| (1870..=2100).contains(y)),
                mean_rating: row.mean_rating,
                rating_count: row.rating_count,
                plot_summary: Some(row.plot).filter(|p| !p.trim().is_empty()),
            });
        }
        Ok(Self::new(movies))
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        for m in &self.movies {
            w.serialize(CatalogRow {
                movie_id: m.movie_id.0,
                title: m.title.clone(),
                genres: m.genres.iter().map(Genre::as_str).collect::<Vec<_>>().join("|"),
                year: m.year,
                mean_rating: m.mean_rating,
                rating_count: m.rating_count,
                actors: m.actors.join("|"),
                plot: m.plot_summary.clone().unwrap_or_default(),
            })
            .map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| csv_err(path)(e.into()))
    }

    /// Builds the catalog from MovieLens `movies.csv`, rating statistics and optional metadata.
    pub fn from_movielens(
        movies_csv: &Path,
        stats: &HashMap<MovieId, (f64, u32)>,
        metadata_csv: Option<&Path>,
    ) -> Result<Self, CatalogError> {
        let mut meta: HashMap<u32, MetadataRow> = HashMap::new();
        if let Some(p) = metadata_csv {
            let mut r = csv::Reader::from_path(p).map_err(csv_err(p))?;
            for row in r.deserialize::<MetadataRow>() {
                let row = row.map_err(csv_err(p))?;
                meta.insert(row.movie_id, row);
            }
        }
        let mut r = csv::Reader::from_path(movies_csv).map_err(csv_err(movies_csv))?;
        let mut movies = Vec::new();
        for row in r.deserialize::<MovieLensMovie>() {
            let row = row.map_err(csv_err(movies_csv))?;
            let id = MovieId(row.movie_id);
            let (mean, count) = stats.get(&id).copied().unwrap_or((0.0, 0));
            let extra = meta.remove(&row.movie_id);
            movies.push(Movie {
                movie_id: id,
                year: parse_year(&row.title),
                title: row.title,
                genres: split_genres(&row.genres),
                actors: extra.as_ref().map(|m| split_actors(&m.actors)).unwrap_or_default(),
                mean_rating: mean,
                rating_count: count,
                plot_summary: extra.map(|m| m.plot).filter(|p| !p.trim().is_empty()),
            });
        }
        Ok(Self::new(movies))
    }
}

/// Maps genre keywords found in dialog text to catalog genres.
#[derive(Debug, Clone)]
pub struct GenreLexicon {
    /// Keyword token sequences, longest first.
    entries: Vec<(Vec<String>, Genre)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreMention {
    /// Index of the first token of the keyword.
    pub token: usize,
    pub keyword: String,
    pub genre: Genre,
}

impl GenreLexicon {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ResourceError> {
        let mut entries = Vec::new();
        for (line, cols) in resources::tsv_rows(text) {
            let malformed = |message: String| ResourceError::Malformed { source_name: source_name.into(), line, message };
            let [keyword, genre] = cols[..] else {
                return Err(malformed("expected keyword<TAB>genre".into()));
            };
            let genre = Genre::parse(genre).ok_or_else(|| malformed(format!("unknown genre {genre:?}")))?;
            let tokens = text::words(keyword);
            if tokens.is_empty() {
                return Err(malformed("empty keyword".into()));
            }
            entries.push((tokens, genre));
        }
        entries.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        Ok(GenreLexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        Self::parse(&resources::read(path)?, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Resolves a single term: a keyword or a canonical genre name.
    pub fn resolve(&self, term: &str) -> Option<Genre> {
        let tokens = text::words(term);
        self.entries.iter().find(|(k, _)| *k == tokens).map(|(_, g)| g.clone()).or_else(|| Genre::parse(term))
    }

    /// Genre keywords in raw text, in order, without overlaps.
    pub fn find(&self, raw: &str) -> Vec<GenreMention> {
        let tokens = text::words(raw);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.entries.iter().find(|(k, _)| tokens[i..].starts_with(k));
            match hit {
                Some((k, g)) => {
                    out.push(GenreMention { token: i, keyword: k.join(" "), genre: g.clone() });
                    i += k.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

impl Default for GenreLexicon {
    fn default() -> Self {
        Self::parse(resources::GENRE_KEYWORDS, "genre_keywords.tsv").expect("shipped genre keywords parse")
    }
}

/// Natural adjective and noun forms per genre, in preference order.
#[derive(Debug, Clone)]
pub struct GenreForms {
    forms: Vec<(Genre, String, String)>,
}

impl GenreForms {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ResourceError> {
        let mut forms = Vec::new();
        for (line, cols) in resources::tsv_rows(text) {
            let malformed = |message: String| ResourceError::Malformed { source_name: source_name.into(), line, message };
            let [genre, adjective, noun] = cols[..] else {
                return Err(malformed("expected genre<TAB>adjective<TAB>noun".into()));
            };
            let genre = Genre::parse(genre).ok_or_else(|| malformed(format!("unknown genre {genre:?}")))?;
            forms.push((genre, adjective.to_owned(), noun.to_owned()));
        }
        Ok(GenreForms { forms })
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        Self::parse(&resources::read(path)?, &path.display().to_string())
    }

    pub fn adjective(&self, g: &Genre) -> Option<&str> {
        self.forms.iter().find(|(x, _, _)| x == g).map(|(_, a, _)| a.as_str())
    }

    pub fn noun(&self, g: &Genre) -> Option<&str> {
        self.forms.iter().find(|(x, _, _)| x == g).map(|(_, _, n)| n.as_str())
    }

    /// Genre named by an adjective or noun form.
    pub fn genre_of(&self, word: &str) -> Option<&Genre> {
        let w = word.to_lowercase();
        self.forms.iter().find(|(_, a, n)| *a == w || *n == w).map(|(g, _, _)| g)
    }

    /// The movie's genre that comes first in preference order.
    pub fn preferred<'a>(&self, genres: &'a BTreeSet<Genre>) -> Option<&'a Genre> {
        self.forms.iter().find_map(|(g, _, _)| genres.get(g))
    }
}

impl Default for GenreForms {
    fn default() -> Self {
        Self::parse(resources::GENRE_FORMS, "genre_forms.tsv").expect("shipped genre forms parse")
    }
}

/// Dialog mention id to catalog id. Without a mapping file the ids are taken as equal.
#[derive(Debug, Clone, Default)]
pub struct IdMapping {
    table: Option<HashMap<MentionId, MovieId>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct MappingRow {
    redial_id: u64,
    movielens_id: u32,
}

impl IdMapping {
    pub fn identity() -> Self {
        IdMapping { table: None }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (MentionId, MovieId)>) -> Self {
        IdMapping { table: Some(pairs.into_iter().collect()) }
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let mut table = HashMap::new();
        for row in r.deserialize::<MappingRow>() {
            let row = row.map_err(csv_err(path))?;
            table.insert(MentionId(row.redial_id), MovieId(row.movielens_id));
        }
        Ok(IdMapping { table: Some(table) })
    }

    pub fn save(pairs: &[(MentionId, MovieId)], path: &Path) -> Result<(), CatalogError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        for (m, id) in pairs {
            w.serialize(MappingRow { redial_id: m.0, movielens_id: id.0 }).map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| csv_err(path)(e.into()))
    }

    pub fn resolve(&self, mention: MentionId) -> Option<MovieId> {
        match &self.table {
            None => u32::try_from(mention.0).ok().map(MovieId),
            Some(t) => t.get(&mention).copied(),
        }
    }
}

/// Normalized `title (year)` key used to match ReDial movie names to MovieLens titles.
pub fn title_key(title: &str) -> String {
    let display = Movie {
        movie_id: MovieId(0),
        title: title.to_owned(),
        genres: BTreeSet::new(),
        actors: vec![],
        year: parse_year(title),
        mean_rating: 0.0,
        rating_count: 0,
        plot_summary: None,
    }
    .display_title();
    text::words(&display).join(" ")
}

/// Matches ReDial `movieId,movieName` rows against catalog titles by normalized title and year.
pub fn match_titles<'a>(
    redial: impl IntoIterator<Item = (MentionId, &'a str)>,
    catalog: &ItemCatalog,
) -> Vec<(MentionId, MovieId)> {
    let mut by_key: HashMap<String, MovieId> = HashMap::new();
    let mut ambiguous = HashSet::new();
    for m in catalog.movies() {
        let key = title_key(&m.title);
        if by_key.insert(key.clone(), m.movie_id).is_some() {
            ambiguous.insert(key);
        }
    }
    let mut out: Vec<_> = redial
        .into_iter()
        .filter_map(|(rid, name)| {
            let key = title_key(name);
            (!ambiguous.contains(&key)).then(|| by_key.get(&key).map(|&id| (rid, id))).flatten()
        })
        .collect();
    out.sort();
    out
}
