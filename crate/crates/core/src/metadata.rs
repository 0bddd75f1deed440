//! Turning the winning candidate into the emitted response.
//!
//! Movie markers are replaced by `Title (Year)`, stale genre words and actor
//! names are swapped for the recommended movie's, and a plot summary is
//! appended when the seeker asked what a movie is about. Every rewrite is a
//! splice over a matched span; text outside the spans is left untouched and
//! inserted titles are never rewritten.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Genre, GenreForms, GenreLexicon, ItemCatalog, Movie, MovieId};
use crate::corpus::CorpusPosition;
use crate::resources::{self, ResourceError};
use crate::text::{self, MentionId, WordSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    GenreSwap,
    ActorSwap,
    PlotInsert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenreFormKind {
    Adjective,
    Noun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RulePattern {
    /// Lowercase token sequence.
    Tokens(Vec<String>),
    /// Every actor name known to the catalog.
    AnyActor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRule {
    pub id: String,
    pub kind: RuleKind,
    pub pattern: RulePattern,
    /// Genre form for genre swaps; unused otherwise.
    pub form: Option<GenreFormKind>,
}

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error("rule {rule}: keyword {keyword:?} names no known genre")]
    UnknownGenreKeyword { rule: String, keyword: String },
    #[error("no movie available for marker {index} ({reason})")]
    Unresolved { index: usize, reason: String },
    #[error("placeholder left in emitted text: {0:?}")]
    PlaceholderLeft(String),
}

/// Rewrite rules in file order.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<RewriteRule>,
}

impl RuleSet {
    pub fn parse(source: &str, source_name: &str) -> Result<Self, ResourceError> {
        let mut rules = Vec::new();
        for (line, cols) in resources::tsv_rows(source) {
            let malformed = |message: String| ResourceError::Malformed { source_name: source_name.into(), line, message };
            let [kind, pattern, replacement] = cols[..] else {
                return Err(malformed("expected kind<TAB>pattern<TAB>replacement".into()));
            };
            let tokens = || {
                let t = text::words(pattern);
                if t.is_empty() {
                    Err(malformed("empty pattern".into()))
                } else {
                    Ok(RulePattern::Tokens(t))
                }
            };
            let (kind, pattern, form) = match (kind, replacement) {
                ("genre", "adjective") => (RuleKind::GenreSwap, tokens()?, Some(GenreFormKind::Adjective)),
                ("genre", "noun") => (RuleKind::GenreSwap, tokens()?, Some(GenreFormKind::Noun)),
                ("actor", "lead-actor") if pattern == "*" => (RuleKind::ActorSwap, RulePattern::AnyActor, None),
                ("actor", "lead-actor") => (RuleKind::ActorSwap, tokens()?, None),
                ("plot", "plot-summary") => (RuleKind::PlotInsert, tokens()?, None),
                _ => return Err(malformed(format!("unsupported rule {kind:?} -> {replacement:?}"))),
            };
            let file = Path::new(source_name).file_name().and_then(|f| f.to_str()).unwrap_or(source_name);
            rules.push(RewriteRule { id: format!("{file}:{line}"), kind, pattern, form });
        }
        Ok(RuleSet { rules })
    }

    pub fn load(path: &Path) -> Result<Self, ResourceError> {
        Self::parse(&resources::read(path)?, &path.display().to_string())
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::parse(resources::REWRITE_RULES, "rules.tsv").expect("shipped rules parse")
    }
}

/// What the seeker asked for in their last utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Description { rule_id: String },
    None,
}

fn find_sequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Matches plot triggers against the seeker utterance, first rule wins.
pub fn detect_request(rules: &RuleSet, seeker_text: &str) -> Request {
    let tokens = text::words(seeker_text);
    rules
        .rules
        .iter()
        .filter(|r| r.kind == RuleKind::PlotInsert)
        .find(|r| matches!(&r.pattern, RulePattern::Tokens(t) if find_sequence(&tokens, t).is_some()))
        .map(|r| Request::Description { rule_id: r.id.clone() })
        .unwrap_or(Request::None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledText {
    pub text: String,
    /// Byte ranges of inserted titles in `text`.
    pub title_spans: Vec<Range<usize>>,
    /// Movies in marker order.
    pub movie_ids: Vec<MovieId>,
}

/// Movie chosen for one marker: its id and the title to insert.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFill {
    pub movie_id: MovieId,
    pub title: String,
}

/// Replaces each movie marker with a title from `resolve`, called once per
/// marker in order with the marker index, the original mention (if any) and
/// the movies already used for earlier markers.
pub fn fill_placeholders<F>(raw: &str, mut resolve: F) -> Result<FilledText, MetadataError>
where
    F: FnMut(usize, Option<MentionId>, &[MovieId]) -> Result<MarkerFill, MetadataError>,
{
    let mut text = String::with_capacity(raw.len() + 32);
    let mut title_spans = Vec::new();
    let mut movie_ids = Vec::new();
    let mut last = 0;
    for (index, (range, mention)) in text::marker_spans(raw).into_iter().enumerate() {
        let fill = resolve(index, mention, &movie_ids)?;
        text.push_str(&raw[last..range.start]);
        let start = text.len();
        text.push_str(&fill.title);
        title_spans.push(start..text.len());
        movie_ids.push(fill.movie_id);
        last = range.end;
    }
    text.push_str(&raw[last..]);
    Ok(FilledText { text, title_spans, movie_ids })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub rule_id: String,
    pub matched: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub text: String,
    pub recommended_movie_id: Option<MovieId>,
    /// Movies filled into second and later markers.
    pub additional_movie_ids: Vec<MovieId>,
    pub applied_rules: Vec<AppliedRule>,
    /// Corpus position of the candidate the text came from.
    pub provenance: CorpusPosition,
}

/// Rules plus the lookup tables they need, immutable after construction.
#[derive(Debug, Clone)]
pub struct MetadataRewriter {
    rules: RuleSet,
    forms: GenreForms,
    /// Genre of each genre-swap rule, by rule index.
    rule_genres: HashMap<usize, Genre>,
    /// Catalog actor names as token sequences, longest first.
    actors: Vec<(Vec<String>, String)>,
}

fn capitalize_like(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match (upper, chars.next()) {
        (true, Some(first)) => first.to_uppercase().chain(chars).collect(),
        _ => replacement.to_owned(),
    }
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Byte range covered by `len` word spans starting at span `i`, when their
/// lowercase forms equal `needle`.
fn span_match(spans: &[WordSpan], i: usize, needle: &[String]) -> Option<Range<usize>> {
    let window = spans.get(i..i + needle.len())?;
    window.iter().zip(needle).all(|(s, n)| s.lower == *n).then(|| window[0].start..window[needle.len() - 1].end)
}

impl MetadataRewriter {
    pub fn new(rules: RuleSet, forms: GenreForms, lexicon: &GenreLexicon, catalog: &ItemCatalog) -> Result<Self, MetadataError> {
        let mut rule_genres = HashMap::new();
        for (i, rule) in rules.rules.iter().enumerate() {
            if let (RuleKind::GenreSwap, RulePattern::Tokens(t)) = (rule.kind, &rule.pattern) {
                let keyword = t.join(" ");
                let genre = lexicon
                    .resolve(&keyword)
                    .or_else(|| forms.genre_of(&keyword).cloned())
                    .ok_or_else(|| MetadataError::UnknownGenreKeyword { rule: rule.id.clone(), keyword })?;
                rule_genres.insert(i, genre);
            }
        }
        let mut actors: Vec<(Vec<String>, String)> = catalog
            .actor_names()
            .into_iter()
            .map(|name| (text::words(name), name.to_owned()))
            .filter(|(t, _)| !t.is_empty())
            .collect();
        actors.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.cmp(&b.1)));
        Ok(MetadataRewriter { rules, forms, rule_genres, actors })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn detect_request(&self, seeker_text: &str) -> Request {
        detect_request(&self.rules, seeker_text)
    }

    /// Applies genre and actor rules in file order, then the plot rule.
    ///
    /// `movie` is the movie recommended in this text; `plot_subject` is the
    /// movie a description request refers to.
    pub fn apply_metadata_rules(
        &self,
        filled: &FilledText,
        movie: Option<&Movie>,
        request: &Request,
        plot_subject: Option<&Movie>,
        provenance: CorpusPosition,
    ) -> Result<FinalResponse, MetadataError> {
        let text = &filled.text;
        let spans = text::word_spans(text);
        let mut edits: Vec<(Range<usize>, String, String)> = Vec::new();
        let free = |r: &Range<usize>, edits: &[(Range<usize>, String, String)]| {
            !filled.title_spans.iter().any(|t| overlaps(t, r)) && !edits.iter().any(|(e, _, _)| overlaps(e, r))
        };

        if let Some(movie) = movie {
            for (ri, rule) in self.rules.rules.iter().enumerate() {
                match (rule.kind, &rule.pattern) {
                    (RuleKind::GenreSwap, RulePattern::Tokens(needle)) => {
                        let genre = &self.rule_genres[&ri];
                        if movie.genres.contains(genre) {
                            continue;
                        }
                        let Some(target) = self.forms.preferred(&movie.genres) else { continue };
                        let form = match rule.form {
                            Some(GenreFormKind::Noun) => self.forms.noun(target),
                            _ => self.forms.adjective(target),
                        };
                        let Some(form) = form else { continue };
                        for i in 0..spans.len() {
                            if let Some(r) = span_match(&spans, i, needle) {
                                if free(&r, &edits) {
                                    let replacement = capitalize_like(&text[r.clone()], form);
                                    edits.push((r, replacement, rule.id.clone()));
                                }
                            }
                        }
                    }
                    (RuleKind::ActorSwap, pattern) => {
                        let Some(lead) = movie.actors.first() else { continue };
                        let names: Vec<&Vec<String>> = match pattern {
                            RulePattern::AnyActor => self.actors.iter().map(|(t, _)| t).collect(),
                            RulePattern::Tokens(t) => vec![t],
                        };
                        let cast: Vec<Vec<String>> = movie.actors.iter().map(|a| text::words(a)).collect();
                        for i in 0..spans.len() {
                            for name in &names {
                                if cast.contains(name) {
                                    continue;
                                }
                                if let Some(r) = span_match(&spans, i, name) {
                                    if free(&r, &edits) {
                                        edits.push((r, lead.clone(), rule.id.clone()));
                                    }
                                    break;
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }

        edits.sort_by_key(|(r, _, _)| r.start);
        let mut out = String::with_capacity(text.len() + 64);
        let mut applied = Vec::with_capacity(edits.len());
        let mut last = 0;
        for (r, replacement, rule_id) in edits {
            out.push_str(&text[last..r.start]);
            out.push_str(&replacement);
            applied.push(AppliedRule { rule_id, matched: text[r.clone()].to_owned(), replacement });
            last = r.end;
        }
        out.push_str(&text[last..]);

        if let (Request::Description { rule_id }, Some(subject)) = (request, plot_subject) {
            let summary = match &subject.plot_summary {
                Some(p) if !p.trim().is_empty() => format!("{}: {}", subject.display_title(), p.trim()),
                _ => {
                    tracing::warn!(movie = %subject.movie_id, "no plot summary, describing by genre");
                    minimal_description(subject)
                }
            };
            let trimmed = out.trim_end().len();
            out.truncate(trimmed);
            if out.ends_with(|c: char| c.is_alphanumeric() || c == ')') {
                out.push('.');
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&summary);
            applied.push(AppliedRule { rule_id: rule_id.clone(), matched: String::new(), replacement: summary });
        }

        if out.contains(text::PLACEHOLDER) {
            return Err(MetadataError::PlaceholderLeft(out));
        }
        let mut ids = filled.movie_ids.iter().copied();
        Ok(FinalResponse {
            text: out,
            recommended_movie_id: ids.next(),
            additional_movie_ids: ids.collect(),
            applied_rules: applied,
            provenance,
        })
    }
}

/// Title and genres, used when the catalog has no plot summary.
pub fn minimal_description(movie: &Movie) -> String {
    let title = movie.display_title();
    if movie.genres.is_empty() {
        return format!("{title} is a movie.");
    }
    let genres: Vec<&str> = movie.genres.iter().map(Genre::as_str).collect();
    format!("{title} is a {} movie.", genres.join(" / "))
}
