//! One system turn: retrieval, pruning, ranking, recommendation and rewriting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, GenreForms, GenreLexicon, IdMapping, ItemCatalog, Movie, MovieId};
use crate::config::{BackendKind, ConfigError, PipelineConfig};
use crate::corpus::{Corpus, CorpusError, CorpusPosition, Speaker};
use crate::embedding::{EmbeddingBackend, EmbeddingError, HashingBackend, HttpBackend, PrecomputedBackend};
use crate::latent::{self, FactorizeError, LatentItemSpace};
use crate::lexical::{IndexError, LexicalIndex};
use crate::metadata::{FinalResponse, MarkerFill, MetadataError, MetadataRewriter, Request, RuleSet};
use crate::pruning::{self, PrunedSet, PruningError};
use crate::ranking::{self, BigramLanguageModel, BoostWeights, ChitChatLexicon, IntentSignal, Ranking, RankingError};
use crate::recommend::{self, Anchor, PopularityFilter, Recommendation, RecommendError, Strategy, StrategyChoice};
use crate::resources::ResourceError;
use crate::retrieval::{self, ContextConfig, ContextQuery, DialogContext, RetrievalParams};
use crate::text::{self, MentionId, Preprocessor, StopWords};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Factorize(#[from] FactorizeError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error("missing required path: {0}")]
    MissingPath(&'static str),
}

/// Parameters that may differ per session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnParams {
    pub retrieval: RetrievalParams,
    pub boosts: BoostWeights,
    pub popularity: PopularityFilter,
}

impl From<&PipelineConfig> for TurnParams {
    fn from(c: &PipelineConfig) -> Self {
        TurnParams { retrieval: c.retrieval(), boosts: c.boosts(), popularity: c.popularity }
    }
}

/// Corpus utterance used when no candidate can be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackUtterance {
    pub text: String,
    pub source: CorpusPosition,
}

/// Everything recorded about how a turn was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDebug {
    pub intent: IntentSignal,
    pub queries: Vec<ContextQuery>,
    /// Candidate sources per configuration before pruning.
    pub retrieved: BTreeMap<ContextConfig, Vec<CorpusPosition>>,
    pub pruned: BTreeMap<ContextConfig, PrunedSet>,
    /// Set when pruning was skipped because the embedding backend failed.
    pub pruning_unavailable: Option<String>,
    pub ranking: Option<Ranking>,
    pub request: Request,
    pub strategy: Option<StrategyChoice>,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub response: FinalResponse,
    pub fallback: bool,
    pub fallback_reason: Option<String>,
    /// Corpus text of the chosen response before any substitution.
    pub pre_substitution_text: String,
    pub debug: TurnDebug,
}

/// Loaded artifacts a pipeline is assembled from.
pub struct PipelineParts {
    pub preprocessor: Preprocessor,
    pub corpus: Corpus,
    pub index: LexicalIndex,
    pub model: BigramLanguageModel,
    pub chitchat: ChitChatLexicon,
    pub genres: GenreLexicon,
    pub forms: GenreForms,
    pub rules: RuleSet,
    pub catalog: ItemCatalog,
    pub space: LatentItemSpace,
    pub mapping: IdMapping,
    pub backend: Arc<dyn EmbeddingBackend>,
}

impl PipelineParts {
    /// Builds the index and language model from the train split of `corpus`,
    /// with shipped lexicons and rules.
    pub fn from_corpus(
        corpus: Corpus,
        catalog: ItemCatalog,
        space: LatentItemSpace,
        backend: Arc<dyn EmbeddingBackend>,
    ) -> Result<Self, PipelineError> {
        let index = LexicalIndex::build(corpus.train())?;
        let model = BigramLanguageModel::train(corpus.train())?;
        Ok(PipelineParts {
            preprocessor: Preprocessor::default(),
            corpus,
            index,
            model,
            chitchat: ChitChatLexicon::default(),
            genres: GenreLexicon::default(),
            forms: GenreForms::default(),
            rules: RuleSet::default(),
            catalog,
            space,
            mapping: IdMapping::identity(),
            backend,
        })
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    preprocessor: Preprocessor,
    corpus: Corpus,
    index: LexicalIndex,
    model: BigramLanguageModel,
    chitchat: ChitChatLexicon,
    genres: GenreLexicon,
    catalog: ItemCatalog,
    space: LatentItemSpace,
    mapping: IdMapping,
    rewriter: MetadataRewriter,
    backend: Arc<dyn EmbeddingBackend>,
    fallback: FallbackUtterance,
    train_recommender_texts: HashSet<String>,
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, name: &'static str) -> Result<&'a std::path::Path, PipelineError> {
    p.as_deref().ok_or(PipelineError::MissingPath(name))
}

/// Most frequent train recommender utterance that is chit-chat and names no movie.
fn default_fallback(corpus: &Corpus, chitchat: &ChitChatLexicon, params: RetrievalParams) -> Option<FallbackUtterance> {
    let mut counts: HashMap<&str, (usize, CorpusPosition)> = HashMap::new();
    for u in corpus.train().flat_map(|d| &d.utterances) {
        let words = u.word_count();
        if u.speaker != Speaker::Recommender
            || !text::marker_spans(&u.raw_text).is_empty()
            || words < params.min_words
            || words > params.max_words
            || chitchat.find(&u.raw_text).is_none()
        {
            continue;
        }
        counts.entry(u.raw_text.as_str()).or_insert((0, u.position())).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then_with(|| b.0.cmp(a.0)))
        .map(|(text, (_, source))| FallbackUtterance { text: text.to_owned(), source })
}

fn find_fallback(corpus: &Corpus, text: &str) -> Option<FallbackUtterance> {
    corpus
        .train()
        .flat_map(|d| &d.utterances)
        .find(|u| u.speaker == Speaker::Recommender && u.raw_text == text && text::marker_spans(text).is_empty())
        .map(|u| FallbackUtterance { text: u.raw_text.clone(), source: u.position() })
}

pub fn build_backend(config: &PipelineConfig) -> Result<Arc<dyn EmbeddingBackend>, PipelineError> {
    let e = &config.embedding;
    Ok(match e.backend {
        BackendKind::Hashing => Arc::new(HashingBackend::new(e.dimension)),
        BackendKind::Precomputed => Arc::new(PrecomputedBackend::load(required(&config.paths.embeddings, "paths.embeddings")?)?),
        BackendKind::Http => Arc::new(HttpBackend::new(
            e.url.clone().ok_or(ConfigError::Invalid("embedding.url is required".into()))?,
            "http",
            e.dimension,
            std::time::Duration::from_millis(e.timeout_ms),
        )),
    })
}

impl Pipeline {
    /// Loads every artifact named by `config`.
    pub fn assemble(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let p = &config.paths;
        let stop_words = match &p.stopwords {
            Some(path) => StopWords::load(path)?,
            None => StopWords::default(),
        };
        let preprocessor = Preprocessor::new(stop_words);
        let corpus = Corpus::load(required(&p.corpus, "paths.corpus")?, config.split(), &preprocessor)?;
        let index = match &p.index {
            Some(path) => LexicalIndex::load(path)?,
            None => LexicalIndex::build(corpus.train())?,
        };
        let model = BigramLanguageModel::train(corpus.train())?;
        let catalog = ItemCatalog::load(required(&p.catalog, "paths.catalog")?)?;
        let space = match (&p.factors, &p.ratings) {
            (Some(path), _) => LatentItemSpace::load(path)?,
            (None, Some(path)) => latent::factorize(&latent::read_ratings(path)?, config.latent_factors, config.seed)?,
            (None, None) => return Err(PipelineError::MissingPath("paths.factors or paths.ratings")),
        };
        let parts = PipelineParts {
            preprocessor,
            corpus,
            index,
            model,
            chitchat: match &p.chitchat {
                Some(path) => ChitChatLexicon::load(path)?,
                None => ChitChatLexicon::default(),
            },
            genres: match &p.genre_keywords {
                Some(path) => GenreLexicon::load(path)?,
                None => GenreLexicon::default(),
            },
            forms: match &p.genre_forms {
                Some(path) => GenreForms::load(path)?,
                None => GenreForms::default(),
            },
            rules: match &p.rules {
                Some(path) => RuleSet::load(path)?,
                None => RuleSet::default(),
            },
            catalog,
            space,
            mapping: match &p.mapping {
                Some(path) => IdMapping::load(path)?,
                None => IdMapping::identity(),
            },
            backend: build_backend(&config)?,
        };
        Self::from_parts(parts, config)
    }

    pub fn from_parts(parts: PipelineParts, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let rewriter = MetadataRewriter::new(parts.rules, parts.forms, &parts.genres, &parts.catalog)?;
        let fallback = match &config.fallback_text {
            Some(t) => find_fallback(&parts.corpus, t)
                .ok_or_else(|| ConfigError::Invalid(format!("fallback_text {t:?} is not a train recommender utterance without movies")))?,
            None => default_fallback(&parts.corpus, &parts.chitchat, config.retrieval())
                .ok_or_else(|| ConfigError::Invalid("no chit-chat recommender utterance to use as fallback".into()))?,
        };
        let train_recommender_texts = parts
            .corpus
            .train()
            .flat_map(|d| &d.utterances)
            .filter(|u| u.speaker == Speaker::Recommender)
            .map(|u| u.raw_text.clone())
            .collect();
        Ok(Pipeline {
            config,
            preprocessor: parts.preprocessor,
            corpus: parts.corpus,
            index: parts.index,
            model: parts.model,
            chitchat: parts.chitchat,
            genres: parts.genres,
            catalog: parts.catalog,
            space: parts.space,
            mapping: parts.mapping,
            rewriter,
            backend: parts.backend,
            fallback,
            train_recommender_texts,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn default_params(&self) -> TurnParams {
        TurnParams::from(&self.config)
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn index(&self) -> &LexicalIndex {
        &self.index
    }

    pub fn model(&self) -> &BigramLanguageModel {
        &self.model
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn fallback(&self) -> &FallbackUtterance {
        &self.fallback
    }

    /// True when `text` is verbatim a recommender utterance of the train split.
    pub fn is_train_response(&self, text: &str) -> bool {
        self.train_recommender_texts.contains(text)
    }

    fn fallback_outcome(&self, reason: String, debug: TurnDebug) -> TurnOutcome {
        tracing::info!(%reason, "answering with fallback");
        TurnOutcome {
            response: FinalResponse {
                text: self.fallback.text.clone(),
                recommended_movie_id: None,
                additional_movie_ids: Vec::new(),
                applied_rules: Vec::new(),
                provenance: self.fallback.source.clone(),
            },
            fallback: true,
            fallback_reason: Some(reason),
            pre_substitution_text: self.fallback.text.clone(),
            debug,
        }
    }

    /// Produces the system response to the last seeker utterance of `ctx`.
    /// `session_movies` are movies already recommended; they are never repeated.
    pub fn respond(&self, ctx: &DialogContext, params: &TurnParams, session_movies: &[MovieId]) -> TurnOutcome {
        let intent = ranking::detect_intent(ctx, &self.chitchat);
        let queries = retrieval::build_context_queries(ctx, &self.preprocessor);
        let mut debug = TurnDebug {
            intent: intent.clone(),
            queries: queries.clone(),
            retrieved: BTreeMap::new(),
            pruned: BTreeMap::new(),
            pruning_unavailable: None,
            ranking: None,
            request: Request::None,
            strategy: None,
            recommendations: Vec::new(),
        };
        let sets = match retrieval::retrieve_candidates(&self.index, &self.corpus, &queries, params.retrieval) {
            Ok(s) => s,
            Err(e) => return self.fallback_outcome(e.to_string(), debug),
        };
        let mut pruned = Vec::with_capacity(sets.sets.len());
        for (config, set) in sets.sets {
            debug.retrieved.insert(config, set.iter().map(|c| c.source.clone()).collect());
            let kept = match pruning::prune(set.clone(), self.backend.as_ref()) {
                Ok(p) => p,
                Err(PruningError::EmptySet) => continue,
                Err(e @ PruningError::Unavailable(_)) => {
                    tracing::warn!(error = %e, "pruning skipped");
                    debug.pruning_unavailable = Some(e.to_string());
                    PrunedSet::unpruned(set)
                }
            };
            debug.pruned.insert(config, kept.clone());
            pruned.push((config, kept));
        }
        let ranked = match ranking::rank_and_select(&pruned, &self.model, &intent, &self.chitchat, params.boosts) {
            Ok(r) => r,
            Err(e) => return self.fallback_outcome(e.to_string(), debug),
        };
        let winner = ranked.winner().candidate.clone();
        debug.ranking = Some(ranked);

        let request = self.rewriter.detect_request(&ctx.last_seeker().text);
        debug.request = request.clone();
        let mut exclude: HashSet<MovieId> = session_movies.iter().copied().collect();
        exclude.extend(
            ctx.history()
                .iter()
                .filter(|u| u.speaker == Speaker::Seeker)
                .flat_map(|u| text::extract_mentions(&u.text))
                .filter_map(|m| self.mapping.resolve(m)),
        );

        let choice = recommend::choose_strategy(ctx, &self.genres);
        let mut recommendations = Vec::new();
        let filled = crate::metadata::fill_placeholders(&winner.raw_text, |index, mention, used| {
            let mut excluded = exclude.clone();
            excluded.extend(used.iter().copied());
            let rec = self.recommend_for_marker(&choice, mention, &params.popularity, &excluded).map_err(|e| {
                MetadataError::Unresolved { index, reason: e.to_string() }
            })?;
            let movie = self.catalog.get(rec.movie_id).expect("recommendations come from the catalog");
            let fill = MarkerFill { movie_id: rec.movie_id, title: movie.display_title() };
            recommendations.push(rec);
            Ok(fill)
        });
        debug.strategy = Some(choice);
        debug.recommendations = recommendations;
        let filled = match filled {
            Ok(f) => f,
            Err(e) => return self.fallback_outcome(e.to_string(), debug),
        };

        let movie = filled.movie_ids.first().and_then(|id| self.catalog.get(*id));
        let plot_subject = self.plot_subject(ctx, session_movies).or(movie);
        match self.rewriter.apply_metadata_rules(&filled, movie, &request, plot_subject, winner.source.clone()) {
            Ok(response) => TurnOutcome {
                response,
                fallback: false,
                fallback_reason: None,
                pre_substitution_text: winner.raw_text,
                debug,
            },
            Err(e) => self.fallback_outcome(e.to_string(), debug),
        }
    }

    /// Movie a description request refers to: one the seeker just named, else
    /// the most recent recommendation.
    fn plot_subject(&self, ctx: &DialogContext, session_movies: &[MovieId]) -> Option<&Movie> {
        let named = text::extract_mentions(&ctx.last_seeker().text).into_iter().rev().find_map(|m| self.mapping.resolve(m));
        named.or(session_movies.last().copied()).and_then(|id| self.catalog.get(id))
    }

    fn recommend_for_marker(
        &self,
        choice: &StrategyChoice,
        original: Option<MentionId>,
        filter: &PopularityFilter,
        exclude: &HashSet<MovieId>,
    ) -> Result<Recommendation, RecommendError> {
        let by_genre = || recommend::recommend_by_genre(&self.catalog, &self.genres, &choice.genre_terms, filter, exclude);
        let by_original = || self.original_movie(original, filter, exclude);
        match choice.strategy {
            Strategy::MovieBased => {
                let by_movie = |m| recommend::recommend_by_movie(&self.space, &self.catalog, m, filter, exclude);
                let result = match choice.anchor {
                    Some(Anchor::Movie(m)) => by_movie(m),
                    Some(Anchor::Mention(id)) => self.mapping.resolve(id).map_or(Err(RecommendError::UnmappedMention(id)), by_movie),
                    None => Err(RecommendError::NoCandidate),
                };
                match result {
                    Err(RecommendError::AnchorUnknown(_) | RecommendError::UnmappedMention(_)) if !choice.genre_terms.is_empty() => {
                        by_genre()
                    }
                    Err(RecommendError::AnchorUnknown(_) | RecommendError::UnmappedMention(_)) => by_original(),
                    other => other,
                }
            }
            Strategy::GenreBased => match by_genre() {
                Err(RecommendError::GenreUnknown(_)) => by_original(),
                other => other,
            },
            Strategy::OriginalMovie => by_original(),
        }
    }

    /// The movie named in the original corpus utterance, or its nearest
    /// neighbor when that movie was already used.
    fn original_movie(
        &self,
        original: Option<MentionId>,
        filter: &PopularityFilter,
        exclude: &HashSet<MovieId>,
    ) -> Result<Recommendation, RecommendError> {
        let mention = original.ok_or(RecommendError::NoCandidate)?;
        let id = self.mapping.resolve(mention).ok_or(RecommendError::UnmappedMention(mention))?;
        self.catalog.get(id).ok_or(RecommendError::UnmappedMention(mention))?;
        if !exclude.contains(&id) {
            return Ok(Recommendation {
                movie_id: id,
                strategy: Strategy::OriginalMovie,
                score: 1.0,
                relaxation: recommend::Relaxation::None,
                genre_overlap: true,
            });
        }
        let mut rec = recommend::recommend_by_movie(&self.space, &self.catalog, id, filter, exclude)?;
        rec.strategy = Strategy::OriginalMovie;
        Ok(rec)
    }
}
