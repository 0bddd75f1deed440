//! Pipeline configuration: defaults, an optional TOML file, then overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SplitSpec;
use crate::ranking::BoostWeights;
use crate::recommend::PopularityFilter;
use crate::retrieval::RetrievalParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dialog corpus, JSONL.
    pub corpus: Option<PathBuf>,
    /// MovieLens-layout ratings CSV.
    pub ratings: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Dialog mention id to catalog id mapping CSV.
    pub mapping: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Precomputed embeddings JSONL for the `precomputed` backend.
    pub embeddings: Option<PathBuf>,
    /// Saved lexical index; built from the corpus when absent.
    pub index: Option<PathBuf>,
    /// Saved latent item factors; computed from the ratings when absent.
    pub factors: Option<PathBuf>,
    pub genre_keywords: Option<PathBuf>,
    pub genre_forms: Option<PathBuf>,
    pub chitchat: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Directory for per-session JSONL journals.
    pub journal_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Hashing,
    Precomputed,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: BackendKind,
    pub dimension: usize,
    pub url: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { backend: BackendKind::Hashing, dimension: 256, url: None, timeout_ms: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidates kept per context configuration.
    pub n: usize,
    /// Candidate length bounds in words.
    pub min_words: usize,
    pub max_words: usize,
    pub boost_recommend: i32,
    pub boost_chitchat: i32,
    pub latent_factors: usize,
    pub popularity: PopularityFilter,
    pub seed: u64,
    /// Share of unpinned dialogs assigned to the train split.
    pub train_ratio: f64,
    /// Fallback answer; must occur verbatim as a train recommender utterance.
    pub fallback_text: Option<String>,
    pub turn_timeout_ms: u64,
    pub embedding: EmbeddingConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let r = RetrievalParams::default();
        let b = BoostWeights::default();
        PipelineConfig {
            n: r.n,
            min_words: r.min_words,
            max_words: r.max_words,
            boost_recommend: b.recommend,
            boost_chitchat: b.chitchat,
            latent_factors: 20,
            popularity: PopularityFilter::default(),
            seed: 42,
            train_ratio: SplitSpec::default().train_ratio,
            fallback_text: None,
            turn_timeout_ms: 5000,
            embedding: EmbeddingConfig::default(),
            paths: Paths::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub n: Option<usize>,
    pub min_words: Option<usize>,
    pub max_words: Option<usize>,
    pub boost_recommend: Option<i32>,
    pub boost_chitchat: Option<i32>,
    pub latent_factors: Option<usize>,
    pub min_mean_rating: Option<f64>,
    pub min_rating_count: Option<u32>,
    pub min_year: Option<i32>,
    pub seed: Option<u64>,
    pub train_ratio: Option<f64>,
    pub embedding_backend: Option<BackendKind>,
    pub corpus: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub factors: Option<PathBuf>,
}

/// Environment variables that may override paths, and only paths.
pub const PATH_ENV_VARS: [&str; 8] = [
    "RETROCRS_CORPUS",
    "RETROCRS_RATINGS",
    "RETROCRS_CATALOG",
    "RETROCRS_MAPPING",
    "RETROCRS_RULES",
    "RETROCRS_EMBEDDINGS",
    "RETROCRS_INDEX",
    "RETROCRS_FACTORS",
];

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: origin.into(), source })
    }

    /// Defaults, or the file at `path` layered over them.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
                Self::from_toml(&text, &p.display().to_string())
            }
        }
    }

    /// Path overrides from `RETROCRS_*` variables, looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        let p = &mut self.paths;
        let slots: [&mut Option<PathBuf>; 8] = [
            &mut p.corpus,
            &mut p.ratings,
            &mut p.catalog,
            &mut p.mapping,
            &mut p.rules,
            &mut p.embeddings,
            &mut p.index,
            &mut p.factors,
        ];
        for (name, slot) in PATH_ENV_VARS.iter().zip(slots) {
            if let Some(v) = var(name).filter(|v| !v.is_empty()) {
                *slot = Some(PathBuf::from(v));
            }
        }
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        set(&mut self.n, o.n);
        set(&mut self.min_words, o.min_words);
        set(&mut self.max_words, o.max_words);
        set(&mut self.boost_recommend, o.boost_recommend);
        set(&mut self.boost_chitchat, o.boost_chitchat);
        set(&mut self.latent_factors, o.latent_factors);
        set(&mut self.popularity.min_mean_rating, o.min_mean_rating);
        set(&mut self.popularity.min_rating_count, o.min_rating_count);
        set(&mut self.popularity.min_year, o.min_year);
        set(&mut self.seed, o.seed);
        set(&mut self.train_ratio, o.train_ratio);
        set(&mut self.embedding.backend, o.embedding_backend);
        let p = &mut self.paths;
        for (slot, v) in [
            (&mut p.corpus, &o.corpus),
            (&mut p.ratings, &o.ratings),
            (&mut p.catalog, &o.catalog),
            (&mut p.mapping, &o.mapping),
            (&mut p.rules, &o.rules),
            (&mut p.embeddings, &o.embeddings),
            (&mut p.index, &o.index),
            (&mut p.factors, &o.factors),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if self.min_words < 1 {
            return bad("min_words must be at least 1".into());
        }
        if self.max_words < self.min_words {
            return bad(format!("max_words {} is below min_words {}", self.max_words, self.min_words));
        }
        if self.latent_factors < 1 {
            return bad("latent_factors must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.train_ratio) {
            return bad(format!("train_ratio {} is outside [0, 1]", self.train_ratio));
        }
        if !self.popularity.min_mean_rating.is_finite() {
            return bad("popularity.min_mean_rating must be finite".into());
        }
        if self.turn_timeout_ms == 0 {
            return bad("turn_timeout_ms must be positive".into());
        }
        if self.embedding.dimension < 1 {
            return bad("embedding.dimension must be at least 1".into());
        }
        match self.embedding.backend {
            BackendKind::Http if self.embedding.url.is_none() => bad("embedding.url is required for the http backend".into()),
            BackendKind::Precomputed if self.paths.embeddings.is_none() => {
                bad("paths.embeddings is required for the precomputed backend".into())
            }
            _ => Ok(()),
        }
    }

    pub fn retrieval(&self) -> RetrievalParams {
        RetrievalParams { n: self.n, min_words: self.min_words, max_words: self.max_words }
    }

    pub fn boosts(&self) -> BoostWeights {
        BoostWeights { recommend: self.boost_recommend, chitchat: self.boost_chitchat }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec { train_ratio: self.train_ratio, seed: self.seed }
    }

    pub fn turn_timeout(&self) -> Duration {
        Duration::from_millis(self.turn_timeout_ms)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
