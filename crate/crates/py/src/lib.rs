//! Python bindings: `import retrocrs`.
//!
//! Structured results are returned as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use retrocrs_core::config::{ConfigOverrides, PipelineConfig};
use retrocrs_core::corpus::{compute_corpus_stats, Corpus, CorpusPosition};
use retrocrs_core::demo::{World, WorldSpec};
use retrocrs_core::eval::{aggregate_scores as aggregate, ScoreSheet};
use retrocrs_core::lexical::LexicalIndex as CoreIndex;
use retrocrs_core::pipeline::Pipeline as CorePipeline;
use retrocrs_core::ranking::BigramLanguageModel;
use retrocrs_core::retrieval::{ContextUtterance, DialogContext};
use retrocrs_core::session::{SessionError, SessionOverrides, SessionStore as CoreStore};
use retrocrs_core::text::Preprocessor;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::NotFound(_) | SessionError::TurnNotFound { .. } => PyKeyError::new_err(e.to_string()),
        SessionError::InvalidInput(_) => value_err(e),
        SessionError::Journal { .. } => runtime_err(e),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn context(utterances: Vec<String>) -> PyResult<DialogContext> {
    DialogContext::new(utterances.into_iter().map(ContextUtterance::seeker).collect()).map_err(value_err)
}

/// Assembled recommender: index, language model, catalog and item vectors.
#[pyclass(frozen, module = "retrocrs")]
struct Pipeline {
    inner: Arc<CorePipeline>,
}

#[pymethods]
impl Pipeline {
    /// Loads the artifacts named by a TOML config file. Keyword arguments override
    /// numeric settings (n, min_words, max_words, boost_recommend, boost_chitchat,
    /// latent_factors, seed).
    #[staticmethod]
    #[pyo3(signature = (path=None, *, n=None, min_words=None, max_words=None, boost_recommend=None, boost_chitchat=None, latent_factors=None, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn from_config(
        py: Python<'_>,
        path: Option<PathBuf>,
        n: Option<usize>,
        min_words: Option<usize>,
        max_words: Option<usize>,
        boost_recommend: Option<i32>,
        boost_chitchat: Option<i32>,
        latent_factors: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut config = PipelineConfig::load(path.as_deref()).map_err(value_err)?;
        config.apply(&ConfigOverrides { n, min_words, max_words, boost_recommend, boost_chitchat, latent_factors, seed, ..Default::default() });
        let pipeline = py.detach(|| CorePipeline::assemble(config)).map_err(runtime_err)?;
        Ok(Pipeline { inner: Arc::new(pipeline) })
    }

    /// Pipeline over a generated synthetic world.
    #[staticmethod]
    #[pyo3(signature = (seed=7, dialogs=600, movies=160))]
    fn demo(py: Python<'_>, seed: u64, dialogs: usize, movies: usize) -> PyResult<Self> {
        let spec = WorldSpec { seed, dialogs, movies, ..WorldSpec::default() };
        let pipeline = py.detach(|| World::generate(&spec).pipeline(PipelineConfig::default())).map_err(runtime_err)?;
        Ok(Pipeline { inner: Arc::new(pipeline) })
    }

    /// Runs one turn for the given seeker utterances (oldest first).
    ///
    /// Returns a dict with `response`, `movie_id`, `fallback`, `provenance`,
    /// `pre_substitution_text` and `ranking`.
    #[pyo3(signature = (utterances, exclude=Vec::new()))]
    fn respond<'py>(&self, py: Python<'py>, utterances: Vec<String>, exclude: Vec<u32>) -> PyResult<Bound<'py, PyAny>> {
        let ctx = context(utterances)?;
        let exclude: Vec<_> = exclude.into_iter().map(retrocrs_core::catalog::MovieId).collect();
        let p = Arc::clone(&self.inner);
        let out = py.detach(|| p.respond(&ctx, &p.default_params(), &exclude));
        let ranking: Vec<_> = out
            .debug
            .ranking
            .iter()
            .flat_map(|r| &r.ranked)
            .map(|c| {
                serde_json::json!({
                    "text": c.candidate.raw_text,
                    "fluency": c.fluency_score,
                    "boost": c.intent_boost,
                    "score": c.final_score,
                    "source": c.candidate.source,
                })
            })
            .collect();
        let reply = serde_json::json!({
            "response": out.response.text,
            "movie_id": out.response.recommended_movie_id,
            "fallback": out.fallback,
            "provenance": out.response.provenance,
            "pre_substitution_text": out.pre_substitution_text,
            "ranking": ranking,
        });
        to_py(py, &reply)
    }

    /// Whether `text` is a recommender utterance of the train split.
    fn is_train_response(&self, text: &str) -> bool {
        self.inner.is_train_response(text)
    }

    /// Raw text of the corpus utterance at `(dialog_id, turn_index)`.
    fn utterance(&self, dialog_id: String, turn_index: usize) -> Option<String> {
        self.inner.corpus().utterance(&CorpusPosition { dialog_id, turn_index }).map(|u| u.raw_text.clone())
    }

    /// Catalog entry as a dict, or None.
    fn movie<'py>(&self, py: Python<'py>, movie_id: u32) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.catalog().get(retrocrs_core::catalog::MovieId(movie_id)).map(|m| to_py(py, m)).transpose()
    }

    /// Fluency score of a raw utterance under the train-split bigram model, or None.
    fn fluency(&self, text: &str) -> Option<f64> {
        let pre = self.inner.preprocessor().preprocess(text);
        let tokens: Vec<&str> = pre.text.split_whitespace().collect();
        self.inner.model().score_tokens(&tokens).ok()
    }

    /// Length statistics of train recommender utterances.
    fn corpus_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let c = self.inner.config();
        let s = compute_corpus_stats(self.inner.corpus().train(), c.min_words, c.max_words).map_err(value_err)?;
        to_py(py, &s)
    }
}

/// Chat sessions over a shared pipeline.
#[pyclass(frozen, module = "retrocrs")]
struct SessionStore {
    inner: Arc<CoreStore>,
}

#[pymethods]
impl SessionStore {
    #[new]
    #[pyo3(signature = (pipeline, journal_dir=None))]
    fn new(pipeline: &Pipeline, journal_dir: Option<PathBuf>) -> Self {
        SessionStore { inner: Arc::new(CoreStore::new(Arc::clone(&pipeline.inner), journal_dir)) }
    }

    /// Starts a session and returns its id. Keyword arguments override turn parameters.
    #[pyo3(signature = (*, n=None, min_words=None, max_words=None, boost_recommend=None, boost_chitchat=None))]
    fn create(
        &self,
        n: Option<usize>,
        min_words: Option<usize>,
        max_words: Option<usize>,
        boost_recommend: Option<i32>,
        boost_chitchat: Option<i32>,
    ) -> PyResult<String> {
        let o = SessionOverrides { n, min_words, max_words, boost_recommend, boost_chitchat, ..Default::default() };
        self.inner.create(&o).map_err(session_err)
    }

    /// Sends a seeker utterance; returns `response`, `movie_id`, `fallback`, `turn` and `latency_ms`.
    fn post<'py>(&self, py: Python<'py>, session_id: &str, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let store = Arc::clone(&self.inner);
        let reply = py.detach(|| store.post(session_id, text)).map_err(session_err)?;
        let out = serde_json::json!({
            "response": reply.outcome.response.text,
            "movie_id": reply.outcome.response.recommended_movie_id,
            "fallback": reply.outcome.fallback,
            "turn": reply.turn,
            "latency_ms": reply.latency_ms,
        });
        to_py(py, &out)
    }

    /// Full session state: history, recommended ids and frozen parameters.
    fn transcript<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.get(session_id).map_err(session_err)?)
    }

    /// Ranking debug record of one system turn.
    fn debug<'py>(&self, py: Python<'py>, session_id: &str, turn: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.debug(session_id, turn).map_err(session_err)?)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// TF-IDF index over `(dialog_id, turn_index, text)` documents. Texts are
/// preprocessed with the default stop words.
#[pyclass(frozen, module = "retrocrs")]
struct LexicalIndex {
    inner: CoreIndex,
    pre: Preprocessor,
}

#[pymethods]
impl LexicalIndex {
    #[new]
    fn new(documents: Vec<(String, usize, String)>) -> PyResult<Self> {
        let pre = Preprocessor::default();
        let texts: Vec<(CorpusPosition, String)> = documents
            .into_iter()
            .map(|(dialog_id, turn_index, raw)| (CorpusPosition { dialog_id, turn_index }, pre.preprocess(&raw).text))
            .collect();
        let docs = texts.iter().map(|(p, t)| (p.clone(), t.as_str())).collect();
        Ok(LexicalIndex { inner: CoreIndex::from_documents(docs).map_err(value_err)?, pre })
    }

    /// Top hits as `(dialog_id, turn_index, cosine)`, best first.
    fn query(&self, text: &str, top_n: usize) -> PyResult<Vec<(String, usize, f64)>> {
        let hits = self.inner.query(&self.pre.preprocess(text).text, top_n).map_err(value_err)?;
        Ok(hits.into_iter().map(|h| (h.dialog_id, h.turn_index, h.cosine)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn vocabulary_size(&self) -> usize {
        self.inner.vocabulary_size()
    }
}

/// Length statistics of train recommender utterances in a corpus JSONL file.
#[pyfunction]
#[pyo3(signature = (path, lower=3, upper=20))]
fn corpus_stats<'py>(py: Python<'py>, path: PathBuf, lower: usize, upper: usize) -> PyResult<Bound<'py, PyAny>> {
    let config = PipelineConfig::default();
    let corpus = Corpus::load(&path, config.split(), &Preprocessor::default()).map_err(value_err)?;
    to_py(py, &compute_corpus_stats(corpus.train(), lower, upper).map_err(value_err)?)
}

/// Per-system mean, standard deviation and histogram of a scored sheet.
#[pyfunction]
fn aggregate_scores<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (sheet, _) = ScoreSheet::load(&path).map_err(value_err)?;
    to_py(py, &aggregate(&sheet).map_err(value_err)?)
}

/// Fluency of `text` under a bigram model trained on `train` utterances.
#[pyfunction]
fn fluency(train: Vec<String>, text: &str) -> PyResult<Option<f64>> {
    let pre = Preprocessor::default();
    let docs: Vec<String> = train.iter().map(|t| pre.preprocess(t).text).collect();
    let model = BigramLanguageModel::from_texts(docs.iter().map(String::as_str)).map_err(value_err)?;
    let text = pre.preprocess(text).text;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    Ok(model.score_tokens(&tokens).ok())
}

#[pymodule]
pub fn retrocrs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pipeline>()?;
    m.add_class::<SessionStore>()?;
    m.add_class::<LexicalIndex>()?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_scores, m)?)?;
    m.add_function(wrap_pyfunction!(fluency, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
