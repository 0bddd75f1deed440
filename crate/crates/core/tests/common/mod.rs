#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retrocrs_core::catalog::{Genre, ItemCatalog, Movie, MovieId};
use retrocrs_core::config::PipelineConfig;
use retrocrs_core::corpus::{Corpus, CorpusPosition, Speaker};
use retrocrs_core::demo::{World, WorldSpec};
use retrocrs_core::embedding::{EmbeddingBackend, EmbeddingError, HashingBackend};
use retrocrs_core::eval::{ScoreRow, ScoreSheet};
use retrocrs_core::latent::Rating;
use retrocrs_core::lexical::LexicalIndex;
use retrocrs_core::pipeline::Pipeline;
use retrocrs_core::pruning::{prune, PrunedSet};
use retrocrs_core::ranking::{detect_intent, rank_and_select, BigramLanguageModel, BoostWeights, ChitChatLexicon, Ranking};
use retrocrs_core::retrieval::{build_context_queries, retrieve_candidates, CandidateResponse, ContextConfig, DialogContext, RetrievalParams};
use retrocrs_core::text::Preprocessor;

pub const TOY_VOCAB: [&str; 24] = [
    "movie", "like", "scary", "funny", "love", "watch", "seen", "great", "recommend", "comedy", "horror", "action",
    "drama", "old", "new", "classic", "film", "kids", "family", "night", "favorite", "actor", "story", "ending",
];

pub fn pos(dialog: &str, turn: usize) -> CorpusPosition {
    CorpusPosition { dialog_id: dialog.into(), turn_index: turn }
}

/// Skewed word draw so some terms are frequent and others rare.
pub fn toy_word(rng: &mut ChaCha8Rng) -> &'static str {
    let r: f64 = rng.random();
    TOY_VOCAB[((r * r) * TOY_VOCAB.len() as f64) as usize]
}

pub fn toy_text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| toy_word(rng)).collect::<Vec<_>>().join(" ")
}

/// Up to `max_docs` preprocessed documents spread over a few dialogs; some are empty.
pub fn toy_documents(rng: &mut ChaCha8Rng, max_docs: usize) -> Vec<(CorpusPosition, String)> {
    let n = rng.random_range(2..=max_docs);
    (0..n)
        .map(|i| {
            let text = if rng.random_bool(0.05) { String::new() } else { toy_text(rng, 1, 7) };
            (pos(&format!("d{}", i % 7), i), text)
        })
        .collect()
}

/// Exhaustive TF-IDF cosine ranking with dense vectors, best first; ties by position.
pub fn exhaustive_ranking(docs: &[(CorpusPosition, String)], query: &str) -> Vec<(CorpusPosition, f64)> {
    let vocab: BTreeSet<&str> = docs.iter().flat_map(|(_, t)| t.split_whitespace()).collect();
    let vocab: Vec<&str> = vocab.into_iter().collect();
    let n = docs.len() as f64;
    let idf: Vec<f64> = vocab
        .iter()
        .map(|term| {
            let df = docs.iter().filter(|(_, t)| t.split_whitespace().any(|w| w == *term)).count() as f64;
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        })
        .collect();
    let dense = |text: &str| -> Vec<f64> {
        let v: Vec<f64> =
            vocab.iter().zip(&idf).map(|(term, w)| text.split_whitespace().filter(|x| x == term).count() as f64 * w).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v
        } else {
            v.into_iter().map(|x| x / norm).collect()
        }
    };
    let q = dense(query);
    let mut scored: Vec<(CorpusPosition, f64)> = docs
        .iter()
        .map(|(p, t)| (p.clone(), dense(t).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()))
        .filter(|(_, c)| *c > 1e-12)
        .collect();
    // cosines equal to 1e-9 count as ties
    scored.sort_by(|(pa, ca), (pb, cb)| {
        let (ka, kb) = ((ca * 1e9).round() as i64, (cb * 1e9).round() as i64);
        kb.cmp(&ka).then_with(|| pa.cmp(pb))
    });
    scored
}

/// Compares index top-n against the exhaustive ranking for a few queries.
pub fn check_retrieval_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = toy_documents(&mut rng, 100);
    if docs.iter().all(|(_, t)| t.is_empty()) {
        return Ok(());
    }
    let index = LexicalIndex::from_documents(docs.iter().map(|(p, t)| (p.clone(), t.as_str())).collect()).map_err(|e| e.to_string())?;
    for _ in 0..6 {
        let mut query = toy_text(&mut rng, 1, 5);
        if rng.random_bool(0.2) {
            query.push_str(" unseenword");
        }
        let n = rng.random_range(1..=12);
        let got = index.query(&query, n).map_err(|e| e.to_string())?;
        let want: Vec<_> = exhaustive_ranking(&docs, &query).into_iter().take(n).collect();
        let got_pos: Vec<_> = got.iter().map(|h| h.position()).collect();
        let want_pos: Vec<_> = want.iter().map(|(p, _)| p.clone()).collect();
        if got_pos != want_pos {
            return Err(format!("seed {seed}, query {query:?}, n {n}: index {got_pos:?} vs exhaustive {want_pos:?}"));
        }
        for (h, (_, c)) in got.iter().zip(&want) {
            if (h.cosine - c).abs() > 1e-9 {
                return Err(format!("seed {seed}: cosine {} vs {c}", h.cosine));
            }
        }
    }
    Ok(())
}

/// Mean log bigram likelihood by scanning the training texts directly.
pub fn direct_fluency(train: &[String], tokens: &[&str]) -> Option<f64> {
    if tokens.len() < 2 {
        return None;
    }
    let seqs: Vec<Vec<&str>> = train.iter().map(|t| t.split_whitespace().collect()).collect();
    let vocab: BTreeSet<&str> = seqs.iter().flatten().copied().collect();
    let mut total = 0.0;
    for pair in tokens.windows(2) {
        let mut bigram = 0u64;
        let mut unigram = 0u64;
        for s in &seqs {
            for k in 0..s.len() {
                if s[k] == pair[0] {
                    unigram += 1;
                    if k + 1 < s.len() && s[k + 1] == pair[1] {
                        bigram += 1;
                    }
                }
            }
        }
        total += (bigram.max(1) as f64 / (unigram + vocab.len() as u64) as f64).ln();
    }
    Some(total / (tokens.len() - 1) as f64)
}

pub fn candidate(dialog: &str, turn: usize, raw: &str, preprocessed: &str) -> CandidateResponse {
    CandidateResponse {
        raw_text: raw.into(),
        preprocessed_text: preprocessed.into(),
        source: pos(dialog, turn),
        origin_config: ContextConfig::LastSeeker,
        source_similarity: 0.5,
        word_count: raw.split_whitespace().count(),
        original_mentioned_movie_ids: vec![],
    }
}

/// Returns stored vectors for known texts.
pub struct FixedBackend(pub HashMap<String, Vec<f64>>);

impl EmbeddingBackend for FixedBackend {
    fn name(&self) -> &str {
        "fixed"
    }

    fn dimension(&self) -> usize {
        self.0.values().next().map_or(0, Vec::len)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts.iter().map(|t| self.0.get(*t).cloned().ok_or_else(|| EmbeddingError::UnknownText((*t).into()))).collect()
    }
}

/// `size` candidates `c0..` with random vectors; with `outlier`, the last one
/// points away from a shared direction the others cluster around.
pub fn controlled_set(size: usize, seed: u64, outlier: bool) -> (Vec<CandidateResponse>, FixedBackend) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 8;
    let base: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..1.0)).collect();
    let mut vectors = HashMap::new();
    let mut cands = Vec::new();
    for i in 0..size {
        let text = format!("c{i}");
        let v: Vec<f64> = if outlier && i == size - 1 {
            base.iter().map(|x| -x + rng.random_range(-0.1..0.1)).collect()
        } else if outlier {
            base.iter().map(|x| x + rng.random_range(-0.15..0.15)).collect()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        vectors.insert(text.clone(), v);
        cands.push(candidate("p", i, &text, &text));
    }
    (cands, FixedBackend(vectors))
}

/// Pair count and outlier checks for one controlled set.
pub fn check_pruning_case(size: usize, seed: u64) -> Result<PrunedSet, String> {
    let (cands, backend) = controlled_set(size, seed, false);
    let set = prune(cands.clone(), &backend).map_err(|e| e.to_string())?;
    let pairs = size * (size - 1) / 2;
    let budget = pairs / size;
    if budget == 0 {
        if !set.skipped || set.retained != cands {
            return Err(format!("|S|={size}: expected the full set"));
        }
    } else if set.retained_pairs.len() != budget {
        return Err(format!("|S|={size}: kept {} pairs, expected {budget}", set.retained_pairs.len()));
    }
    Ok(set)
}

pub fn movie(id: u32, genres: &[&str], year: i32, mean: f64, count: u32) -> Movie {
    Movie {
        movie_id: MovieId(id),
        title: format!("Movie {id} ({year})"),
        genres: genres.iter().filter_map(|g| Genre::parse(g)).collect(),
        actors: vec![],
        year: Some(year),
        mean_rating: mean,
        rating_count: count,
        plot_summary: None,
    }
}

/// Ratings of 5 users on 6 movies (ids 1..=6).
pub const TOY_MATRIX: [[f32; 6]; 5] = [
    [5.0, 4.0, 1.0, 1.0, 2.0, 5.0],
    [4.0, 5.0, 2.0, 1.0, 1.0, 4.0],
    [1.0, 1.0, 5.0, 4.0, 3.0, 2.0],
    [2.0, 1.0, 4.0, 5.0, 4.0, 1.0],
    [3.0, 3.0, 3.0, 2.0, 5.0, 3.5],
];

pub fn matrix_ratings(m: &[[f32; 6]; 5]) -> Vec<Rating> {
    let mut out = Vec::new();
    for (u, row) in m.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            out.push(Rating { user: u as u32 + 1, movie: j as u32 + 1, rating: *r });
        }
    }
    out
}

/// Item vectors `U_f Σ_f` from a dense SVD of the item-by-user matrix.
pub fn dense_item_vectors(m: &[[f32; 6]; 5], f: usize) -> Vec<Vec<f64>> {
    let a = DMatrix::from_fn(6, 5, |i, u| m[u][i] as f64);
    let svd = a.svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    (0..6).map(|i| order.iter().take(f).map(|&k| u[(i, k)] * svd.singular_values[k]).collect()).collect()
}

pub fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Nearest other item by exhaustive cosine scan; ties to the lower id.
/// Returns `None` when the best two are within `1e-9`.
pub fn exhaustive_neighbor(vectors: &[Vec<f64>], anchor: usize) -> Option<usize> {
    let mut scored: Vec<(usize, f64)> =
        (0..vectors.len()).filter(|&j| j != anchor).map(|j| (j, dense_cosine(&vectors[anchor], &vectors[j]))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if scored.len() > 1 && (scored[0].1 - scored[1].1).abs() < 1e-9 {
        return None;
    }
    Some(scored[0].0)
}

/// Catalog of the six toy movies, all passing a zero filter and sharing a genre.
pub fn toy_catalog() -> ItemCatalog {
    ItemCatalog::new((1..=6).map(|i| movie(i, &["Drama"], 2000, 4.0, 5)).collect())
}

pub fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| World::generate(&WorldSpec::default()))
}

pub fn demo_pipeline() -> Arc<Pipeline> {
    static P: OnceLock<Arc<Pipeline>> = OnceLock::new();
    P.get_or_init(|| Arc::new(world().pipeline(PipelineConfig::default()).expect("demo pipeline"))).clone()
}

/// Retrieval, pruning and ranking of one context without the recommender stage.
pub fn rank_context(corpus: &Corpus, index: &LexicalIndex, model: &BigramLanguageModel, ctx: &DialogContext) -> Option<Ranking> {
    let pre = Preprocessor::default();
    let lexicon = ChitChatLexicon::default();
    let backend = HashingBackend::new(256);
    let queries = build_context_queries(ctx, &pre);
    let sets = retrieve_candidates(index, corpus, &queries, RetrievalParams::default()).ok()?;
    let pruned: Vec<(ContextConfig, PrunedSet)> = sets
        .sets
        .into_iter()
        .map(|(c, cands)| (c, prune(cands.clone(), &backend).unwrap_or_else(|_| PrunedSet::unpruned(cands))))
        .collect();
    rank_and_select(&pruned, model, &detect_intent(ctx, &lexicon), &lexicon, BoostWeights::default()).ok()
}

#[derive(Debug, Default)]
pub struct BandReport {
    pub situations: usize,
    pub candidates: usize,
    pub within: usize,
    pub mention_turns: usize,
    pub boost_violations: usize,
}

impl BandReport {
    pub fn fraction(&self) -> f64 {
        self.within as f64 / self.candidates.max(1) as f64
    }
}

/// Share of ranked candidates with fluency in `[-5.5, -0.5]`, and boosted
/// candidates (raw score at least -5) ranked below any unboosted one on
/// movie-mention turns.
pub fn perplexity_band(rankings: impl IntoIterator<Item = Ranking>) -> BandReport {
    use retrocrs_core::ranking::IntentKind;
    let mut r = BandReport::default();
    for ranking in rankings {
        r.situations += 1;
        r.candidates += ranking.ranked.len();
        r.within += ranking.ranked.iter().filter(|c| (-5.5..=-0.5).contains(&c.fluency_score)).count();
        if ranking.intent.kind == IntentKind::MovieMention {
            r.mention_turns += 1;
            let first_unboosted = ranking.ranked.iter().position(|c| c.intent_boost == 0).unwrap_or(usize::MAX);
            r.boost_violations += ranking
                .ranked
                .iter()
                .enumerate()
                .filter(|(i, c)| c.intent_boost > 0 && c.fluency_score >= -5.0 && *i > first_unboosted)
                .count();
        }
    }
    r
}

pub fn context_of(dialog: &retrocrs_core::corpus::Dialog, cut: usize) -> DialogContext {
    DialogContext::new(
        dialog.utterances[..cut]
            .iter()
            .map(|u| retrocrs_core::retrieval::ContextUtterance {
                speaker: u.speaker,
                text: u.raw_text.clone(),
                movies: vec![],
            })
            .collect(),
    )
    .unwrap()
}

pub fn is_seeker(s: Speaker) -> bool {
    s == Speaker::Seeker
}

/// Rating histograms (counts of 1..5) per system, 810 ratings each, shaped
/// after the published score distribution.
pub const STUDY_HISTOGRAMS: [(&str, [u32; 5]); 3] =
    [("kgsf", [148, 128, 131, 171, 232]), ("kbrd", [78, 104, 144, 206, 278]), ("retrocrs", [43, 95, 154, 223, 295])];

pub fn histogram_sheet(hists: &[(&str, [u32; 5])]) -> ScoreSheet {
    let mut rows = Vec::new();
    for (system, h) in hists {
        let mut k = 0;
        for (i, count) in h.iter().enumerate() {
            for _ in 0..*count {
                rows.push(ScoreRow {
                    situation_id: format!("s{:03}", k % 70 + 1),
                    system: (*system).into(),
                    rating: i as u8 + 1,
                    rater_id: format!("r{:02}", k % 90 + 1),
                });
                k += 1;
            }
        }
    }
    ScoreSheet { rows, anchors: vec![] }
}

/// Mean and sample standard deviation by two explicit passes.
pub fn manual_mean_sd(values: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / values.len() as f64;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    let sd = if values.len() > 1 { (ss / (values.len() - 1) as f64).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Runs a six-turn scripted session and returns the movies of each system turn.
pub fn scripted_session(store: &retrocrs_core::session::SessionStore, seed: u64) -> Vec<Vec<MovieId>> {
    use retrocrs_core::demo::MENTION_OFFSET;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let movies = world().catalog.movies();
    let mut mention = || format!("@{}", movies[rng.random_range(0..movies.len())].movie_id.0 as u64 + MENTION_OFFSET);
    let genres = ["scary", "funny", "romantic", "animated", "action"];
    let g1 = genres[seed as usize % genres.len()];
    let g2 = genres[(seed as usize + 2) % genres.len()];
    let script = [
        format!("hi there! can you recommend a good {g1} movie?"),
        format!("i loved {}", mention()),
        format!("seen that one. anything else like {}?", mention()),
        format!("what about something {g2}?"),
        "i have seen it already, another one please".to_owned(),
        "thanks, bye!".to_owned(),
    ];
    let id = store.create(&Default::default()).expect("session");
    for line in &script {
        store.post(&id, line).expect("turn");
    }
    let session = store.get(&id).unwrap();
    session.history.iter().filter(|t| t.speaker == Speaker::Recommender).map(|t| t.movies.clone()).collect()
}

/// First movie id recommended twice within one session, if any.
pub fn repeated_movie(turns: &[Vec<MovieId>]) -> Option<MovieId> {
    let mut seen = std::collections::HashSet::new();
    turns.iter().flatten().find(|m| !seen.insert(**m)).copied()
}
