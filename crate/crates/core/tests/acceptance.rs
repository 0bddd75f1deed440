//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed; exits non-zero if any check fails.
//!
//! Checks on the real dialog corpus read it from `REDIAL_CORPUS` (corpus JSONL
//! as written by `retrocrs ingest redial`) and fail when it is not set.

mod common;

use std::collections::HashSet;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retrocrs_core::config::PipelineConfig;
use retrocrs_core::corpus::{compute_corpus_stats, Corpus, Speaker, SplitSpec};
use retrocrs_core::demo;
use retrocrs_core::eval::{aggregate_scores, generate_responses, sample_situations, ScoreSheet};
use retrocrs_core::latent::factorize;
use retrocrs_core::lexical::LexicalIndex;
use retrocrs_core::pipeline::Pipeline;
use retrocrs_core::pruning::prune;
use retrocrs_core::ranking::{score_fluency, BigramLanguageModel};
use retrocrs_core::recommend::{recommend_by_movie, PopularityFilter};
use retrocrs_core::session::SessionStore;
use retrocrs_core::text::{self, Preprocessor, PLACEHOLDER};

use common::*;

type Check = fn() -> Result<String, String>;

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed > limit {
        return Err(format!("{what} took {:.2?}, limit {limit:?}", elapsed));
    }
    Ok(())
}

fn redial_corpus() -> Result<Corpus, String> {
    let path = std::env::var_os("REDIAL_CORPUS").map(PathBuf::from).ok_or("REDIAL_CORPUS is not set; the ReDial corpus is required")?;
    Corpus::load(&path, SplitSpec::default(), &Preprocessor::default()).map_err(|e| format!("{}: {e}", path.display()))
}

fn corpus_statistics() -> Result<String, String> {
    let synthetic = {
        let c = demo_pipeline();
        let s = compute_corpus_stats(c.corpus().train(), 3, 20).map_err(|e| e.to_string())?;
        format!("synthetic corpus: mean {:.2}, fraction {:.3}", s.mean_recommender_response_length, s.fraction_within_length_bounds)
    };
    let started = Instant::now();
    let corpus = redial_corpus().map_err(|e| format!("{e} ({synthetic}, not comparable)"))?;
    let s = compute_corpus_stats(corpus.train(), 3, 20).map_err(|e| e.to_string())?;
    within(started.elapsed(), Duration::from_secs(60), "load and stats")?;
    let detail = format!(
        "mean {:.3} words (9.7 +- 0.5), fraction {:.4} (0.75 +- 0.05) over {} utterances",
        s.mean_recommender_response_length, s.fraction_within_length_bounds, s.recommender_utterances
    );
    if (s.mean_recommender_response_length - 9.7).abs() <= 0.5 && (s.fraction_within_length_bounds - 0.75).abs() <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn retrieval_oracle() -> Result<String, String> {
    let started = Instant::now();
    for seed in 0..50 {
        check_retrieval_case(seed)?;
    }
    within(started.elapsed(), Duration::from_secs(10), "50 corpora")?;
    Ok(format!("50 toy corpora, 300 queries equal to exhaustive ranking in {:.2?}", started.elapsed()))
}

fn fluency_oracle() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for corpus in 0..10 {
        let train: Vec<String> = (0..rng.random_range(5..60)).map(|_| toy_text(&mut rng, 1, 12)).collect();
        let model = BigramLanguageModel::from_texts(train.iter().map(String::as_str)).map_err(|e| e.to_string())?;
        for k in 0..20 {
            let len = rng.random_range(2..10);
            let tokens: Vec<&str> =
                (0..len).map(|_| if rng.random_bool(0.1) { "zzzunseen" } else { toy_word(&mut rng) }).collect();
            let text = tokens.join(" ");
            let got = score_fluency(&model, &candidate("f", corpus * 20 + k, &text, &text)).map_err(|e| e.to_string())?;
            let want = direct_fluency(&train, &tokens).unwrap();
            worst = worst.max((got - want).abs());
        }
    }
    within(started.elapsed(), Duration::from_secs(5), "200 candidates")?;
    if worst > 1e-9 {
        return Err(format!("max deviation {worst:e} > 1e-9"));
    }
    Ok(format!("200 candidates, max deviation {worst:e}"))
}

fn perplexity_band_check() -> Result<String, String> {
    let synthetic = {
        let p = demo_pipeline();
        let situations = sample_situations(p.corpus().test(), 70, 3).map_err(|e| e.to_string())?;
        let r = perplexity_band(
            situations.iter().filter_map(|s| rank_context(p.corpus(), p.index(), p.model(), &s.context())),
        );
        format!("synthetic corpus: {:.3} within band, {} boost violations", r.fraction(), r.boost_violations)
    };
    let corpus = redial_corpus().map_err(|e| format!("{e} ({synthetic}, not comparable)"))?;
    let index = LexicalIndex::build(corpus.train()).map_err(|e| e.to_string())?;
    let model = BigramLanguageModel::train(corpus.train()).map_err(|e| e.to_string())?;
    let situations = sample_situations(corpus.test(), 150, 42).map_err(|e| e.to_string())?;
    let r = perplexity_band(situations.iter().filter_map(|s| rank_context(&corpus, &index, &model, &s.context())));
    let detail = format!(
        "{} situations, {} candidates, {:.4} within [-5.5, -0.5], {} movie-mention turns, {} boost violations",
        r.situations,
        r.candidates,
        r.fraction(),
        r.mention_turns,
        r.boost_violations
    );
    if r.situations >= 100 && r.fraction() >= 0.9 && r.boost_violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pruning_conformance() -> Result<String, String> {
    let started = Instant::now();
    let mut sets = 0;
    for size in 2..=10 {
        for seed in 0..20 {
            check_pruning_case(size, seed)?;
            sets += 1;
        }
    }
    for seed in 0..200 {
        let (cands, backend) = controlled_set(5, seed, true);
        let kept = prune(cands, &backend).map_err(|e| e.to_string())?;
        if kept.retained.iter().any(|c| c.raw_text == "c4") {
            return Err(format!("planted outlier retained for seed {seed}"));
        }
    }
    within(started.elapsed(), Duration::from_secs(5), "pruning checks")?;
    Ok(format!("{sets} sets of size 2..10 kept floor(|P|/|S|) pairs; outlier never kept in 200 sets"))
}

fn grammaticality() -> Result<String, String> {
    let p = demo_pipeline();
    let train: HashSet<&str> = p
        .corpus()
        .train()
        .flat_map(|d| &d.utterances)
        .filter(|u| u.speaker == Speaker::Recommender)
        .map(|u| u.raw_text.as_str())
        .collect();
    let situations = sample_situations(p.corpus().test(), 70, 42).map_err(|e| e.to_string())?;
    let mut fallbacks = 0;
    for s in &situations {
        let out = p.respond(&s.context(), &p.default_params(), &[]);
        if !train.contains(out.pre_substitution_text.as_str()) {
            return Err(format!("{}: {:?} is not a train recommender utterance", s.situation_id, out.pre_substitution_text));
        }
        let text = &out.response.text;
        if text.contains(PLACEHOLDER) || !text::marker_spans(text).is_empty() {
            return Err(format!("{}: placeholder left in {text:?}", s.situation_id));
        }
        fallbacks += out.fallback as usize;
    }
    Ok(format!("70 situations, all verbatim train utterances, no placeholders ({fallbacks} fallbacks)"))
}

fn recommender_oracle() -> Result<String, String> {
    let space = factorize(&matrix_ratings(&TOY_MATRIX), 2, 42).map_err(|e| e.to_string())?;
    let dense = dense_item_vectors(&TOY_MATRIX, 2);
    let catalog = toy_catalog();
    let open = PopularityFilter { min_mean_rating: 0.0, min_rating_count: 0, min_year: 0 };
    for anchor in 0..6 {
        let want = exhaustive_neighbor(&dense, anchor).ok_or(format!("anchor {} has a near tie", anchor + 1))?;
        let got = recommend_by_movie(&space, &catalog, retrocrs_core::catalog::MovieId(anchor as u32 + 1), &open, &HashSet::new())
            .map_err(|e| e.to_string())?;
        if got.movie_id.0 as usize != want + 1 {
            return Err(format!("anchor {}: got {}, exhaustive scan {}", anchor + 1, got.movie_id, want + 1));
        }
    }
    let store = SessionStore::new(demo_pipeline(), None);
    let mut recommended = 0;
    for seed in 0..20 {
        let turns = scripted_session(&store, seed);
        if let Some(m) = repeated_movie(&turns) {
            return Err(format!("session {seed} recommended {m} twice"));
        }
        recommended += turns.iter().map(Vec::len).sum::<usize>();
    }
    Ok(format!("6/6 anchors match the exhaustive scan; 20 sessions, {recommended} recommendations, no repeats"))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = demo::World::generate(&demo::WorldSpec::default()).write(dir.path()).map_err(|e| e.to_string())?;
    let run = || -> Result<Vec<u8>, String> {
        let config: PipelineConfig = demo::config_for(&paths);
        let p = Pipeline::assemble(config).map_err(|e| e.to_string())?;
        let situations = sample_situations(p.corpus().test(), 70, 42).map_err(|e| e.to_string())?;
        let out = generate_responses(&situations, &p, &p.default_params(), "retrocrs");
        let mut bytes = Vec::new();
        out.table.write_csv(&mut bytes).map_err(|e| e.to_string())?;
        Ok(bytes)
    };
    let (a, b) = (run()?, run()?);
    if a != b {
        return Err("response tables differ between runs".into());
    }
    Ok(format!("two runs, identical {}-byte response tables", a.len()))
}

fn aggregation() -> Result<String, String> {
    let mut csv = Vec::new();
    histogram_sheet(&STUDY_HISTOGRAMS).write(&mut csv).map_err(|e| e.to_string())?;
    let (sheet, rejected) = ScoreSheet::parse(csv.as_slice(), "study").map_err(|e| e.to_string())?;
    if !rejected.is_empty() {
        return Err(format!("{} rows rejected", rejected.len()));
    }
    let scores = aggregate_scores(&sheet).map_err(|e| e.to_string())?;
    let mut means = Vec::new();
    for (system, want) in [("retrocrs", 3.78), ("kbrd", 3.62), ("kgsf", 3.26)] {
        let s = scores.iter().find(|s| s.system == system).ok_or(format!("{system} missing"))?;
        if (s.mean - want).abs() > 1e-2 {
            return Err(format!("{system}: mean {:.4}, expected {want}", s.mean));
        }
        means.push(format!("{system} {:.4} (sd {:.3})", s.mean, s.sd));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..50 {
        let ratings: Vec<u8> = (0..6).map(|_| rng.random_range(1..=5)).collect();
        let sheet = ScoreSheet {
            rows: ratings
                .iter()
                .enumerate()
                .map(|(i, r)| retrocrs_core::eval::ScoreRow {
                    situation_id: format!("s{i}"),
                    system: "x".into(),
                    rating: *r,
                    rater_id: "r".into(),
                })
                .collect(),
            anchors: vec![],
        };
        let got = &aggregate_scores(&sheet).map_err(|e| e.to_string())?[0];
        let (mean, sd) = manual_mean_sd(&ratings.iter().map(|&r| r as f64).collect::<Vec<_>>());
        if (got.mean - mean).abs() > 1e-12 || (got.sd - sd).abs() > 1e-12 {
            return Err(format!("sheet {k} {ratings:?}: got {}/{}, manual {mean}/{sd}", got.mean, got.sd));
        }
    }
    Ok(format!("{}; 50 six-row sheets match manual mean/sd to 1e-12", means.join(", ")))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("corpus statistics", corpus_statistics),
        ("retrieval oracle equivalence", retrieval_oracle),
        ("fluency oracle", fluency_oracle),
        ("perplexity band", perplexity_band_check),
        ("pruning conformance", pruning_conformance),
        ("grammaticality by construction", grammaticality),
        ("recommender oracle", recommender_oracle),
        ("determinism", determinism),
        ("aggregation", aggregation),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = started.elapsed();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
