mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retrocrs_core::corpus::{Corpus, DialogRecord, Speaker, Split, SplitSpec};
use retrocrs_core::lexical::LexicalIndex;
use retrocrs_core::retrieval::{build_context_queries, retrieve_candidates, ContextConfig, RetrievalParams};
use retrocrs_core::text::{Preprocessor, PLACEHOLDER};

use common::*;

fn docs_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(TOY_VOCAB.to_vec()), 0..7), 1..60)
        .prop_map(|docs| docs.into_iter().map(|d| d.join(" ")).collect())
}

fn query_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(TOY_VOCAB.to_vec()), 1..6).prop_map(|q| q.join(" "))
}

fn positioned(docs: &[String]) -> Vec<(retrocrs_core::corpus::CorpusPosition, String)> {
    docs.iter().enumerate().map(|(i, t)| (pos(&format!("d{}", i % 5), i), t.clone())).collect()
}

#[test]
fn fifty_toy_corpora_match_exhaustive_ranking() {
    for seed in 0..50 {
        check_retrieval_case(seed).unwrap();
    }
}

proptest! {
    #[test]
    fn index_ranking_equals_exhaustive_scan(docs in docs_strategy(), query in query_strategy(), n in 1usize..20) {
        prop_assume!(docs.iter().any(|d| !d.is_empty()));
        let docs = positioned(&docs);
        let index = LexicalIndex::from_documents(docs.iter().map(|(p, t)| (p.clone(), t.as_str())).collect()).unwrap();
        let got = index.query(&query, n).unwrap();
        let want: Vec<_> = exhaustive_ranking(&docs, &query).into_iter().take(n).collect();
        prop_assert_eq!(got.len(), want.len());
        for (h, (p, c)) in got.iter().zip(&want) {
            prop_assert_eq!(&h.position(), p);
            prop_assert!((h.cosine - c).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&h.cosine));
        }
    }

    #[test]
    fn rows_are_unit_or_zero(docs in docs_strategy()) {
        prop_assume!(docs.iter().any(|d| !d.is_empty()));
        let docs = positioned(&docs);
        let index = LexicalIndex::from_documents(docs.iter().map(|(p, t)| (p.clone(), t.as_str())).collect()).unwrap();
        for r in 0..index.rows() as u32 {
            let row = index.row(r);
            prop_assert!(row.iter().all(|(_, w)| *w >= 0.0));
            let norm: f64 = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            prop_assert!(row.is_empty() || (norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn load_order_does_not_change_ranking(docs in docs_strategy(), query in query_strategy(), seed in any::<u64>()) {
        prop_assume!(docs.iter().any(|d| !d.is_empty()));
        let docs = positioned(&docs);
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = LexicalIndex::from_documents(docs.iter().map(|(p, t)| (p.clone(), t.as_str())).collect()).unwrap();
        let b = LexicalIndex::from_documents(shuffled.iter().map(|(p, t)| (p.clone(), t.as_str())).collect()).unwrap();
        let ra = a.ranking(&query);
        let rb = b.ranking(&query);
        prop_assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert_eq!(x.position(), y.position());
            prop_assert!((x.cosine - y.cosine).abs() < 1e-12);
        }
    }
}

#[test]
fn saved_index_ranks_identically() {
    let p = demo_pipeline();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    p.index().save(&path).unwrap();
    let loaded = LexicalIndex::load(&path).unwrap();
    for q in ["scary movie", "love comedy funny", "thanks bye", "zzz"] {
        assert_eq!(p.index().ranking(q), loaded.ranking(q));
    }
}

#[test]
fn index_covers_train_seekers_only() {
    let p = demo_pipeline();
    let corpus = p.corpus();
    let train_seekers = corpus.train().flat_map(|d| &d.utterances).filter(|u| u.speaker == Speaker::Seeker).count();
    assert_eq!(p.index().rows(), train_seekers);
    for r in 0..p.index().rows() as u32 {
        let pos = p.index().row_position(r);
        let u = corpus.utterance(pos).unwrap();
        assert_eq!(u.speaker, Speaker::Seeker);
        assert_eq!(corpus.dialog(&pos.dialog_id).unwrap().split, Split::Train);
    }
}

#[test]
fn candidates_are_verbatim_bounded_and_capped() {
    let p = demo_pipeline();
    let corpus = p.corpus();
    let pre = Preprocessor::default();
    let params = RetrievalParams { n: 4, min_words: 3, max_words: 12 };
    let mut checked = 0;
    for d in corpus.test() {
        for cut in retrocrs_core::eval::valid_cuts(d) {
            let ctx = context_of(d, cut);
            let queries = build_context_queries(&ctx, &pre);
            let last = &queries[0];
            assert_eq!(last.config, ContextConfig::LastSeeker);
            for q in &queries {
                assert!(q.text.ends_with(&last.text), "{:?} does not extend {:?}", q.text, last.text);
            }
            let Ok(sets) = retrieve_candidates(p.index(), corpus, &queries, params) else { continue };
            for cands in sets.sets.values() {
                assert!(cands.len() <= params.n);
                for c in cands {
                    let stored = corpus.utterance(&c.source).unwrap();
                    assert_eq!(stored.raw_text, c.raw_text);
                    assert_eq!(stored.speaker, Speaker::Recommender);
                    assert!((params.min_words..=params.max_words).contains(&c.word_count));
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn preprocessing_round_trips_and_counts_placeholders() {
    let p = demo_pipeline();
    let pre = Preprocessor::default();
    for u in p.corpus().dialogs().iter().flat_map(|d| &d.utterances) {
        let again = pre.preprocess(&u.raw_text);
        assert_eq!(again.text, u.preprocessed_text);
        assert_eq!(again.mentioned_movie_ids, u.mentioned_movie_ids);
        assert_eq!(u.preprocessed_text.split_whitespace().filter(|t| *t == PLACEHOLDER).count(), u.mentioned_movie_ids.len());
        assert!(!u.preprocessed_text.chars().any(char::is_uppercase) || u.preprocessed_text.contains(PLACEHOLDER));
    }
}

#[test]
fn split_is_a_repeatable_partition() {
    let records: Vec<DialogRecord> = world().dialogs.clone();
    let spec = SplitSpec { train_ratio: 0.88, seed: 9 };
    let a = Corpus::from_records(records.clone(), spec, &Preprocessor::default()).unwrap();
    let b = Corpus::from_records(records, spec, &Preprocessor::default()).unwrap();
    assert_eq!(a.train().count() + a.test().count(), a.len());
    let splits = |c: &Corpus| c.dialogs().iter().map(|d| (d.dialog_id.clone(), d.split)).collect::<Vec<_>>();
    assert_eq!(splits(&a), splits(&b));
}
