mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use retrocrs_core::embedding::cosine;
use retrocrs_core::pruning::{prune, PrunedSet};
use retrocrs_core::ranking::{
    merge_candidates, rank_and_select, score_fluency, BigramLanguageModel, BoostWeights, ChitChatLexicon, IntentKind,
    IntentSignal,
};
use retrocrs_core::retrieval::{CandidateResponse, ContextConfig};

use common::*;

fn texts() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(TOY_VOCAB[..12].to_vec()), 1..10), 1..30)
        .prop_map(|t| t.into_iter().map(|w| w.join(" ")).collect())
}

fn tokens() -> impl Strategy<Value = Vec<&'static str>> {
    let mut words = TOY_VOCAB[..12].to_vec();
    words.push("unseen");
    prop::collection::vec(prop::sample::select(words), 2..10)
}

/// Candidate with a placeholder when `recommends`, chit-chat keyword when `chat`.
fn scored_candidate(i: usize, body: &[&str], recommends: bool, chat: bool) -> CandidateResponse {
    let mut words: Vec<String> = body.iter().map(|w| (*w).to_owned()).collect();
    let mut raw = words.join(" ");
    if recommends {
        raw.push_str(" @123");
        words.push("MOVIE_PLACEHOLDER".into());
    }
    if chat {
        raw.push_str(" thanks");
        words.push("thanks".into());
    }
    let mut c = candidate("r", i, &raw, &words.join(" "));
    c.source_similarity = 0.1 * (i % 7) as f64;
    c
}

fn intent(kind: IntentKind) -> IntentSignal {
    IntentSignal { kind, evidence: None }
}

proptest! {
    #[test]
    fn fluency_matches_direct_counting(train in texts(), cand in tokens()) {
        let model = BigramLanguageModel::from_texts(train.iter().map(String::as_str)).unwrap();
        let text = cand.join(" ");
        let got = score_fluency(&model, &candidate("f", 1, &text, &text)).unwrap();
        let want = direct_fluency(&train, &cand).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
        prop_assert!(got <= 0.0);
    }

    #[test]
    fn boosts_and_selection_order(
        train in texts(),
        bodies in prop::collection::vec((tokens(), any::<bool>(), any::<bool>()), 1..12),
        kind in prop::sample::select(vec![IntentKind::MovieMention, IntentKind::ChitChat, IntentKind::None]),
    ) {
        let model = BigramLanguageModel::from_texts(train.iter().map(String::as_str)).unwrap();
        let cands: Vec<CandidateResponse> =
            bodies.iter().enumerate().map(|(i, (b, rec, chat))| scored_candidate(i, b, *rec, *chat)).collect();
        let sets = vec![(ContextConfig::LastSeeker, PrunedSet::unpruned(cands))];
        let lexicon = ChitChatLexicon::default();
        let ranking = rank_and_select(&sets, &model, &intent(kind), &lexicon, BoostWeights::default()).unwrap();
        for c in &ranking.ranked {
            prop_assert!([0, 2, 5].contains(&c.intent_boost));
            prop_assert!((c.final_score - c.fluency_score - c.intent_boost as f64).abs() < 1e-12);
        }
        for w in ranking.ranked.windows(2) {
            prop_assert!(w[0].final_score >= w[1].final_score);
        }
        if kind == IntentKind::None {
            for w in ranking.ranked.windows(2) {
                prop_assert!(w[0].fluency_score >= w[1].fluency_score);
            }
        }
        let unboosted_best = ranking.ranked.iter().filter(|c| c.intent_boost == 0).map(|c| c.final_score).fold(f64::NEG_INFINITY, f64::max);
        for c in ranking.ranked.iter().filter(|c| c.intent_boost == 5 && c.fluency_score >= -5.0) {
            prop_assert!(c.final_score >= 0.0 && c.final_score > unboosted_best);
        }
    }

    #[test]
    fn merging_keeps_one_per_text_and_never_empties(
        sets in prop::collection::vec(prop::collection::vec(0usize..6, 1..6), 1..5),
    ) {
        let pruned: Vec<PrunedSet> = sets
            .iter()
            .enumerate()
            .map(|(k, set)| PrunedSet::unpruned(set.iter().map(|t| {
                let text = format!("reply number {t}");
                let mut c = candidate("m", k * 10 + t, &text, &text);
                c.source_similarity = (k + t) as f64 / 10.0;
                c
            }).collect()))
            .collect();
        let merged = merge_candidates(&pruned);
        prop_assert!(!merged.is_empty());
        let mut seen = std::collections::HashSet::new();
        prop_assert!(merged.iter().all(|c| seen.insert(c.raw_text.clone())));
        let distinct: std::collections::HashSet<_> = sets.iter().flatten().collect();
        prop_assert_eq!(merged.len(), distinct.len());
    }

    #[test]
    fn pruning_keeps_exhaustive_top_pairs(size in 1usize..12, seed in any::<u64>()) {
        let (cands, backend) = controlled_set(size, seed, false);
        let set = prune(cands.clone(), &backend).unwrap();
        prop_assert!(!set.retained.is_empty());
        prop_assert!(set.retained.iter().all(|c| cands.contains(c)));
        let budget = size * size.saturating_sub(1) / 2 / size;
        if budget == 0 {
            prop_assert!(set.skipped);
            prop_assert_eq!(&set.retained, &cands);
        } else {
            let v: Vec<Vec<f64>> = cands.iter().map(|c| backend.0[&c.raw_text].clone()).collect();
            let mut all: Vec<f64> = Vec::new();
            for i in 0..size {
                for j in i + 1..size {
                    all.push(cosine(&v[i], &v[j]));
                }
            }
            all.sort_by(|a, b| b.total_cmp(a));
            let kept: Vec<f64> = set.retained_pairs.iter().map(|p| p.cosine).collect();
            prop_assert_eq!(kept.len(), budget);
            for (k, a) in kept.iter().zip(&all) {
                prop_assert!((k - a).abs() < 1e-12);
            }
            let min_kept = kept.iter().copied().fold(f64::INFINITY, f64::min);
            for (i, c) in cands.iter().enumerate() {
                if !set.retained.contains(c) {
                    for (j, _) in cands.iter().enumerate().filter(|(j, _)| *j != i) {
                        prop_assert!(cosine(&v[i], &v[j]) <= min_kept + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pruning_is_order_independent(size in 3usize..12, seed in any::<u64>()) {
        let (cands, backend) = controlled_set(size, seed, false);
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let a = prune(cands, &backend).unwrap();
        let b = prune(shuffled, &backend).unwrap();
        let cosines = |s: &PrunedSet| s.retained_pairs.iter().map(|p| p.cosine).collect::<Vec<_>>();
        prop_assert_eq!(cosines(&a), cosines(&b));
        let mut ta: Vec<_> = a.retained.iter().map(|c| c.raw_text.clone()).collect();
        let mut tb: Vec<_> = b.retained.iter().map(|c| c.raw_text.clone()).collect();
        ta.sort();
        tb.sort();
        prop_assert_eq!(ta, tb);
    }
}

#[test]
fn pair_budget_for_each_set_size() {
    for size in 2..=10 {
        for seed in 0..20 {
            check_pruning_case(size, seed).unwrap();
        }
    }
}

#[test]
fn planted_outlier_is_never_kept() {
    for seed in 0..200 {
        let (cands, backend) = controlled_set(5, seed, true);
        let set = prune(cands, &backend).unwrap();
        assert_eq!(set.retained_pairs.len(), 2);
        assert!(set.retained.iter().all(|c| c.raw_text != "c4"), "seed {seed}");
    }
}

#[test]
fn failing_backend_is_reported() {
    let (cands, _) = controlled_set(4, 1, false);
    let empty = FixedBackend(Default::default());
    assert!(prune(cands, &empty).is_err());
}
