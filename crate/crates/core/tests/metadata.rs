mod common;

use proptest::prelude::*;

use retrocrs_core::catalog::{GenreForms, GenreLexicon, ItemCatalog, MovieId};
use retrocrs_core::metadata::{fill_placeholders, FilledText, MarkerFill, MetadataRewriter, Request, RuleSet};
use retrocrs_core::text::PLACEHOLDER;

use common::*;

const FILLER: [&str; 10] = ["you", "should", "watch", "it", "tonight", "really", "a", "nice", "one", "maybe"];
const KEYWORDS: [&str; 4] = ["funny", "scary", "romantic", "comedy"];

fn rewriter() -> (MetadataRewriter, ItemCatalog) {
    let catalog = ItemCatalog::new(vec![movie(1, &["Horror"], 2017, 4.0, 100), movie(2, &["Comedy"], 2010, 4.0, 100)]);
    let rw = MetadataRewriter::new(RuleSet::default(), GenreForms::default(), &GenreLexicon::default(), &catalog).unwrap();
    (rw, catalog)
}

fn words() -> impl Strategy<Value = Vec<String>> {
    let mut pool: Vec<&str> = FILLER.to_vec();
    pool.extend(KEYWORDS);
    prop::collection::vec(prop::sample::select(pool), 1..15).prop_map(|w| w.into_iter().map(str::to_owned).collect())
}

proptest! {
    #[test]
    fn rewrites_stay_inside_matched_words(words in words(), target in 1u32..=2) {
        let (rw, catalog) = rewriter();
        let text = words.join(" ");
        let filled = FilledText { text: text.clone(), title_spans: vec![], movie_ids: vec![] };
        let out = rw
            .apply_metadata_rules(&filled, catalog.get(MovieId(target)), &Request::None, None, pos("d", 1))
            .unwrap();
        let after: Vec<&str> = out.text.split(' ').collect();
        prop_assert_eq!(after.len(), words.len());
        for (a, b) in words.iter().zip(&after) {
            if !KEYWORDS.contains(&a.as_str()) {
                prop_assert_eq!(a.as_str(), *b);
            }
        }
        let again = rw
            .apply_metadata_rules(&filled, catalog.get(MovieId(target)), &Request::None, None, pos("d", 1))
            .unwrap();
        prop_assert_eq!(&again, &out);
        prop_assert!(!out.text.contains(PLACEHOLDER));
    }

    #[test]
    fn filled_titles_are_never_rewritten(before in words(), after in words()) {
        let (rw, catalog) = rewriter();
        let raw = format!("{} @5 {}", before.join(" "), after.join(" "));
        let filled = fill_placeholders(&raw, |_, _, _| Ok(MarkerFill { movie_id: MovieId(2), title: "Funny Scary Movie (2010)".into() })).unwrap();
        let out = rw.apply_metadata_rules(&filled, catalog.get(MovieId(2)), &Request::None, None, pos("d", 1)).unwrap();
        prop_assert!(out.text.contains("Funny Scary Movie (2010)"));
    }
}

#[test]
fn description_appends_plot() {
    let (rw, _) = rewriter();
    let mut m = movie(1, &["Horror"], 2017, 4.0, 100);
    m.plot_summary = Some("Something lurks in the house.".into());
    let request = rw.detect_request("what is it about?");
    assert!(matches!(request, Request::Description { .. }));
    let filled = FilledText { text: "you will love it".into(), title_spans: vec![], movie_ids: vec![] };
    let out = rw.apply_metadata_rules(&filled, None, &request, Some(&m), pos("d", 1)).unwrap();
    assert_eq!(out.text, "you will love it. Movie 1 (2017): Something lurks in the house.");
}
