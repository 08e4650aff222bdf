use proptest::prelude::*;

use pen_core::fingerprint::{build_index, extract_grams};
use pen_core::textprep::{prepare_page, prepare_passage, EditionPassage, PreparedText, SourceLine, SourcePage, ZoneFilter};

fn text(min: usize, max: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('a'), Just('b'), Just('c'), Just('d'), Just(' '), Just(',')], min..max)
        .prop_map(|cs| cs.into_iter().collect())
}

fn passage(k: usize, t: &str) -> PreparedText {
    prepare_passage(&EditionPassage {
        work_id: format!("w{k}"),
        passage_id: format!("w{k}#0"),
        text: t.into(),
        char_offset: 0,
    })
    .unwrap()
}

fn page(t: &str) -> PreparedText {
    prepare_page(
        &SourcePage {
            doc_id: "d".into(),
            page_id: "p".into(),
            lines: vec![SourceLine::main(t)],
            language_hint: None,
        },
        &ZoneFilter::default(),
    )
    .unwrap()
}

fn filterable(s: &str) -> Vec<char> {
    s.chars().filter(|c| !c.is_whitespace() && *c != ',').collect()
}

proptest! {
    #[test]
    fn index_and_candidates_are_deterministic(texts in proptest::collection::vec(text(1, 80), 1..8), q in text(5, 80)) {
        let ps: Vec<PreparedText> = texts.iter().enumerate().filter(|(_, t)| !t.trim().is_empty()).map(|(k, t)| passage(k, t)).collect();
        let a = build_index(&ps, 4, 3);
        let b = build_index(&ps, 4, 3);
        prop_assert_eq!(&a.postings, &b.postings);
        if !q.trim().is_empty() {
            let pg = page(&q);
            prop_assert_eq!(a.candidates(&pg, 2), b.candidates(&pg, 2));
        }
    }

    #[test]
    fn no_candidate_below_threshold(texts in proptest::collection::vec(text(1, 80), 1..8), q in text(5, 80), min_shared in 1usize..6) {
        let ps: Vec<PreparedText> = texts.iter().enumerate().filter(|(_, t)| !t.trim().is_empty()).map(|(k, t)| passage(k, t)).collect();
        let index = build_index(&ps, 4, 100);
        if !q.trim().is_empty() {
            for c in index.candidates(&page(&q), min_shared) {
                prop_assert!(c.shared_grams >= min_shared);
            }
        }
    }

    #[test]
    fn verbatim_copy_is_always_a_candidate(
        pre in text(0, 40), post in text(0, 40), shared in text(0, 60),
        others in proptest::collection::vec(text(1, 60), 0..4),
        min_shared in 1usize..5,
    ) {
        let n = 4;
        let need = min_shared + n - 1;
        // pad the shared run with distinct letters so it has enough filterable characters
        let run: String = shared.chars().chain("efghijklmnop".chars()).collect();
        prop_assume!(filterable(&run).len() >= need);
        let mut ps = vec![passage(0, &format!("{pre} {run} {post}"))];
        ps.extend(others.iter().enumerate().filter(|(_, t)| !t.trim().is_empty()).map(|(k, t)| passage(k + 1, t)));
        let index = build_index(&ps, n, 100);
        let hits = index.candidates(&page(&run), min_shared);
        prop_assert!(hits.iter().any(|c| c.passage.work_id == "w0"));
    }

    #[test]
    fn gram_count_matches_window_count(t in text(0, 100)) {
        let f = filterable(&t).len();
        prop_assert_eq!(extract_grams(&t, 5).len(), f.saturating_sub(4));
    }
}
