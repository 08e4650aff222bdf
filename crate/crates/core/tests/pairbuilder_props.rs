use proptest::prelude::*;

use pen_core::aligner::{CharAlignment, Op, Segment, Span};
use pen_core::pairbuilder::{chunk, filter_alignment, ChunkBounds, FilterPolicy};
use pen_core::textprep::{prepare_page, prepare_passage, EditionPassage, PreparedText, SourceLine, SourcePage, ZoneFilter};

fn words(count: usize, lens: &[usize]) -> String {
    (0..count)
        .map(|k| "abcdefghijklmnopqrstu".chars().cycle().skip(k % 21).take(lens[k % lens.len()]).collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

fn page_of(lines: &[String]) -> PreparedText {
    prepare_page(
        &SourcePage {
            doc_id: "d".into(),
            page_id: "p".into(),
            lines: lines.iter().map(SourceLine::main).collect(),
            language_hint: None,
        },
        &ZoneFilter::default(),
    )
    .unwrap()
}

fn passage_of(text: &str) -> PreparedText {
    prepare_passage(&EditionPassage {
        work_id: "w".into(),
        passage_id: "w#0".into(),
        text: text.into(),
        char_offset: 0,
    })
    .unwrap()
}

/// Identity alignment of `text` with itself, with a few substitutions.
fn identity(n: usize, subs: &[usize]) -> CharAlignment<i64> {
    let mut ops = vec![Op::Match; n];
    for &k in subs {
        ops[k % n] = Op::Sub;
    }
    let matched = ops.iter().filter(|o| **o == Op::Match).count();
    CharAlignment {
        segments: vec![Segment {
            src: Span::new(0, n),
            tgt: Span::new(0, n),
            ops,
            work: None,
        }],
        score: 0,
        matched_chars: matched,
        match_rate: matched as f64 / n as f64,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_chunk_is_within_bounds(count in 40usize..700, lens in proptest::collection::vec(1usize..14, 1..6)) {
        let text = words(count, &lens);
        let page = page_of(&[text.clone()]);
        let passage = passage_of(&text);
        let n = page.char_len();
        let a = identity(n, &[]);
        let bounds = ChunkBounds::default();
        match chunk(&a, &page, &passage, "lat", &bounds) {
            Ok(ch) => {
                for p in &ch.pairs {
                    prop_assert!((bounds.min_bytes..=bounds.max_bytes).contains(&p.src.len()), "{}", p.src.len());
                    prop_assert_eq!(p.src_bytes, p.src.len());
                    prop_assert!(!p.tgt.is_empty());
                }
                // pieces come out in source order and never overlap
                for w in ch.pairs.windows(2) {
                    prop_assert!(w[0].lineage.src_span.end <= w[1].lineage.src_span.start);
                }
            }
            Err(_) => prop_assert!(text.len() < bounds.min_bytes),
        }
    }

    #[test]
    fn raising_a_threshold_never_accepts_more(
        line_count in 1usize..12, subs in proptest::collection::vec(0usize..400, 0..80),
        lines_req in 1usize..10, rate in 0.0f64..1.0, coverage in 0.0f64..1.0,
        d_lines in 0usize..4, d_rate in 0.0f64..0.3, d_cov in 0.0f64..0.3,
    ) {
        let lines: Vec<String> = (0..line_count).map(|k| words(6, &[3 + k % 4, 5])).collect();
        let page = page_of(&lines);
        let a = identity(page.char_len(), &subs);
        let low = FilterPolicy { min_continuous_lines: lines_req, min_match_rate: rate, line_coverage_threshold: coverage, require_same_work: true };
        let high = FilterPolicy {
            min_continuous_lines: lines_req + d_lines,
            min_match_rate: (rate + d_rate).min(1.0),
            line_coverage_threshold: (coverage + d_cov).min(1.0),
            require_same_work: true,
        };
        if filter_alignment(&a, &page, "w", &high).is_accept() {
            prop_assert!(filter_alignment(&a, &page, "w", &low).is_accept());
        }
    }
}
