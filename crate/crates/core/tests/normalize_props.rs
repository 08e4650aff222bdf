use std::collections::BTreeMap;

use proptest::prelude::*;

use pen_core::abbrev::MarkerTable;
use pen_core::normalize::{is_ramist, is_text_punctuation, RuleNormalizer};
use pen_core::textprep::decompose;

fn marker_seeded() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            Just("a"), Just("e"), Just("o"), Just("u"), Just("v"), Just("i"), Just("j"), Just("c"), Just("s"),
            Just("t"), Just("n"), Just("p"), Just("q"), Just("x"), Just("U"), Just(" "), Just(" "), Just("õ"),
            Just("q̃"), Just("ꝯ"), Just("ꝰ"), Just("ł"), Just("⁊"), Just("ꝑ"), Just("\u{304}"), Just("."),
            Just(","), Just("·"), Just("?"), Just("xiiij"), Just("roma"),
        ],
        0..30,
    )
    .prop_map(|v| v.concat())
}

fn punct(s: &str) -> BTreeMap<char, usize> {
    let mut m = BTreeMap::new();
    for c in s.chars().filter(|&c| is_text_punctuation(c)) {
        *m.entry(c).or_default() += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn output_is_deterministic(s in marker_seeded()) {
        let a = RuleNormalizer::default().normalize(&s, "lat");
        let b = RuleNormalizer::default().normalize(&s, "lat");
        prop_assert_eq!(a, b);
    }

    #[test]
    fn punctuation_is_conserved(s in marker_seeded(), fro in any::<bool>()) {
        let lang = if fro { "fro" } else { "lat" };
        let out = RuleNormalizer::default().normalize(&s, lang).text;
        prop_assert_eq!(punct(&out), punct(&decompose(&s)));
    }

    #[test]
    fn normalizing_twice_changes_nothing(s in marker_seeded(), fro in any::<bool>()) {
        let lang = if fro { "fro" } else { "lat" };
        let n = RuleNormalizer::default();
        let once = n.normalize(&s, lang).text;
        prop_assert_eq!(n.normalize(&once, lang).text, once);
    }

    #[test]
    fn plain_tokens_survive_up_to_case(s in marker_seeded()) {
        let markers = MarkerTable::default();
        let src = decompose(&s);
        let out = RuleNormalizer::default().normalize(&s, "lat").text;
        let a: Vec<&str> = src.split(' ').collect();
        let b: Vec<&str> = out.split(' ').collect();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            if !x.chars().any(|c| markers.contains(c) || is_ramist(c)) {
                prop_assert_eq!(x.to_lowercase(), y.to_lowercase());
            }
        }
    }
}
