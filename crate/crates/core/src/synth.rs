//! Seeded synthetic corpora with known answers: pages carrying noisy excerpts
//! of editions, and aligned pairs with a planted substitution rate.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::Span;
use crate::metrics::edit_ops;
use crate::pairbuilder::{AlignedPair, Lineage};
use crate::textprep::{decompose, EditionWork, PageRef, SourceLine, SourcePage};

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "l", "m", "n", "p", "qu", "r", "s", "t", "v", "pr", "tr", "st", "gr", "cl", "",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ae", "au"];
const CODAS: &[&str] = &["", "", "", "s", "m", "n", "t", "r", "x", "l"];
const LETTERS: &[u8] = b"abcdefghilmnopqrstuvx";

/// A pseudo-Latin word of one to four syllables.
pub fn word(rng: &mut impl Rng) -> String {
    let syllables = rng.random_range(1..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(NUCLEI.choose(rng).unwrap());
        w.push_str(CODAS.choose(rng).unwrap());
    }
    w
}

fn prose(rng: &mut impl Rng, min_chars: usize) -> String {
    let mut text = String::new();
    while text.len() < min_chars {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(&word(rng));
        match rng.random_range(0..20) {
            0 => text.push(','),
            1 => text.push('.'),
            _ => {}
        }
    }
    text
}

fn random_letter(rng: &mut impl Rng, not: char) -> char {
    loop {
        let c = *LETTERS.choose(rng).unwrap() as char;
        if c != not {
            return c;
        }
    }
}

/// Substitutes, deletes or inserts letters at rate `rate` (3:1:1).
pub fn add_noise(text: &str, rate: f64, rng: &mut impl Rng) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if !rng.random_bool(rate) {
            out.push(c);
            continue;
        }
        match rng.random_range(0..5) {
            0..=2 => out.push(random_letter(rng, c)),
            3 => {}
            _ => {
                out.push(c);
                out.push(random_letter(rng, c));
            }
        }
    }
    out
}

fn break_lines(text: &str, width: usize) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = String::new();
    for w in text.split_whitespace() {
        if !line.is_empty() && line.len() + 1 + w.len() > width {
            lines.push(std::mem::take(&mut line));
        }
        if !line.is_empty() {
            line.push(' ');
        }
        line.push_str(w);
    }
    if !line.is_empty() {
        lines.push(line);
    }
    lines
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub editions: usize,
    pub pages: usize,
    /// Minimum edition length in bytes.
    pub edition_bytes: usize,
    /// Inclusive range of excerpt lengths in bytes.
    pub excerpt_bytes: (usize, usize),
    pub noise: f64,
    /// Probability that the two halves of an excerpt appear swapped.
    pub swap_probability: f64,
    pub line_width: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            editions: 200,
            pages: 500,
            edition_bytes: 6000,
            excerpt_bytes: (900, 1500),
            noise: 0.10,
            swap_probability: 0.5,
            line_width: 55,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedLink {
    pub page: PageRef,
    pub work_id: String,
    pub swapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpus {
    pub pages: Vec<SourcePage>,
    pub editions: Vec<EditionWork>,
    pub links: Vec<PlantedLink>,
}

/// Editions of random prose, and pages each holding one noisy excerpt of one
/// edition between a running title and a marginal note that the default zone
/// filter removes.
pub fn planted_corpus(spec: &PlantedSpec) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let editions: Vec<EditionWork> = (0..spec.editions)
        .map(|k| {
            let mut metadata = serde_json::Map::new();
            metadata.insert("language".into(), "lat".into());
            EditionWork {
                work_id: format!("work{k:03}"),
                text: prose(&mut rng, spec.edition_bytes),
                metadata,
            }
        })
        .collect();
    let mut pages = Vec::with_capacity(spec.pages);
    let mut links = Vec::with_capacity(spec.pages);
    for k in 0..spec.pages {
        let ed = &editions[rng.random_range(0..editions.len())];
        let words: Vec<&str> = ed.text.split(' ').collect();
        let want = rng.random_range(spec.excerpt_bytes.0..=spec.excerpt_bytes.1);
        let start = rng.random_range(0..words.len());
        let mut end = start;
        let mut bytes = 0;
        while end < words.len() && bytes < want {
            bytes += words[end].len() + 1;
            end += 1;
        }
        let mut start = start;
        while bytes < want && start > 0 {
            start -= 1;
            bytes += words[start].len() + 1;
        }
        let excerpt = &words[start..end];
        let swapped = rng.random_bool(spec.swap_probability);
        let text = if swapped {
            let mid = excerpt.len() / 2;
            format!("{} {}", excerpt[mid..].join(" "), excerpt[..mid].join(" "))
        } else {
            excerpt.join(" ")
        };
        let noisy = add_noise(&text, spec.noise, &mut rng);
        let mut lines = vec![SourceLine::in_zone(
            add_noise(&prose(&mut rng, 20), spec.noise, &mut rng),
            "RunningTitleZone",
        )];
        lines.extend(break_lines(&noisy, spec.line_width).into_iter().map(SourceLine::main));
        lines.push(SourceLine::in_zone(prose(&mut rng, 30), "MarginTextZone"));
        let page = PageRef {
            doc_id: format!("doc{:02}", k / 25),
            page_id: format!("p{k:03}"),
        };
        pages.push(SourcePage {
            doc_id: page.doc_id.clone(),
            page_id: page.page_id.clone(),
            lines,
            language_hint: Some("lat".into()),
        });
        links.push(PlantedLink {
            page,
            work_id: ed.work_id.clone(),
            swapped,
        });
    }
    PlantedCorpus {
        pages,
        editions,
        links,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionSpec {
    /// Language tag and the fraction of source tokens carrying a marker-free
    /// substitution.
    pub languages: Vec<(String, f64)>,
    pub pairs_per_language: usize,
    pub tokens_per_pair: usize,
    /// Fraction of source tokens abbreviated with a marker.
    pub abbreviation_rate: f64,
    pub seed: u64,
}

impl Default for SubstitutionSpec {
    fn default() -> Self {
        Self {
            languages: vec![("lat".into(), 0.10), ("fro".into(), 0.30), ("ita".into(), 0.50)],
            pairs_per_language: 200,
            tokens_per_pair: 80,
            abbreviation_rate: 0.15,
            seed: 5,
        }
    }
}

/// One letter replaced by a different letter, so the token changes without
/// gaining a marker.
fn substituted(w: &str, rng: &mut impl Rng) -> String {
    let mut cs: Vec<char> = w.chars().collect();
    let k = rng.random_range(0..cs.len());
    cs[k] = random_letter(rng, cs[k]);
    cs.into_iter().collect()
}

/// The final letter suppressed under a tilde on the one before, as in
/// `dominũ` for `dominum`.
fn abbreviated(w: &str) -> String {
    let mut cs: Vec<char> = w.chars().collect();
    cs.pop();
    let mut s: String = cs.into_iter().collect();
    s.push('\u{303}');
    s
}

/// Pairs whose source side carries exactly `round(rate * tokens)` marker-free
/// substitutions and `round(abbreviation_rate * tokens)` marker abbreviations.
pub fn planted_substitution_pairs(spec: &SubstitutionSpec) -> Vec<AlignedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.tokens_per_pair;
    let mut out = Vec::new();
    for (lang, rate) in &spec.languages {
        let subs = (rate * n as f64).round() as usize;
        let abbrs = ((spec.abbreviation_rate * n as f64).round() as usize).min(n - subs);
        for k in 0..spec.pairs_per_language {
            let tgt: Vec<String> = (0..n)
                .map(|_| loop {
                    let w = word(&mut rng);
                    if w.chars().count() >= 3 {
                        break w;
                    }
                })
                .collect();
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(&mut rng);
            let mut src = tgt.clone();
            for &s in &slots[..subs] {
                src[s] = substituted(&tgt[s], &mut rng);
            }
            for &s in &slots[subs..subs + abbrs] {
                src[s] = abbreviated(&tgt[s]);
            }
            let src = decompose(&src.join(" "));
            let tgt = tgt.join(" ");
            let sc: Vec<char> = src.chars().collect();
            let tc: Vec<char> = tgt.chars().collect();
            out.push(AlignedPair {
                id: format!("{lang}-{k:04}"),
                src_bytes: src.len(),
                match_rate: 1.0 - (subs + abbrs) as f64 / n as f64,
                lineage: Lineage {
                    doc_id: format!("synthetic-{lang}"),
                    page_id: format!("p{k}"),
                    work_id: format!("synthetic-{lang}"),
                    passage_id: format!("p{k}"),
                    src_span: Span::new(0, sc.len()),
                    tgt_span: Span::new(0, tc.len()),
                },
                language: lang.clone(),
                ops: edit_ops(&sc, &tc),
                src,
                tgt,
            });
        }
    }
    out
}
