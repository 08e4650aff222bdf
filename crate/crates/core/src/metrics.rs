//! Evaluation: character and word error rates, bag-of-words overlap on label
//! layers, and corpus-level reports.
//!
//! Error rates are Levenshtein distances with unit costs and no
//! transpositions, divided by the reference length. Corpus figures are
//! micro-averaged (total edits over total reference length) unless
//! [`EvalOptions::macro_average`] is set.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::aligner::Op;
use crate::error::{Error, Result};
use crate::scalar::{harmonic_mean, Fraction};
use crate::textprep::is_punctuation;

/// Unit-cost edit distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = (diag + (x != y) as usize).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[b.len()]
}

/// One minimum-cost edit script turning `a` into `b`, read from the full
/// Levenshtein table. Diagonal steps are preferred, then deletions.
pub fn edit_ops<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Op> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        for j in 0..=m {
            d[i * w + j] = if i == 0 {
                j
            } else if j == 0 {
                i
            } else {
                (d[(i - 1) * w + j - 1] + (a[i - 1] != b[j - 1]) as usize)
                    .min(d[(i - 1) * w + j] + 1)
                    .min(d[i * w + j - 1] + 1)
            };
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n.max(m));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i * w + j] == d[(i - 1) * w + j - 1] + (a[i - 1] != b[j - 1]) as usize {
            ops.push(if a[i - 1] == b[j - 1] { Op::Match } else { Op::Sub });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i * w + j] == d[(i - 1) * w + j] + 1 {
            ops.push(Op::Del);
            i -= 1;
        } else {
            ops.push(Op::Ins);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Split on whitespace, keep punctuation attached.
    #[default]
    Whitespace,
    /// Split on whitespace and drop punctuation characters; tokens left empty
    /// disappear.
    WhitespaceStripPunct,
}

impl Tokenizer {
    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<std::borrow::Cow<'a, str>> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(Into::into).collect(),
            Tokenizer::WhitespaceStripPunct => text
                .split_whitespace()
                .filter_map(|tok| {
                    if !tok.chars().any(is_punctuation) {
                        return Some(tok.into());
                    }
                    let kept: String = tok.chars().filter(|&c| !is_punctuation(c)).collect();
                    (!kept.is_empty()).then_some(kept.into())
                })
                .collect(),
        }
    }
}

pub fn char_edits(pred: &str, gold: &str) -> (usize, usize) {
    let p: Vec<char> = pred.chars().collect();
    let g: Vec<char> = gold.chars().collect();
    (levenshtein(&p, &g), g.len())
}

pub fn word_edits(pred: &str, gold: &str, tokenizer: Tokenizer) -> (usize, usize) {
    let p = tokenizer.tokenize(pred);
    let g = tokenizer.tokenize(gold);
    (levenshtein(&p, &g), g.len())
}

/// Character error rate. May exceed one.
pub fn cer<F: Fraction>(pred: &str, gold: &str) -> Result<F> {
    let (edits, len) = char_edits(pred, gold);
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(F::ratio(edits as u64, len as u64))
}

/// Word error rate. May exceed one.
pub fn wer<F: Fraction>(pred: &str, gold: &str, tokenizer: Tokenizer) -> Result<F> {
    let (edits, len) = word_edits(pred, gold, tokenizer);
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(F::ratio(edits as u64, len as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BowCounts {
    pub tp: u64,
    pub gold: u64,
    pub pred: u64,
}

impl BowCounts {
    pub fn report<F: Fraction>(&self) -> BowReport<F> {
        let frac = |n: u64, d: u64| if d == 0 { F::zero() } else { F::ratio(n, d) };
        let precision = frac(self.tp, self.pred);
        let recall = frac(self.tp, self.gold);
        BowReport {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
            tp: self.tp,
            gold: self.gold,
            pred: self.pred,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowReport<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub tp: u64,
    pub gold: u64,
    pub pred: u64,
}

/// Label multiset of a gold and a predicted sequence. Merging is addition of
/// counts, so corpus-level figures can be accumulated sample by sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCounts<L: Eq + Hash> {
    counts: HashMap<L, (u64, u64)>,
}

impl<L: Eq + Hash> Default for LabelCounts<L> {
    fn default() -> Self {
        Self { counts: HashMap::new() }
    }
}

impl<L: Eq + Hash> LabelCounts<L> {
    pub fn add(&mut self, gold: impl IntoIterator<Item = L>, pred: impl IntoIterator<Item = L>) {
        for l in gold {
            self.counts.entry(l).or_default().0 += 1;
        }
        for l in pred {
            self.counts.entry(l).or_default().1 += 1;
        }
    }

    pub fn merge(&mut self, other: Self) {
        for (l, (g, p)) in other.counts {
            let e = self.counts.entry(l).or_default();
            e.0 += g;
            e.1 += p;
        }
    }

    pub fn counts(&self) -> BowCounts {
        let mut out = BowCounts::default();
        for &(g, p) in self.counts.values() {
            out.tp += g.min(p);
            out.gold += g;
            out.pred += p;
        }
        out
    }
}

pub fn bow_counts<L: Eq + Hash + Clone>(gold: &[L], pred: &[L]) -> BowCounts {
    let mut c = LabelCounts::default();
    c.add(gold.iter().cloned(), pred.iter().cloned());
    c.counts()
}

/// Bag-of-words precision and recall: `tp = sum_x min(c_G(x), c_P(x))`,
/// precision `tp/|P|`, recall `tp/|G|`, zero on an empty denominator.
pub fn bow<F: Fraction, L: Eq + Hash + Clone>(gold: &[L], pred: &[L]) -> BowReport<F> {
    bow_counts(gold, pred).report()
}

fn strip_punct(tokens: &[impl AsRef<str>]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.as_ref().chars().filter(|&c| !is_punctuation(c)).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

/// The `k` most frequent tokens, ties broken lexicographically.
pub fn most_frequent<S: AsRef<str>>(tokens: &[S], k: usize) -> Vec<String> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for t in tokens {
        *freq.entry(t.as_ref()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(t, _)| t.to_string()).collect()
}

/// Both sequences with punctuation removed and restricted to the `k` most
/// frequent gold tokens.
pub fn mfw_restrict<S: AsRef<str>>(gold: &[S], pred: &[S], k: usize) -> (Vec<String>, Vec<String>) {
    assert!(k >= 1, "k must be at least 1");
    let gold = strip_punct(gold);
    let pred = strip_punct(pred);
    let vocab: std::collections::HashSet<String> = most_frequent(&gold, k).into_iter().collect();
    let keep = |v: Vec<String>| v.into_iter().filter(|t| vocab.contains(t)).collect::<Vec<_>>();
    (keep(gold), keep(pred))
}

pub fn bow_mfw<F: Fraction, S: AsRef<str>>(gold: &[S], pred: &[S], k: usize) -> BowReport<F> {
    let (g, p) = mfw_restrict(gold, pred, k);
    bow(&g, &p)
}

/// Sliding windows of `n` labels; empty when the input is shorter than `n`.
pub fn label_ngrams<L: Clone>(labels: &[L], n: usize) -> Vec<Vec<L>> {
    assert!(n >= 1, "n must be at least 1");
    labels.windows(n).map(|w| w.to_vec()).collect()
}

/// Edits and reference lengths. Merging is component-wise addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub char_edits: u64,
    pub char_len: u64,
    pub word_edits: u64,
    pub word_len: u64,
    pub samples: u64,
}

impl EditCounts {
    pub fn of(pred: &str, gold: &str, tokenizer: Tokenizer) -> Self {
        let (ce, cl) = char_edits(pred, gold);
        let (we, wl) = word_edits(pred, gold, tokenizer);
        Self {
            char_edits: ce as u64,
            char_len: cl as u64,
            word_edits: we as u64,
            word_len: wl as u64,
            samples: 1,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.char_edits += other.char_edits;
        self.char_len += other.char_len;
        self.word_edits += other.word_edits;
        self.word_len += other.word_len;
        self.samples += other.samples;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditReport<F> {
    pub cer: F,
    pub wer: F,
    pub samples: u64,
    pub char_edits: u64,
    pub char_len: u64,
    pub word_edits: u64,
    pub word_len: u64,
}

impl<F: Fraction> EditReport<F> {
    /// Micro average over merged counts.
    pub fn micro(c: &EditCounts) -> Self {
        let frac = |n: u64, d: u64| if d == 0 { F::zero() } else { F::ratio(n, d) };
        Self {
            cer: frac(c.char_edits, c.char_len),
            wer: frac(c.word_edits, c.word_len),
            samples: c.samples,
            char_edits: c.char_edits,
            char_len: c.char_len,
            word_edits: c.word_edits,
            word_len: c.word_len,
        }
    }

    /// Mean of per-sample rates; samples with an empty reference are skipped
    /// for the rate they cannot define.
    pub fn macro_average(per_sample: &[EditCounts]) -> Self {
        let mut total = EditCounts::default();
        let (mut cer, mut nc, mut wer, mut nw) = (F::zero(), 0u64, F::zero(), 0u64);
        for c in per_sample {
            total.merge(c);
            if c.char_len > 0 {
                cer = cer + F::ratio(c.char_edits, c.char_len);
                nc += 1;
            }
            if c.word_len > 0 {
                wer = wer + F::ratio(c.word_edits, c.word_len);
                nw += 1;
            }
        }
        let mean = |sum: F, n: u64| if n == 0 { F::zero() } else { sum / F::ratio(n, 1) };
        Self {
            cer: mean(cer, nc),
            wer: mean(wer, nw),
            ..Self::micro(&total)
        }
    }
}

/// Externally produced annotation of one text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lemma: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pos: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub gold: String,
    pub pred: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_labels: Option<Labels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_labels: Option<Labels>,
}

/// Languages counted in "all" but in no per-language row.
pub const MIXED_LANGUAGES: &[&str] = &["mixed", "mul"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub tokenizer: Tokenizer,
    pub macro_average: bool,
    pub mfw_k: usize,
    pub ngram: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::Whitespace,
            macro_average: false,
            mfw_k: 100,
            ngram: 3,
        }
    }
}

pub const LAYER_TOKEN: &str = "token";
pub const LAYER_LEMMA: &str = "lemma";
pub const LAYER_POS: &str = "pos";
pub const LAYER_POS_NGRAM: &str = "pos_3gram";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F> {
    pub all: EditReport<F>,
    pub per_language: BTreeMap<String, EditReport<F>>,
    /// Corpus-pooled bag-of-words per label layer.
    pub bow: BTreeMap<String, BowReport<F>>,
    /// Same layers restricted to the most frequent gold tokens; only the
    /// token and lemma layers are defined.
    pub bow_mfw: BTreeMap<String, BowReport<F>>,
    pub mfw_k: usize,
    pub macro_averaged: bool,
}

/// Scores a set of records. The error rates are computed for every record;
/// the token bag-of-words layer is always computed from the texts, lemma and
/// POS layers only over records that carry labels on both sides.
pub fn evaluate<F: Fraction>(records: &[EvalRecord], opts: &EvalOptions) -> Result<EvalReport<F>> {
    let mut per_sample = Vec::with_capacity(records.len());
    let mut by_lang: BTreeMap<String, Vec<EditCounts>> = BTreeMap::new();
    let mut token = LabelCounts::<String>::default();
    let mut lemma = LabelCounts::<String>::default();
    let mut pos = LabelCounts::<String>::default();
    let mut pos_ngram = LabelCounts::<Vec<String>>::default();
    let mut gold_tokens_all: Vec<String> = Vec::new();
    let mut pred_tokens_all: Vec<String> = Vec::new();
    let mut gold_lemmas_all: Vec<String> = Vec::new();
    let mut pred_lemmas_all: Vec<String> = Vec::new();
    let mut have_lemmas = false;

    for r in records {
        if r.gold.chars().next().is_none() {
            return Err(Error::EmptyReference);
        }
        let c = EditCounts::of(&r.pred, &r.gold, opts.tokenizer);
        per_sample.push(c);
        if let Some(lang) = r.language.as_deref() {
            if !MIXED_LANGUAGES.contains(&lang) {
                by_lang.entry(lang.to_string()).or_default().push(c);
            }
        }
        let g: Vec<String> = r.gold.split_whitespace().map(str::to_string).collect();
        let p: Vec<String> = r.pred.split_whitespace().map(str::to_string).collect();
        token.add(g.iter().cloned(), p.iter().cloned());
        gold_tokens_all.extend(g);
        pred_tokens_all.extend(p);
        if let (Some(gl), Some(pl)) = (&r.gold_labels, &r.pred_labels) {
            if !gl.lemma.is_empty() || !pl.lemma.is_empty() {
                have_lemmas = true;
                lemma.add(gl.lemma.iter().cloned(), pl.lemma.iter().cloned());
                gold_lemmas_all.extend(gl.lemma.iter().cloned());
                pred_lemmas_all.extend(pl.lemma.iter().cloned());
            }
            if !gl.pos.is_empty() || !pl.pos.is_empty() {
                pos.add(gl.pos.iter().cloned(), pl.pos.iter().cloned());
                pos_ngram.add(label_ngrams(&gl.pos, opts.ngram), label_ngrams(&pl.pos, opts.ngram));
            }
        }
    }

    let summarize = |v: &[EditCounts]| {
        if opts.macro_average {
            EditReport::macro_average(v)
        } else {
            let mut total = EditCounts::default();
            v.iter().for_each(|c| total.merge(c));
            EditReport::micro(&total)
        }
    };

    let mut bow_layers = BTreeMap::new();
    bow_layers.insert(LAYER_TOKEN.to_string(), token.counts().report());
    let mut mfw_layers = BTreeMap::new();
    mfw_layers.insert(
        LAYER_TOKEN.to_string(),
        bow_mfw(&gold_tokens_all, &pred_tokens_all, opts.mfw_k),
    );
    if have_lemmas {
        bow_layers.insert(LAYER_LEMMA.to_string(), lemma.counts().report());
        mfw_layers.insert(
            LAYER_LEMMA.to_string(),
            bow_mfw(&gold_lemmas_all, &pred_lemmas_all, opts.mfw_k),
        );
    }
    let pos_counts = pos.counts();
    if pos_counts.gold + pos_counts.pred > 0 {
        bow_layers.insert(LAYER_POS.to_string(), pos_counts.report());
        bow_layers.insert(LAYER_POS_NGRAM.to_string(), pos_ngram.counts().report());
    }

    Ok(EvalReport {
        all: summarize(&per_sample),
        per_language: by_lang.iter().map(|(k, v)| (k.clone(), summarize(v))).collect(),
        bow: bow_layers,
        bow_mfw: mfw_layers,
        mfw_k: opts.mfw_k,
        macro_averaged: opts.macro_average,
    })
}

fn pct<F: Fraction>(f: F) -> String {
    format!("{:.1}", f.to_f64() * 100.0)
}

impl<F: Fraction> EvalReport<F> {
    /// Plain-text tables: error rates by language, then bag-of-words scores
    /// by layer, all as percentages with one decimal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["All".to_string()];
        header.extend(self.per_language.keys().cloned());
        let rows: Vec<&EditReport<F>> = std::iter::once(&self.all).chain(self.per_language.values()).collect();
        let _ = writeln!(out, "{:<6} {}", "", header.iter().map(|h| format!("{h:>10}")).collect::<String>());
        let _ = writeln!(
            out,
            "{:<6} {}",
            "CER",
            rows.iter().map(|r| format!("{:>10}", pct(r.cer))).collect::<String>()
        );
        let _ = writeln!(
            out,
            "{:<6} {}",
            "WER",
            rows.iter().map(|r| format!("{:>10}", pct(r.wer))).collect::<String>()
        );
        out.push('\n');
        let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8}", "layer", "Pre.", "Rec.", "F1");
        for (name, r) in &self.bow {
            let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8}", name, pct(r.precision), pct(r.recall), pct(r.f1));
        }
        for (name, r) in &self.bow_mfw {
            let label = format!("{name} mfw{}", self.mfw_k);
            let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8}", label, pct(r.precision), pct(r.recall), pct(r.f1));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<u64>;

    #[test]
    fn edit_script_costs_the_distance() {
        for (a, b) in [("kitten", "sitting"), ("", "abc"), ("abc", ""), ("flaw", "lawn"), ("same", "same")] {
            let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            let ops = edit_ops(&a, &b);
            assert_eq!(ops.iter().filter(|o| **o != Op::Match).count(), levenshtein(&a, &b));
            assert_eq!(ops.iter().filter(|o| o.consumes_source()).count(), a.len());
            assert_eq!(ops.iter().filter(|o| o.consumes_target()).count(), b.len());
        }
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer::<Q>("abc", "abc").unwrap(), Q::from_integer(0));
        assert_eq!(cer::<Q>("abd", "abc").unwrap(), Q::new(1, 3));
        assert_eq!(cer::<Q>("abcd", "ab").unwrap(), Q::from_integer(1));
        assert!(matches!(cer::<f64>("abc", ""), Err(Error::EmptyReference)));
    }

    #[test]
    fn wer_examples() {
        let ws = Tokenizer::Whitespace;
        assert_eq!(wer::<Q>("a b c", "a b c", ws).unwrap(), Q::from_integer(0));
        assert_eq!(wer::<Q>("a x c", "a b c", ws).unwrap(), Q::new(1, 3));
        assert_eq!(wer::<Q>("", "a b c", ws).unwrap(), Q::from_integer(1));
        assert!(wer::<f64>("a", "  ", ws).is_err());
    }

    #[test]
    fn strip_tokenizer_drops_punctuation() {
        let t = Tokenizer::WhitespaceStripPunct;
        assert_eq!(t.tokenize("Et dixit : « ueni »."), vec!["Et", "dixit", "ueni"]);
    }

    #[test]
    fn bow_worked_example() {
        let r = bow::<Q, _>(&["a", "a", "b"], &["a", "b", "b"]);
        assert_eq!(r.tp, 2);
        assert_eq!(r.precision, Q::new(2, 3));
        assert_eq!(r.recall, Q::new(2, 3));
        assert_eq!(r.f1, Q::new(2, 3));
    }

    #[test]
    fn bow_degenerate_cases() {
        let same = bow::<Q, _>(&["x", "y"], &["x", "y"]);
        assert_eq!((same.precision, same.recall), (Q::from_integer(1), Q::from_integer(1)));
        let disjoint = bow::<Q, _>(&["x"], &["y"]);
        assert_eq!((disjoint.precision, disjoint.recall, disjoint.f1), (Q::from_integer(0), Q::from_integer(0), Q::from_integer(0)));
        let empty = bow::<Q, &str>(&[], &[]);
        assert_eq!(empty.precision, Q::from_integer(0));
    }

    #[test]
    fn mfw_with_large_k_is_plain_bow_without_punctuation() {
        let gold = ["et", "dixit", ",", "et", "uenit", "."];
        // every predicted token occurs in gold, so the restriction removes nothing
        let pred = ["et", "dixit", "et", "uenit", ";", "dixit"];
        let big = bow_mfw::<Q, _>(&gold, &pred, 1000);
        let plain = bow::<Q, _>(&strip_punct(&gold), &strip_punct(&pred));
        assert_eq!(big, plain);
        // a predicted token outside the gold vocabulary is dropped by the restriction
        let extra = bow_mfw::<Q, _>(&gold, &["et", "iterum"], 1000);
        assert_eq!((extra.tp, extra.pred), (1, 1));
    }

    #[test]
    fn mfw_single_gold_token_disjoint_pred() {
        let r = bow_mfw::<Q, _>(&["a", "a", "a"], &["b", "c"], 1);
        assert_eq!((r.precision, r.recall), (Q::from_integer(0), Q::from_integer(0)));
    }

    #[test]
    fn mfw_restricts_to_hand_counted_vocabulary() {
        // gold counts: a 4, b 3, c 3, d 1, e 1 ; k = 2 keeps a and b
        let gold = ["a", "a", "a", "a", "b", "b", "b", "c", "c", "c", "d", "e"];
        let pred = ["a", "a", "b", "b", "b", "b", "c", "d"];
        let r = bow_mfw::<Q, _>(&gold, &pred, 2);
        // restricted gold: a4 b3 ; restricted pred: a2 b4 ; tp = 2 + 3
        assert_eq!((r.tp, r.gold, r.pred), (5, 7, 6));
        // with k = 3 the tie between b and c is broken lexicographically, c kept over d
        assert_eq!(most_frequent(&gold, 3), vec!["a", "b", "c"]);
    }

    #[test]
    fn ngram_examples() {
        assert_eq!(label_ngrams(&[1, 2, 3, 4, 5], 3).len(), 3);
        assert!(label_ngrams(&[1, 2], 3).is_empty());
        assert_eq!(
            label_ngrams(&["DET", "NOUN", "VERB", "NOUN"], 3),
            vec![vec!["DET", "NOUN", "VERB"], vec!["NOUN", "VERB", "NOUN"]]
        );
    }

    fn rec(id: &str, gold: &str, pred: &str, lang: &str) -> EvalRecord {
        EvalRecord {
            id: id.into(),
            gold: gold.into(),
            pred: pred.into(),
            language: Some(lang.into()),
            gold_labels: None,
            pred_labels: None,
        }
    }

    #[test]
    fn corpus_cer_is_micro_averaged() {
        // per-sample rates 1/2 and 0/8: macro 1/4, micro 1/10
        let records = [rec("1", "ab", "ax", "lat"), rec("2", "abcdefgh", "abcdefgh", "fro")];
        let micro = evaluate::<Q>(&records, &EvalOptions::default()).unwrap();
        assert_eq!(micro.all.cer, Q::new(1, 10));
        let macro_ = evaluate::<Q>(
            &records,
            &EvalOptions {
                macro_average: true,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!(macro_.all.cer, Q::new(1, 4));
    }

    #[test]
    fn mixed_samples_only_count_in_all() {
        let records = [rec("1", "ab", "ab", "lat"), rec("2", "cd", "xx", "mixed")];
        let r = evaluate::<Q>(&records, &EvalOptions::default()).unwrap();
        assert_eq!(r.all.samples, 2);
        assert_eq!(r.per_language.len(), 1);
        assert_eq!(r.per_language["lat"].cer, Q::from_integer(0));
    }

    #[test]
    fn label_layers_are_pooled() {
        let mut r = rec("1", "li rois", "li rois", "fro");
        r.gold_labels = Some(Labels {
            lemma: vec!["le".into(), "roi".into()],
            pos: vec!["DET".into(), "NOM".into(), "VER".into()],
        });
        r.pred_labels = Some(Labels {
            lemma: vec!["le".into(), "rei".into()],
            pos: vec!["DET".into(), "NOM".into(), "VER".into()],
        });
        let report = evaluate::<Q>(&[r], &EvalOptions::default()).unwrap();
        assert_eq!(report.bow[LAYER_LEMMA].precision, Q::new(1, 2));
        assert_eq!(report.bow[LAYER_POS].precision, Q::from_integer(1));
        assert_eq!(report.bow[LAYER_POS_NGRAM].tp, 1);
        let table = report.render();
        assert!(table.contains("50.0"));
        assert!(table.contains("100.0"));
    }
}
