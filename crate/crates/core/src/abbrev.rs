//! Token alignment inside training pairs and over-normalization statistics.
//!
//! A source token whose normalized counterpart differs is either an
//! abbreviation resolution (the source token carries a marker from the
//! [`MarkerTable`]) or a substitution. Substitutions without markers are the
//! over-normalization signal: the edition changed a word the scribe wrote out
//! in full.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aligner::Op;
use crate::error::{Error, Result};
use crate::pairbuilder::AlignedPair;
use crate::textprep::is_punctuation;

/// The marker table shipped with the crate.
pub const DEFAULT_MARKERS: &str = include_str!("../data/markers.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerRange {
    pub start: u32,
    pub end: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerTable {
    pub version: u32,
    /// Sorted by start, pairwise disjoint.
    pub ranges: Vec<MarkerRange>,
}

impl Default for MarkerTable {
    fn default() -> Self {
        Self::parse(DEFAULT_MARKERS).expect("shipped marker table is valid")
    }
}

fn parse_hex(s: &str, line: usize) -> Result<u32> {
    u32::from_str_radix(s.trim(), 16).map_err(|_| Error::InvalidMarkerTable {
        line,
        reason: format!("not a hex code point: {s:?}"),
    })
}

impl MarkerTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut version = 1;
        let mut ranges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if let Some(v) = raw.strip_prefix("#version") {
                version = v.trim().parse().map_err(|_| Error::InvalidMarkerTable {
                    line,
                    reason: format!("bad version {v:?}"),
                })?;
                continue;
            }
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut cols = raw.split('\t');
            let start = parse_hex(cols.next().unwrap_or(""), line)?;
            let end = match cols.next().map(str::trim) {
                None | Some("") => start,
                Some(e) => parse_hex(e, line)?,
            };
            if end < start {
                return Err(Error::InvalidMarkerTable {
                    line,
                    reason: format!("range end {end:04X} precedes start {start:04X}"),
                });
            }
            let name = cols.next().unwrap_or("").trim().to_string();
            ranges.push((line, MarkerRange { start, end, name }));
        }
        ranges.sort_by_key(|(_, r)| r.start);
        for w in ranges.windows(2) {
            if w[1].1.start <= w[0].1.end {
                return Err(Error::InvalidMarkerTable {
                    line: w[1].0,
                    reason: format!(
                        "{:04X}..{:04X} overlaps {:04X}..{:04X}",
                        w[1].1.start, w[1].1.end, w[0].1.start, w[0].1.end
                    ),
                });
            }
        }
        Ok(Self {
            version,
            ranges: ranges.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn contains(&self, c: char) -> bool {
        let c = c as u32;
        let k = self.ranges.partition_point(|r| r.start <= c);
        k > 0 && self.ranges[k - 1].end >= c
    }

    pub fn has_marker(&self, token: &str) -> bool {
        token.chars().any(|c| self.contains(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Identical,
    AbbrevResolution,
    Substitution,
    Insertion,
    Deletion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignmentRecord {
    pub src_token: String,
    pub tgt_token: String,
    pub class: TokenClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenOptions {
    pub case_fold: bool,
}

fn trim_punct(s: &str) -> &str {
    s.trim_matches(is_punctuation)
}

fn same_token(a: &str, b: &str, opts: &TokenOptions) -> bool {
    let (a, b) = (trim_punct(a), trim_punct(b));
    if opts.case_fold {
        a.to_lowercase() == b.to_lowercase()
    } else {
        a == b
    }
}

/// Whitespace-delimited tokens as character ranges.
fn token_ranges(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, c) in chars.iter().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(k),
            (true, Some(s)) => {
                out.push((s, k));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, chars.len()));
    }
    out
}

/// Projects source tokens through the pair's character alignment and
/// classifies each. Every source token yields one record, in source order;
/// target tokens no source token reaches follow as insertions.
pub fn align_tokens(pair: &AlignedPair, markers: &MarkerTable, opts: &TokenOptions) -> Vec<TokenAlignmentRecord> {
    align_token_texts(&pair.src, &pair.tgt, &pair.ops, markers, opts)
}

pub fn align_token_texts(
    src: &str,
    tgt: &str,
    ops: &[Op],
    markers: &MarkerTable,
    opts: &TokenOptions,
) -> Vec<TokenAlignmentRecord> {
    let s: Vec<char> = src.chars().collect();
    let t: Vec<char> = tgt.chars().collect();
    let mut proj: Vec<Option<usize>> = vec![None; s.len()];
    let (mut i, mut j) = (0, 0);
    for &op in ops {
        if matches!(op, Op::Match | Op::Sub) && i < s.len() && j < t.len() {
            proj[i] = Some(j);
        }
        i += op.consumes_source() as usize;
        j += op.consumes_target() as usize;
    }

    let src_tokens = token_ranges(&s);
    let tgt_tokens = token_ranges(&t);
    let mut tgt_token_of = vec![None; t.len()];
    for (k, &(a, b)) in tgt_tokens.iter().enumerate() {
        tgt_token_of[a..b].iter_mut().for_each(|x| *x = Some(k));
    }

    let text = |chars: &[char], (a, b): (usize, usize)| chars[a..b].iter().collect::<String>();
    let mut used = vec![false; tgt_tokens.len()];
    let mut out = Vec::with_capacity(src_tokens.len());
    for &(a, b) in &src_tokens {
        let hits: Vec<usize> = proj[a..b].iter().flatten().copied().collect();
        let src_token = text(&s, (a, b));
        let tgt_idx: Vec<usize> = match (hits.iter().min(), hits.iter().max()) {
            (Some(&lo), Some(&hi)) => {
                let mut ks: Vec<usize> = tgt_token_of[lo..=hi].iter().flatten().copied().collect();
                ks.dedup();
                ks
            }
            _ => Vec::new(),
        };
        if tgt_idx.is_empty() {
            out.push(TokenAlignmentRecord {
                src_token,
                tgt_token: String::new(),
                class: TokenClass::Deletion,
            });
            continue;
        }
        tgt_idx.iter().for_each(|&k| used[k] = true);
        let tgt_token = tgt_idx.iter().map(|&k| text(&t, tgt_tokens[k])).collect::<Vec<_>>().join(" ");
        let class = if same_token(&src_token, &tgt_token, opts) {
            TokenClass::Identical
        } else if markers.has_marker(&src_token) {
            TokenClass::AbbrevResolution
        } else {
            TokenClass::Substitution
        };
        out.push(TokenAlignmentRecord {
            src_token,
            tgt_token,
            class,
        });
    }
    for (k, &range) in tgt_tokens.iter().enumerate() {
        if !used[k] {
            out.push(TokenAlignmentRecord {
                src_token: String::new(),
                tgt_token: text(&t, range),
                class: TokenClass::Insertion,
            });
        }
    }
    out
}

/// Per-pair token counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTokenStats {
    pub id: String,
    pub language: String,
    pub source_tokens: u64,
    pub substitutions: u64,
    pub abbreviations: u64,
}

impl PairTokenStats {
    pub fn from_records(id: &str, language: &str, records: &[TokenAlignmentRecord]) -> Self {
        let count = |c: TokenClass| records.iter().filter(|r| r.class == c).count() as u64;
        Self {
            id: id.to_string(),
            language: language.to_string(),
            source_tokens: records.iter().filter(|r| r.class != TokenClass::Insertion).count() as u64,
            substitutions: count(TokenClass::Substitution),
            abbreviations: count(TokenClass::AbbrevResolution),
        }
    }

    /// Share of source tokens classed as substitutions.
    pub fn fraction(&self) -> f64 {
        if self.source_tokens == 0 {
            0.0
        } else {
            self.substitutions as f64 / self.source_tokens as f64
        }
    }
}

/// Per-pair annotation written to the optional sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub id: String,
    pub language: String,
    pub records: Vec<TokenAlignmentRecord>,
}

/// Streaming accumulator. `merge` is associative and the summary does not
/// depend on insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsAccumulator {
    pairs: Vec<PairTokenStats>,
}

impl StatsAccumulator {
    pub fn add(&mut self, stats: PairTokenStats) {
        if stats.source_tokens > 0 {
            self.pairs.push(stats);
        }
    }

    pub fn merge(&mut self, other: StatsAccumulator) {
        self.pairs.extend(other.pairs);
    }

    pub fn summarize(&self, bins: usize) -> SubstitutionStats {
        let bins = bins.max(1);
        let mut by_lang: BTreeMap<&str, Vec<&PairTokenStats>> = BTreeMap::new();
        for p in &self.pairs {
            by_lang.entry(p.language.as_str()).or_default().push(p);
        }
        let all: Vec<&PairTokenStats> = self.pairs.iter().collect();
        SubstitutionStats {
            bins,
            overall: LanguageStats::of(&all, bins),
            per_language: by_lang.into_iter().map(|(k, v)| (k.to_string(), LanguageStats::of(&v, bins))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub pairs: u64,
    pub source_tokens: u64,
    pub substitutions: u64,
    pub abbreviations: u64,
    /// Mean of per-pair substitution fractions.
    pub mean: f64,
    pub median: f64,
    /// Pooled rate: substitutions over source tokens.
    pub pooled: f64,
    /// Pair counts of per-pair fractions in equal-width bins over [0, 1].
    pub histogram: Vec<u64>,
}

impl LanguageStats {
    fn of(pairs: &[&PairTokenStats], bins: usize) -> Self {
        let mut fractions: Vec<f64> = pairs.iter().map(|p| p.fraction()).collect();
        fractions.sort_by(|a, b| a.total_cmp(b));
        let n = fractions.len();
        let mean = if n == 0 { 0.0 } else { fractions.iter().sum::<f64>() / n as f64 };
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => fractions[n / 2],
            _ => (fractions[n / 2 - 1] + fractions[n / 2]) / 2.0,
        };
        let mut histogram = vec![0u64; bins];
        for f in &fractions {
            let b = ((f * bins as f64) as usize).min(bins - 1);
            histogram[b] += 1;
        }
        let tokens: u64 = pairs.iter().map(|p| p.source_tokens).sum();
        let subs: u64 = pairs.iter().map(|p| p.substitutions).sum();
        Self {
            pairs: n as u64,
            source_tokens: tokens,
            substitutions: subs,
            abbreviations: pairs.iter().map(|p| p.abbreviations).sum(),
            mean,
            median,
            pooled: if tokens == 0 { 0.0 } else { subs as f64 / tokens as f64 },
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionStats {
    pub bins: usize,
    pub overall: LanguageStats,
    pub per_language: BTreeMap<String, LanguageStats>,
}

pub const DEFAULT_BINS: usize = 20;

/// Token-aligns every pair and summarizes substitution fractions.
pub fn substitution_stats<'a>(
    pairs: impl IntoIterator<Item = &'a AlignedPair>,
    markers: &MarkerTable,
    opts: &TokenOptions,
    bins: usize,
) -> SubstitutionStats {
    let mut acc = StatsAccumulator::default();
    for p in pairs {
        let records = align_tokens(p, markers, opts);
        acc.add(PairTokenStats::from_records(&p.id, &p.language, &records));
    }
    acc.summarize(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{edit_ops, levenshtein};
    use crate::textprep::decompose;

    fn ops_for(src: &str, tgt: &str) -> Vec<Op> {
        let s: Vec<char> = src.chars().collect();
        let t: Vec<char> = tgt.chars().collect();
        let ops = edit_ops(&s, &t);
        let subs = ops.iter().filter(|o| !matches!(o, Op::Match)).count();
        assert_eq!(subs, levenshtein(&s, &t));
        ops
    }

    fn classify(src: &str, tgt: &str) -> Vec<TokenAlignmentRecord> {
        let src = decompose(src);
        let ops = ops_for(&src, tgt);
        align_token_texts(&src, tgt, &ops, &MarkerTable::default(), &TokenOptions::default())
    }

    #[test]
    fn shipped_table_parses() {
        let t = MarkerTable::default();
        assert_eq!(t.version, 1);
        for c in ['\u{303}', '\u{a76f}', '\u{a770}', '\u{a75b}', 'ł', '⁊', '\u{1dd1}', '\u{363}'] {
            assert!(t.contains(c), "{c:?}");
        }
        for c in ['a', 'o', ' ', '.', '9'] {
            assert!(!t.contains(c), "{c:?}");
        }
    }

    #[test]
    fn overlapping_entries_are_rejected() {
        let err = MarkerTable::parse("0300\t036F\tx\n0360\t0370\ty\n").unwrap_err();
        assert!(matches!(err, Error::InvalidMarkerTable { line: 2, .. }));
        assert!(MarkerTable::parse("0301\t0300\tbackwards\n").is_err());
        assert!(MarkerTable::parse("zz\t\tnot hex\n").is_err());
    }

    #[test]
    fn token_classes() {
        assert_eq!(classify("et", "et")[0].class, TokenClass::Identical);
        let r = classify("c\u{f5}sul", "consul");
        assert_eq!(r[0].class, TokenClass::AbbrevResolution);
        assert_eq!(r[0].tgt_token, "consul");
        assert_eq!(classify("moult", "molt")[0].class, TokenClass::Substitution);
    }

    #[test]
    fn punctuation_is_ignored_for_comparison_but_kept() {
        let r = classify("dixit,", "dixit");
        assert_eq!(r[0].class, TokenClass::Identical);
        assert_eq!(r[0].src_token, "dixit,");
    }

    #[test]
    fn case_fold_toggle() {
        let src = "Et";
        let ops = ops_for(src, "et");
        let m = MarkerTable::default();
        let plain = align_token_texts(src, "et", &ops, &m, &TokenOptions::default());
        let folded = align_token_texts(src, "et", &ops, &m, &TokenOptions { case_fold: true });
        assert_eq!(plain[0].class, TokenClass::Substitution);
        assert_eq!(folded[0].class, TokenClass::Identical);
    }

    #[test]
    fn indels_and_partition() {
        let mut ops = vec![Op::Match; 9];
        ops.extend([Op::Del; 9]);
        ops.extend([Op::Match; 4]);
        ops.extend([Op::Ins; 6]);
        let r = align_token_texts(
            "et dixit xxxxxxxx deus",
            "et dixit deus autem",
            &ops,
            &MarkerTable::default(),
            &TokenOptions::default(),
        );
        let src_records: Vec<_> = r.iter().filter(|x| x.class != TokenClass::Insertion).collect();
        assert_eq!(src_records.len(), 4);
        assert!(r.iter().any(|x| x.class == TokenClass::Deletion && x.src_token == "xxxxxxxx"));
        assert!(r.iter().any(|x| x.class == TokenClass::Insertion && x.tgt_token == "autem"));
    }

    #[test]
    fn split_tokens_join_their_targets() {
        let r = classify("letriste", "le triste");
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].tgt_token, "le triste");
        assert_eq!(r[0].class, TokenClass::Substitution);
    }

    #[test]
    fn stats_fraction_and_order_independence() {
        let mk = |id: &str, lang: &str, tokens, subs| PairTokenStats {
            id: id.into(),
            language: lang.into(),
            source_tokens: tokens,
            substitutions: subs,
            abbreviations: 0,
        };
        let items = vec![mk("a", "lat", 10, 0), mk("b", "lat", 10, 2), mk("c", "fro", 4, 2), mk("d", "lat", 10, 5)];
        let mut fwd = StatsAccumulator::default();
        items.iter().cloned().for_each(|p| fwd.add(p));
        let mut rev = StatsAccumulator::default();
        items.iter().rev().cloned().for_each(|p| rev.add(p));
        let (a, b) = (fwd.summarize(20), rev.summarize(20));
        assert_eq!(a, b);
        let lat = &a.per_language["lat"];
        assert!((lat.mean - 0.7 / 3.0).abs() < 1e-12);
        assert_eq!(lat.median, 0.2);
        assert_eq!(lat.histogram.iter().sum::<u64>(), 3);
        assert_eq!(a.per_language["fro"].median, 0.5);

        let mut left = StatsAccumulator::default();
        left.add(items[0].clone());
        let mut right = StatsAccumulator::default();
        items[1..].iter().cloned().for_each(|p| right.add(p));
        left.merge(right);
        assert_eq!(left.summarize(20), a);
    }

    #[test]
    fn identical_pair_has_zero_fraction() {
        let r = classify("in principio erat uerbum", "in principio erat uerbum");
        let s = PairTokenStats::from_records("x", "lat", &r);
        assert_eq!(s.fraction(), 0.0);
    }
}
