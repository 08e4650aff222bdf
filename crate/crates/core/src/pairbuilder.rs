//! Quality filtering of alignments and cutting of accepted alignments into
//! bounded training pairs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{rle, CharAlignment, Op, Segment, Span};
use crate::error::{Error, Result};
use crate::textprep::PreparedText;

pub const DEFAULT_MIN_BYTES: usize = 300;
pub const DEFAULT_MAX_BYTES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub min_continuous_lines: usize,
    pub min_match_rate: f64,
    /// Share of a line's non-space characters that must sit under a Match or
    /// Sub op for the line to count as aligned.
    pub line_coverage_threshold: f64,
    pub require_same_work: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_continuous_lines: 5,
            min_match_rate: 0.60,
            line_coverage_threshold: 0.50,
            require_same_work: true,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_match_rate", self.min_match_rate),
            ("line_coverage_threshold", self.line_coverage_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Lines { found: usize, required: usize },
    MatchRate { found: f64, required: f64 },
    Work { works: Vec<String> },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Lines { .. } => "lines",
            RejectReason::MatchRate { .. } => "match_rate",
            RejectReason::Work { .. } => "work",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum FilterDecision {
    Accept,
    Reject(RejectReason),
}

impl FilterDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, FilterDecision::Accept)
    }
}

/// For every source character, whether a Match or Sub op consumes it.
pub fn source_coverage(a: &CharAlignment<impl Sized>, source_len: usize) -> Vec<bool> {
    let mut covered = vec![false; source_len];
    for seg in &a.segments {
        let mut i = seg.src.start;
        for &op in &seg.ops {
            if matches!(op, Op::Match | Op::Sub) {
                covered[i] = true;
            }
            if op.consumes_source() {
                i += 1;
            }
        }
    }
    covered
}

/// Longest run of consecutive page lines whose covered share of non-space
/// characters reaches `threshold`.
pub fn longest_covered_run(page: &PreparedText, covered: &[bool], threshold: f64) -> usize {
    let chars = page.chars();
    let mut best = 0;
    let mut run = 0;
    let mut line_start = 0;
    let mut bounds: Vec<usize> = page.line_breaks.clone();
    bounds.push(chars.len());
    for end in bounds {
        let (mut total, mut hit) = (0usize, 0usize);
        for k in line_start..end {
            if !chars[k].is_whitespace() {
                total += 1;
                hit += covered[k] as usize;
            }
        }
        if total > 0 && hit as f64 >= threshold * total as f64 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
        line_start = end + 1;
    }
    best
}

/// Applies the quality criteria in order: continuous lines, match rate, work.
/// `passage_work` is the work of the passage the alignment was computed
/// against; segments carrying their own work override it.
pub fn filter_alignment<C>(
    a: &CharAlignment<C>,
    page: &PreparedText,
    passage_work: &str,
    policy: &FilterPolicy,
) -> FilterDecision {
    let covered = source_coverage(a, page.char_len());
    let lines = longest_covered_run(page, &covered, policy.line_coverage_threshold);
    if lines < policy.min_continuous_lines {
        return FilterDecision::Reject(RejectReason::Lines {
            found: lines,
            required: policy.min_continuous_lines,
        });
    }
    if a.match_rate < policy.min_match_rate {
        return FilterDecision::Reject(RejectReason::MatchRate {
            found: a.match_rate,
            required: policy.min_match_rate,
        });
    }
    if policy.require_same_work {
        let mut works: Vec<String> = a
            .segments
            .iter()
            .map(|s| s.work.clone().unwrap_or_else(|| passage_work.to_string()))
            .collect();
        works.sort();
        works.dedup();
        if works.len() > 1 {
            return FilterDecision::Reject(RejectReason::Work { works });
        }
    }
    FilterDecision::Accept
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub doc_id: String,
    pub page_id: String,
    pub work_id: String,
    pub passage_id: String,
    /// Character span in the prepared page text.
    pub src_span: Span,
    /// Character span in the prepared passage text.
    pub tgt_span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub id: String,
    pub src: String,
    pub tgt: String,
    pub src_bytes: usize,
    pub match_rate: f64,
    pub lineage: Lineage,
    pub language: String,
    /// Character alignment of `src` against `tgt`.
    #[serde(with = "rle")]
    pub ops: Vec<Op>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkBounds {
    pub min_bytes: usize,
    pub max_bytes: usize,
}

impl Default for ChunkBounds {
    fn default() -> Self {
        Self {
            min_bytes: DEFAULT_MIN_BYTES,
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

impl ChunkBounds {
    pub fn target(&self) -> usize {
        (self.min_bytes + self.max_bytes) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_bytes == 0 || self.min_bytes > self.max_bytes {
            return Err(Error::Config(format!(
                "byte bounds must satisfy 0 < min <= max, got {}..{}",
                self.min_bytes, self.max_bytes
            )));
        }
        Ok(())
    }
}

/// Chunking result: the pairs plus the source spans that could not be placed
/// in any pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chunked {
    pub pairs: Vec<AlignedPair>,
    pub dropped: Vec<Span>,
}

/// One op column of a segment with the cursors before it.
#[derive(Debug, Clone, Copy)]
struct Column {
    op: Op,
    i: usize,
    j: usize,
}

fn columns(seg: &Segment) -> Vec<Column> {
    let (mut i, mut j) = (seg.src.start, seg.tgt.start);
    seg.ops
        .iter()
        .map(|&op| {
            let c = Column { op, i, j };
            i += op.consumes_source() as usize;
            j += op.consumes_target() as usize;
            c
        })
        .collect()
}

/// Column range `[from, to)` of one chunk.
type Piece = (usize, usize);

/// Greedy cutting of one segment's columns. Returns kept pieces and dropped
/// pieces, both as column ranges, in source order.
fn cut_segment(cols: &[Column], src: &[char], tgt: &[char], bounds: &ChunkBounds) -> (Vec<Piece>, Vec<Piece>) {
    let mut byte_at = Vec::with_capacity(src.len() + 1);
    byte_at.push(0usize);
    for c in src {
        byte_at.push(byte_at.last().unwrap() + c.len_utf8());
    }
    let col_src = |k: usize| if k < cols.len() { cols[k].i } else { cols.last().map_or(0, |c| c.i + c.op.consumes_source() as usize) };
    let bytes = |a: usize, b: usize| byte_at[col_src(b)] - byte_at[col_src(a)];

    let cuts: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            matches!(c.op, Op::Match | Op::Sub) && src[c.i].is_whitespace() && tgt[c.j].is_whitespace()
        })
        .map(|(k, _)| k)
        .collect();

    let n = cols.len();
    let mut kept: Vec<Piece> = Vec::new();
    let mut dropped: Vec<Piece> = Vec::new();
    // whether the last kept piece is directly followed by a separator and
    // then `start`
    let mut adjacent = false;
    let mut start = 0;
    let target = bounds.target();

    while start < n {
        let remaining = bytes(start, n);
        if remaining <= bounds.max_bytes {
            if remaining >= bounds.min_bytes {
                kept.push((start, n));
            } else if let Some(last) = kept.last_mut().filter(|_| adjacent) {
                if bytes(last.0, n) <= bounds.max_bytes {
                    last.1 = n;
                } else {
                    dropped.push((start, n));
                }
            } else {
                dropped.push((start, n));
            }
            break;
        }
        let best = cuts
            .iter()
            .copied()
            .filter(|&k| k > start)
            .map(|k| (k, bytes(start, k)))
            .filter(|&(_, b)| b >= bounds.min_bytes && b <= bounds.max_bytes)
            .min_by_key(|&(k, b)| (b.abs_diff(target), k));
        match best {
            Some((k, _)) => {
                kept.push((start, k));
                adjacent = true;
                start = k + 1;
            }
            None => {
                // no cut yields a valid chunk: skip to the first cut past the
                // upper bound
                let next = cuts.iter().copied().find(|&k| k > start && bytes(start, k) > bounds.max_bytes);
                match next {
                    Some(k) => {
                        dropped.push((start, k));
                        adjacent = false;
                        start = k + 1;
                    }
                    None => {
                        dropped.push((start, n));
                        break;
                    }
                }
            }
        }
    }
    (kept, dropped)
}

fn span_of(cols: &[Column], piece: Piece) -> (Span, Span) {
    let first = cols[piece.0];
    let last = cols[piece.1 - 1];
    (
        Span::new(first.i, last.i + last.op.consumes_source() as usize),
        Span::new(first.j, last.j + last.op.consumes_target() as usize),
    )
}

/// Cuts an accepted alignment into pairs whose source side is within the
/// byte bounds. Cuts fall on columns where both sides are whitespace; the
/// whitespace itself belongs to neither neighbour.
pub fn chunk<C>(
    a: &CharAlignment<C>,
    page: &PreparedText,
    passage: &PreparedText,
    language: &str,
    bounds: &ChunkBounds,
) -> Result<Chunked> {
    let src = page.chars();
    let tgt = passage.chars();
    let total: usize = a
        .segments
        .iter()
        .map(|s| src[s.src.start..s.src.end].iter().map(|c| c.len_utf8()).sum::<usize>())
        .sum();
    if total < bounds.min_bytes {
        return Err(Error::Unchunkable {
            bytes: total,
            min_bytes: bounds.min_bytes,
        });
    }
    let page_ref = page.page_ref().cloned().unwrap_or_else(|| crate::textprep::PageRef {
        doc_id: String::new(),
        page_id: String::new(),
    });
    let passage_ref = passage.passage_ref().cloned().unwrap_or_else(|| crate::textprep::PassageRef {
        work_id: String::new(),
        passage_id: String::new(),
    });

    let mut out = Chunked::default();
    for seg in &a.segments {
        let cols = columns(seg);
        let (kept, dropped) = cut_segment(&cols, &src, &tgt, bounds);
        for piece in dropped {
            let (s, _) = span_of(&cols, piece);
            log::debug!(
                "{}:{} dropped source {} against {}",
                page_ref.doc_id,
                page_ref.page_id,
                s,
                passage_ref.passage_id
            );
            out.dropped.push(s);
        }
        for piece in kept {
            let (s, t) = span_of(&cols, piece);
            let ops: Vec<Op> = cols[piece.0..piece.1].iter().map(|c| c.op).collect();
            let text: String = src[s.start..s.end].iter().collect();
            let matched = ops.iter().filter(|&&o| o == Op::Match).count();
            out.pairs.push(AlignedPair {
                id: format!("{}:{}:{}:{}-{}", page_ref.doc_id, page_ref.page_id, passage_ref.passage_id, s.start, s.end),
                src_bytes: text.len(),
                src: text,
                tgt: tgt[t.start..t.end].iter().collect(),
                match_rate: matched as f64 / s.len().max(1) as f64,
                lineage: Lineage {
                    doc_id: page_ref.doc_id.clone(),
                    page_id: page_ref.page_id.clone(),
                    work_id: seg.work.clone().unwrap_or_else(|| passage_ref.work_id.clone()),
                    passage_id: passage_ref.passage_id.clone(),
                    src_span: s,
                    tgt_span: t,
                },
                language: language.to_string(),
                ops,
            });
        }
    }
    Ok(out)
}

/// Shuffled list of pair ids, each repeated by its language's factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub ids: Vec<String>,
}

pub fn build_manifest<'a>(
    pairs: impl IntoIterator<Item = &'a AlignedPair>,
    upsample: &BTreeMap<String, u32>,
    seed: u64,
) -> Result<Manifest> {
    if let Some((lang, _)) = upsample.iter().find(|(_, &f)| f == 0) {
        return Err(Error::Config(format!("upsampling factor for {lang} must be at least 1")));
    }
    let mut ids = Vec::new();
    for p in pairs {
        let factor = upsample.get(&p.language).copied().unwrap_or(1);
        for _ in 0..factor {
            ids.push(p.id.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    Ok(Manifest { seed, ids })
}

impl Manifest {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut seed = None;
        let mut ids = Vec::new();
        for line in r.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# seed=") {
                seed = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad manifest seed {rest:?}")))?,
                );
            } else if !line.is_empty() {
                ids.push(line);
            }
        }
        let seed = seed.ok_or_else(|| Error::Config("manifest lacks a seed header".into()))?;
        Ok(Self { seed, ids })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligner::{align_chars, AlignParams};
    use crate::textprep::{prepare_page, prepare_passage, EditionPassage, SourceLine, SourcePage, ZoneFilter};

    fn page_of(lines: &[String]) -> PreparedText {
        let page = SourcePage {
            doc_id: "ms".into(),
            page_id: "f1r".into(),
            lines: lines.iter().map(|l| SourceLine::main(l.clone())).collect(),
            language_hint: None,
        };
        prepare_page(&page, &ZoneFilter::default()).unwrap()
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

    fn words(n: usize, salt: usize) -> Vec<String> {
        (0..n)
            .map(|k| {
                let x = (k * 7919 + salt * 104729) % 9973;
                let len = 3 + x % 5;
                (0..len).map(|d| (b'a' + ((x / (d + 1)) % 26) as u8) as char).collect()
            })
            .collect()
    }

    fn lines_of(ws: &[String], per_line: usize) -> Vec<String> {
        ws.chunks(per_line).map(|c| c.join(" ")).collect()
    }

    fn aligned(lines: &[String], passage: &str) -> (PreparedText, PreparedText, CharAlignment<i64>) {
        let p = page_of(lines);
        let q = passage_of(passage);
        let params = AlignParams::<i64> {
            min_align_chars: 1,
            ..AlignParams::default()
        };
        let a = align_chars(&p.chars(), &q.chars(), &params).unwrap();
        (p, q, a)
    }

    #[test]
    fn four_covered_lines_are_rejected() {
        let ws = words(24, 1);
        let lines = lines_of(&ws, 6);
        let (p, _, a) = aligned(&lines, &ws.join(" "));
        let d = filter_alignment(&a, &p, "w", &FilterPolicy::default());
        assert_eq!(d, FilterDecision::Reject(RejectReason::Lines { found: 4, required: 5 }));
    }

    #[test]
    fn six_covered_lines_are_accepted() {
        let ws = words(36, 2);
        let lines = lines_of(&ws, 6);
        let (p, _, a) = aligned(&lines, &ws.join(" "));
        assert!(a.match_rate >= 0.8);
        assert_eq!(filter_alignment(&a, &p, "w", &FilterPolicy::default()), FilterDecision::Accept);
    }

    #[test]
    fn low_match_rate_is_rejected() {
        let ws = words(36, 3);
        let lines = lines_of(&ws, 6);
        let (p, _, mut a) = aligned(&lines, &ws.join(" "));
        a.match_rate = 0.55;
        let d = filter_alignment(&a, &p, "w", &FilterPolicy::default());
        assert_eq!(d.is_accept(), false);
        assert!(matches!(d, FilterDecision::Reject(RejectReason::MatchRate { .. })));
    }

    #[test]
    fn mixed_works_are_rejected() {
        let ws = words(36, 4);
        let lines = lines_of(&ws, 6);
        let (p, _, mut a) = aligned(&lines, &ws.join(" "));
        a.segments[0].work = Some("other".into());
        a.segments.push(Segment {
            work: None,
            ..a.segments[0].clone()
        });
        let d = filter_alignment(&a, &p, "w", &FilterPolicy::default());
        assert_eq!(d.is_accept(), false);
        let lax = FilterPolicy {
            require_same_work: false,
            ..FilterPolicy::default()
        };
        assert!(filter_alignment(&a, &p, "w", &lax).is_accept());
    }

    fn text_of_bytes(target: usize, salt: usize) -> String {
        let mut out = String::new();
        let mut k = 0;
        while out.len() < target {
            let w = &words(k + 1, salt)[k];
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(w);
            k += 1;
        }
        out.truncate(target);
        while out.ends_with(' ') {
            out.pop();
            out.push('x');
        }
        out
    }

    fn identity_chunk(text: &str) -> Result<Chunked> {
        let lines: Vec<String> = vec![text.to_string()];
        let (p, q, a) = aligned(&lines, text);
        chunk(&a, &p, &q, "lat", &ChunkBounds::default())
    }

    #[test]
    fn long_region_chunks_within_bounds() {
        let text = text_of_bytes(2500, 5);
        let out = identity_chunk(&text).unwrap();
        assert!(out.pairs.len() >= 3);
        for p in &out.pairs {
            assert!((300..=1000).contains(&p.src_bytes), "{}", p.src_bytes);
            assert_eq!(p.src, p.tgt);
        }
    }

    #[test]
    fn short_region_is_unchunkable() {
        let text = text_of_bytes(250, 6);
        assert!(matches!(identity_chunk(&text), Err(Error::Unchunkable { bytes: 250, .. })));
    }

    #[test]
    fn region_of_1050_bytes_splits_near_650() {
        let text = text_of_bytes(1050, 7);
        let out = identity_chunk(&text).unwrap();
        assert_eq!(out.pairs.len(), 2);
        let first = out.pairs[0].src_bytes;
        let spaces: Vec<usize> = text.match_indices(' ').map(|(k, _)| k).collect();
        let nearest = spaces.iter().copied().min_by_key(|&k| (k.abs_diff(650), k)).unwrap();
        assert_eq!(first, nearest);
        assert_eq!(first + 1 + out.pairs[1].src_bytes, 1050);
    }

    #[test]
    fn chunks_reassemble_the_region() {
        let text = text_of_bytes(3700, 8);
        let out = identity_chunk(&text).unwrap();
        let mut pieces: Vec<(Span, String)> = out.pairs.iter().map(|p| (p.lineage.src_span, p.src.clone())).collect();
        let chars: Vec<char> = text.chars().collect();
        pieces.extend(out.dropped.iter().map(|s| (*s, chars[s.start..s.end].iter().collect())));
        pieces.sort_by_key(|(s, _)| s.start);
        let joined = pieces.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(joined, text);
    }

    fn pair(id: &str, lang: &str) -> AlignedPair {
        AlignedPair {
            id: id.into(),
            src: "a".into(),
            tgt: "a".into(),
            src_bytes: 1,
            match_rate: 1.0,
            lineage: Lineage {
                doc_id: "d".into(),
                page_id: "p".into(),
                work_id: "w".into(),
                passage_id: "w#0".into(),
                src_span: Span::new(0, 1),
                tgt_span: Span::new(0, 1),
            },
            language: lang.into(),
            ops: vec![Op::Match],
        }
    }

    #[test]
    fn manifest_upsamples_old_french() {
        let mut pairs: Vec<AlignedPair> = (0..100).map(|k| pair(&format!("la{k}"), "lat")).collect();
        pairs.push(pair("fr0", "fro"));
        let factors = BTreeMap::from([("fro".to_string(), 10)]);
        let m = build_manifest(&pairs, &factors, 42).unwrap();
        assert_eq!(m.ids.len(), 110);
        assert_eq!(m.ids.iter().filter(|id| *id == "fr0").count(), 10);
    }

    #[test]
    fn manifest_with_unit_factors_is_a_permutation() {
        let pairs: Vec<AlignedPair> = (0..20).map(|k| pair(&format!("p{k}"), "lat")).collect();
        let m = build_manifest(&pairs, &BTreeMap::new(), 7).unwrap();
        let mut sorted = m.ids.clone();
        sorted.sort();
        let mut expected: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
        expected.sort();
        assert_eq!(sorted, expected);
        assert_eq!(build_manifest(&pairs, &BTreeMap::new(), 7).unwrap(), m);
        assert!(build_manifest([].iter(), &BTreeMap::new(), 7).unwrap().ids.is_empty());
    }

    #[test]
    fn manifest_rejects_zero_factor_and_round_trips() {
        let factors = BTreeMap::from([("fro".to_string(), 0)]);
        assert!(build_manifest([].iter(), &factors, 1).is_err());
        let m = build_manifest(&[pair("a", "lat"), pair("b", "lat")], &BTreeMap::new(), 9).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(Manifest::read_from(&buf[..]).unwrap(), m);
    }
}
