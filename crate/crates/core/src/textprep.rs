//! Ingestion of transcribed pages and edition texts.
//!
//! Every text that reaches the index or the aligner goes through canonical
//! decomposition first, so that a precomposed `õ` and an `o` followed by a
//! combining tilde are the same two code points on both sides. Prepared texts
//! keep a per-character offset map back to the source line and column so that
//! alignments can be reported against the original transcription.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::char::{canonical_combining_class, decompose_canonical};

use crate::error::{Error, Result};

/// Zone tag given to lines that carry none.
pub const DEFAULT_ZONE: &str = "main";

fn default_zone() -> String {
    DEFAULT_ZONE.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLine {
    pub text: String,
    #[serde(default = "default_zone")]
    pub zone: String,
}

impl SourceLine {
    pub fn main(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            zone: default_zone(),
        }
    }

    pub fn in_zone(text: impl Into<String>, zone: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            zone: zone.into(),
        }
    }
}

/// One transcribed manuscript page, lines in reading order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePage {
    pub doc_id: String,
    pub page_id: String,
    pub lines: Vec<SourceLine>,
    /// Informational only; alignment never filters on it.
    #[serde(default, rename = "language", skip_serializing_if = "Option::is_none")]
    pub language_hint: Option<String>,
}

/// A whole edited work as ingested from the editions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditionWork {
    pub work_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl EditionWork {
    pub fn language(&self) -> Option<&str> {
        self.metadata.get("language").and_then(|v| v.as_str())
    }

    /// Splits the work into passages of at most `max_chars` characters, cutting
    /// at whitespace. A single whitespace-free run longer than `max_chars` is
    /// kept whole.
    pub fn passages(&self, max_chars: usize) -> Vec<EditionPassage> {
        let chars: Vec<char> = self.text.chars().collect();
        let max_chars = max_chars.max(1);
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = (start + max_chars).min(chars.len());
            if end < chars.len() {
                if let Some(cut) = (start + 1..=end).rev().find(|&k| chars[k - 1].is_whitespace()) {
                    end = cut;
                } else if let Some(next) = (end..chars.len()).find(|&k| chars[k].is_whitespace()) {
                    end = next + 1;
                } else {
                    end = chars.len();
                }
            }
            let text: String = chars[start..end].iter().collect();
            if !text.trim().is_empty() {
                out.push(EditionPassage {
                    work_id: self.work_id.clone(),
                    passage_id: format!("{}#{}", self.work_id, out.len()),
                    text,
                    char_offset: start,
                });
            }
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditionPassage {
    pub work_id: String,
    pub passage_id: String,
    pub text: String,
    pub char_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageRef {
    pub doc_id: String,
    pub page_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PassageRef {
    pub work_id: String,
    pub passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Page(PageRef),
    Passage(PassageRef),
}

/// Position of a prepared character in its source: line index within the
/// source page (always 0 for passages) and character column in that line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourcePos {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedText {
    pub text: String,
    /// One entry per character of `text`.
    pub offsets: Vec<SourcePos>,
    /// Character indices of the newlines inserted between source lines.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub line_breaks: Vec<usize>,
    pub origin: Origin,
}

impl PreparedText {
    pub fn chars(&self) -> Vec<char> {
        self.text.chars().collect()
    }

    pub fn char_len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_line_break(&self, idx: usize) -> bool {
        self.line_breaks.binary_search(&idx).is_ok()
    }

    pub fn page_ref(&self) -> Option<&PageRef> {
        match &self.origin {
            Origin::Page(p) => Some(p),
            Origin::Passage(_) => None,
        }
    }

    pub fn passage_ref(&self) -> Option<&PassageRef> {
        match &self.origin {
            Origin::Passage(p) => Some(p),
            Origin::Page(_) => None,
        }
    }
}

/// Zones kept when assembling page main text.
///
/// A line zone matches when it equals a kept tag or when its part before the
/// first `:` does (so `MainZone:column#1` matches `MainZone`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneFilter {
    pub keep: BTreeSet<String>,
}

impl Default for ZoneFilter {
    fn default() -> Self {
        Self::new([DEFAULT_ZONE, "MainZone"])
    }
}

impl ZoneFilter {
    pub fn new<I, S>(keep: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            keep: keep.into_iter().map(Into::into).collect(),
        }
    }

    pub fn accepts(&self, zone: &str) -> bool {
        if self.keep.contains(zone) {
            return true;
        }
        zone.split_once(':').is_some_and(|(head, _)| self.keep.contains(head))
    }
}

/// Canonical decomposition with canonical reordering of combining marks,
/// tracking for every output character the index of the input character it
/// came from. Within a reordered run of marks the source indices are
/// reassigned in ascending order so the map stays monotone.
pub fn decompose_with_sources(input: &str) -> (String, Vec<usize>) {
    let mut chars: Vec<(char, usize)> = Vec::with_capacity(input.len());
    for (idx, c) in input.chars().enumerate() {
        decompose_canonical(c, |d| chars.push((d, idx)));
    }
    let mut k = 0;
    while k < chars.len() {
        if canonical_combining_class(chars[k].0) == 0 {
            k += 1;
            continue;
        }
        let start = k;
        while k < chars.len() && canonical_combining_class(chars[k].0) != 0 {
            k += 1;
        }
        let run = &mut chars[start..k];
        if run.len() > 1 {
            let mut sources: Vec<usize> = run.iter().map(|&(_, s)| s).collect();
            sources.sort_unstable();
            run.sort_by_key(|&(c, _)| canonical_combining_class(c));
            for (slot, src) in run.iter_mut().zip(sources) {
                slot.1 = src;
            }
        }
    }
    let text = chars.iter().map(|&(c, _)| c).collect();
    let sources = chars.into_iter().map(|(_, s)| s).collect();
    (text, sources)
}

/// Canonical decomposition of a string.
pub fn decompose(input: &str) -> String {
    decompose_with_sources(input).0
}

pub fn is_combining_mark(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::NonspacingMark | GeneralCategory::SpacingMark | GeneralCategory::EnclosingMark
    )
}

/// Punctuation used in medieval transcriptions that Unicode does not file
/// under a `P*` category.
pub const MEDIEVAL_PUNCTUATION: &[char] = &[
    '\u{A78F}', // ꞏ sinological dot, used for the punctus
    '\u{02D9}', // ˙ dot above
    '\u{02CC}', // ˌ low vertical line
];

fn is_unicode_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// `P*` general categories plus [`MEDIEVAL_PUNCTUATION`].
pub fn is_punctuation(c: char) -> bool {
    is_unicode_punctuation(c) || MEDIEVAL_PUNCTUATION.contains(&c)
}

/// Builds the main text of a page: lines whose zone passes `zones`, joined by
/// a single newline, canonically decomposed.
pub fn prepare_page(page: &SourcePage, zones: &ZoneFilter) -> Result<PreparedText> {
    let mut text = String::new();
    let mut offsets = Vec::new();
    let mut line_breaks = Vec::new();
    let mut prev_line: Option<(u32, u32)> = None;

    for (line_idx, line) in page.lines.iter().enumerate() {
        if !zones.accepts(&line.zone) {
            continue;
        }
        let line_idx = line_idx as u32;
        if let Some((prev_idx, prev_len)) = prev_line {
            line_breaks.push(offsets.len());
            text.push('\n');
            offsets.push(SourcePos {
                line: prev_idx,
                col: prev_len,
            });
        }
        let (decomposed, sources) = decompose_with_sources(&line.text);
        text.push_str(&decomposed);
        offsets.extend(sources.into_iter().map(|col| SourcePos {
            line: line_idx,
            col: col as u32,
        }));
        prev_line = Some((line_idx, line.text.chars().count() as u32));
    }

    if prev_line.is_none() {
        return Err(Error::EmptyPage {
            doc_id: page.doc_id.clone(),
            page_id: page.page_id.clone(),
        });
    }
    Ok(PreparedText {
        text,
        offsets,
        line_breaks,
        origin: Origin::Page(PageRef {
            doc_id: page.doc_id.clone(),
            page_id: page.page_id.clone(),
        }),
    })
}

/// Decomposes an edition passage; offsets are `(0, char_offset + i)`.
pub fn prepare_passage(passage: &EditionPassage) -> Result<PreparedText> {
    if passage.text.is_empty() {
        return Err(Error::EmptyPassage {
            work_id: passage.work_id.clone(),
            passage_id: passage.passage_id.clone(),
        });
    }
    let (text, sources) = decompose_with_sources(&passage.text);
    let offsets = sources
        .into_iter()
        .map(|i| SourcePos {
            line: 0,
            col: (passage.char_offset + i) as u32,
        })
        .collect();
    Ok(PreparedText {
        text,
        offsets,
        line_breaks: Vec::new(),
        origin: Origin::Passage(PassageRef {
            work_id: passage.work_id.clone(),
            passage_id: passage.passage_id.clone(),
        }),
    })
}

/// Source `(line, column range)` pieces covering a span of prepared
/// characters, in text order. Inserted line breaks contribute nothing.
pub fn map_back(prepared: &PreparedText, span: Range<usize>) -> Result<Vec<(u32, Range<u32>)>> {
    let len = prepared.char_len();
    if span.start > span.end || span.end > len {
        return Err(Error::OutOfBounds {
            start: span.start,
            end: span.end,
            len,
        });
    }
    let mut out: Vec<(u32, Range<u32>)> = Vec::new();
    for idx in span {
        if prepared.is_line_break(idx) {
            continue;
        }
        let pos = prepared.offsets[idx];
        match out.last_mut() {
            Some((line, cols)) if *line == pos.line => {
                cols.start = cols.start.min(pos.col);
                cols.end = cols.end.max(pos.col + 1);
            }
            _ => out.push((pos.line, pos.col..pos.col + 1)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(lines: &[(&str, &str)]) -> SourcePage {
        SourcePage {
            doc_id: "d".into(),
            page_id: "p".into(),
            lines: lines
                .iter()
                .map(|(t, z)| SourceLine::in_zone(*t, *z))
                .collect(),
            language_hint: None,
        }
    }

    fn pos(line: u32, col: u32) -> SourcePos {
        SourcePos { line, col }
    }

    #[test]
    fn nasal_tilde_is_decomposed() {
        let p = prepare_page(&page(&[("c\u{f5}sul", "main")]), &ZoneFilter::default()).unwrap();
        assert_eq!(p.text, "co\u{303}sul");
        assert_eq!(p.offsets[1], pos(0, 1));
        assert_eq!(p.offsets[2], pos(0, 1));
        assert_eq!(p.offsets[3], pos(0, 2));
    }

    #[test]
    fn marginalia_only_page_is_empty() {
        let err = prepare_page(
            &page(&[("glossa", "MarginTextZone"), ("titulus", "RunningTitleZone")]),
            &ZoneFilter::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyPage { .. }));
    }

    #[test]
    fn ascii_lines_join_with_newline() {
        let p = prepare_page(&page(&[("ab", "main"), ("cd", "main")]), &ZoneFilter::default()).unwrap();
        assert_eq!(p.text, "ab\ncd");
        assert_eq!(
            p.offsets,
            vec![pos(0, 0), pos(0, 1), pos(0, 2), pos(1, 0), pos(1, 1)]
        );
        assert_eq!(p.line_breaks, vec![2]);
    }

    #[test]
    fn filtered_lines_keep_their_original_index() {
        let p = prepare_page(
            &page(&[("head", "RunningTitleZone"), ("ab", "MainZone:column#1")]),
            &ZoneFilter::default(),
        )
        .unwrap();
        assert_eq!(p.text, "ab");
        assert_eq!(p.offsets[0], pos(1, 0));
    }

    #[test]
    fn passage_offsets_follow_char_offset() {
        let passage = EditionPassage {
            work_id: "w".into(),
            passage_id: "w#0".into(),
            text: "\u{e9}t".into(),
            char_offset: 10,
        };
        let p = prepare_passage(&passage).unwrap();
        assert_eq!(p.text, "e\u{301}t");
        assert_eq!(p.offsets, vec![pos(0, 10), pos(0, 10), pos(0, 11)]);
    }

    #[test]
    fn empty_passage_is_rejected() {
        let passage = EditionPassage {
            work_id: "w".into(),
            passage_id: "w#0".into(),
            text: String::new(),
            char_offset: 0,
        };
        assert!(matches!(prepare_passage(&passage), Err(Error::EmptyPassage { .. })));
    }

    #[test]
    fn already_decomposed_text_is_unchanged() {
        assert_eq!(decompose("c\u{303}"), "c\u{303}");
        assert_eq!(decompose("consul"), "consul");
    }

    #[test]
    fn marks_are_put_in_canonical_order() {
        // acute (ccc 230) before dot below (ccc 220) is reordered
        let (text, sources) = decompose_with_sources("\u{e9}\u{323}");
        assert_eq!(text, "e\u{323}\u{301}");
        assert_eq!(sources, vec![0, 0, 1]);
    }

    #[test]
    fn map_back_cases() {
        let p = prepare_page(&page(&[("ab", "main"), ("cd", "main")]), &ZoneFilter::default()).unwrap();
        assert_eq!(map_back(&p, 3..5).unwrap(), vec![(1, 0..2)]);
        assert_eq!(map_back(&p, 0..5).unwrap(), vec![(0, 0..2), (1, 0..2)]);
        assert_eq!(map_back(&p, 1..4).unwrap(), vec![(0, 1..2), (1, 0..1)]);
        assert!(matches!(map_back(&p, 2..6), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn work_is_split_at_whitespace() {
        let work = EditionWork {
            work_id: "w".into(),
            text: "alpha beta gamma delta".into(),
            metadata: Default::default(),
        };
        let passages = work.passages(11);
        let joined: String = passages.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(joined, work.text);
        assert!(passages.iter().all(|p| p.text.chars().count() <= 11));
        assert_eq!(passages[1].char_offset, passages[0].text.chars().count());
    }

    #[test]
    fn punctuation_classes() {
        for c in ['.', ',', ';', '\u{b7}', '\u{204a}', '\u{a78f}', '\''] {
            assert!(is_punctuation(c), "{c:?}");
        }
        for c in ['a', '\u{303}', '\u{a76f}', '\u{a770}', ' '] {
            assert!(!is_punctuation(c), "{c:?}");
        }
    }
}
