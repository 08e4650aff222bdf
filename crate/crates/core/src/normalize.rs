//! Normalizers: a deterministic rule-based baseline and adapters for external
//! normalizers, plus a checker for mechanically detectable task violations.
//!
//! The baseline works word by word on the canonically decomposed text:
//! marker expansions from the rule table first, then the u/v and i/j
//! heuristic, then capitalization after strong punctuation and of listed
//! proper names. Numerals and words on the exception list pass through.
//! Punctuation is never part of a word, so it is copied unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::abbrev::MarkerTable;
use crate::aligner::Span;
use crate::error::{Error, Result};
use crate::textprep::{decompose, is_combining_mark, is_punctuation};

pub const DEFAULT_RULES: &str = include_str!("../data/rules.tsv");

fn default_markers() -> &'static MarkerTable {
    static MARKERS: OnceLock<MarkerTable> = OnceLock::new();
    MARKERS.get_or_init(MarkerTable::default)
}

/// Punctuation the normalizer must preserve: the general punctuation classes
/// minus abbreviation markers that happen to be filed there (the Tironian et).
pub fn is_text_punctuation(c: char) -> bool {
    is_punctuation(c) && !default_markers().contains(c)
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !is_text_punctuation(c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPred {
    Any,
    Initial,
    Final,
    Word,
    Before(Vec<char>),
    After(Vec<char>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationRule {
    pub pattern: String,
    pub replacement: String,
    pub context: Vec<ContextPred>,
    /// `None` applies to every language.
    pub languages: Option<Vec<String>>,
    pub priority: i32,
    /// Line of the rule table.
    pub line: usize,
}

impl NormalizationRule {
    pub fn applies_to(&self, language: &str) -> bool {
        self.languages.as_ref().is_none_or(|ls| ls.iter().any(|l| l == language))
    }

    fn label(&self) -> String {
        format!("{}>{}", self.pattern.escape_unicode(), self.replacement)
    }

    fn languages_overlap(&self, other: &Self) -> bool {
        match (&self.languages, &other.languages) {
            (Some(a), Some(b)) => a.iter().any(|l| b.contains(l)),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: u32,
    /// Sorted by descending priority, then table order.
    pub rules: Vec<NormalizationRule>,
    pub exceptions: HashSet<String>,
    pub proper_names: HashSet<String>,
}

fn unescape(field: &str, line: usize) -> Result<String> {
    let mut out = String::new();
    let mut rest = field;
    while let Some(pos) = rest.find("\\u{") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 3..];
        let close = after.find('}').ok_or_else(|| Error::InvalidRule {
            line,
            reason: format!("unterminated escape in {field:?}"),
        })?;
        let c = u32::from_str_radix(&after[..close], 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| Error::InvalidRule {
                line,
                reason: format!("bad escape in {field:?}"),
            })?;
        out.push(c);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn parse_context(field: &str, line: usize) -> Result<Vec<ContextPred>> {
    field
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| match p {
            "any" => Ok(ContextPred::Any),
            "initial" => Ok(ContextPred::Initial),
            "final" => Ok(ContextPred::Final),
            "word" => Ok(ContextPred::Word),
            _ => {
                if let Some(cs) = p.strip_prefix("before:") {
                    Ok(ContextPred::Before(cs.chars().collect()))
                } else if let Some(cs) = p.strip_prefix("after:") {
                    Ok(ContextPred::After(cs.chars().collect()))
                } else {
                    Err(Error::InvalidRule {
                        line,
                        reason: format!("unknown context {p:?}"),
                    })
                }
            }
        })
        .collect()
}

impl RuleSet {
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = RuleSet {
            version: 1,
            ..RuleSet::default()
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if let Some(v) = raw.strip_prefix("#version") {
                set.version = v.trim().parse().map_err(|_| Error::InvalidRule {
                    line,
                    reason: format!("bad version {v:?}"),
                })?;
                continue;
            }
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            match cols[0] {
                "@except" | "@name" => {
                    let word = cols.get(1).map(|w| decompose(w.trim()).to_lowercase()).unwrap_or_default();
                    if word.is_empty() {
                        return Err(Error::InvalidRule {
                            line,
                            reason: format!("{} needs a word", cols[0]),
                        });
                    }
                    if cols[0] == "@except" {
                        set.exceptions.insert(word);
                    } else {
                        set.proper_names.insert(word);
                    }
                    continue;
                }
                _ => {}
            }
            if cols.len() != 5 {
                return Err(Error::InvalidRule {
                    line,
                    reason: format!("expected 5 tab-separated columns, found {}", cols.len()),
                });
            }
            let pattern = decompose(&unescape(cols[0], line)?).to_lowercase();
            let replacement = unescape(cols[1], line)?;
            if pattern.is_empty() {
                return Err(Error::InvalidRule {
                    line,
                    reason: "empty pattern".into(),
                });
            }
            if pattern.chars().chain(replacement.chars()).any(|c| !is_word_char(c)) {
                return Err(Error::InvalidRule {
                    line,
                    reason: "patterns and replacements may not contain whitespace or punctuation".into(),
                });
            }
            let languages = match cols[3].trim() {
                "*" | "" => None,
                ls => Some(ls.split(',').map(|l| l.trim().to_string()).collect()),
            };
            let priority = cols[4].trim().parse().map_err(|_| Error::InvalidRule {
                line,
                reason: format!("bad priority {:?}", cols[4]),
            })?;
            set.rules.push(NormalizationRule {
                pattern,
                replacement,
                context: parse_context(cols[2], line)?,
                languages,
                priority,
                line,
            });
        }
        set.check_conflicts()?;
        set.rules.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.line.cmp(&b.line)));
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check_conflicts(&self) -> Result<()> {
        for (k, a) in self.rules.iter().enumerate() {
            for b in &self.rules[k + 1..] {
                let prefix = a.pattern.starts_with(&b.pattern) || b.pattern.starts_with(&a.pattern);
                if a.priority == b.priority && prefix && a.languages_overlap(b) {
                    return Err(Error::RuleConflict {
                        first: a.line,
                        second: b.line,
                        reason: format!(
                            "patterns {} and {} can fire at the same position with priority {}",
                            a.pattern.escape_unicode(),
                            b.pattern.escape_unicode(),
                            a.priority
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The shipped rule table.
pub fn default_rules() -> RuleSet {
    RuleSet::parse(DEFAULT_RULES).expect("shipped rule table is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Copy,
    Rewritten,
    Opaque,
}

/// Provenance: `input` characters of the decomposed input produced `output`
/// characters of the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanLink {
    pub input: Span,
    pub output: Span,
    pub kind: LinkKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub rule: String,
    /// Position in the decomposed input.
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizerResult {
    pub text: String,
    pub spans: Vec<SpanLink>,
    pub applied_rules: Vec<AppliedRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A lexical numeral: Arabic digits, or Roman numeral letters with an
/// optional final j.
pub fn is_numeral(word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    if word.chars().all(|c| c.is_ascii_digit()) {
        return true;
    }
    let lower = word.to_lowercase();
    let body = lower.trim_end_matches('j');
    !body.is_empty() && body.chars().all(|c| "ivxlcdm".contains(c))
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn is_consonant(c: char) -> bool {
    c.is_alphabetic() && !is_vowel(c)
}

pub fn is_ramist(c: char) -> bool {
    matches!(c, 'u' | 'v' | 'i' | 'j' | 'U' | 'V' | 'I' | 'J')
}

fn with_case(target: char, like: char) -> char {
    if like.is_uppercase() {
        target.to_uppercase().next().unwrap_or(target)
    } else {
        target
    }
}

#[derive(Debug, Clone, Copy)]
struct OutChar {
    c: char,
    link: usize,
}

#[derive(Debug, Clone, Copy)]
struct Link {
    input: Span,
    kind: LinkKind,
}

struct Builder {
    out: Vec<OutChar>,
    links: Vec<Link>,
    applied: Vec<AppliedRule>,
}

impl Builder {
    fn copy(&mut self, c: char, at: usize) {
        self.links.push(Link {
            input: Span::new(at, at + 1),
            kind: LinkKind::Copy,
        });
        self.out.push(OutChar {
            c,
            link: self.links.len() - 1,
        });
    }

    fn rewrite(&mut self, input: Span, text: impl Iterator<Item = char>) {
        self.links.push(Link {
            input,
            kind: LinkKind::Rewritten,
        });
        let link = self.links.len() - 1;
        self.out.extend(text.map(|c| OutChar { c, link }));
    }

    fn set(&mut self, k: usize, c: char, rule: &str) {
        if self.out[k].c == c {
            return;
        }
        self.out[k].c = c;
        let link = &mut self.links[self.out[k].link];
        link.kind = LinkKind::Rewritten;
        self.applied.push(AppliedRule {
            rule: rule.to_string(),
            at: link.input.start,
        });
    }

    fn finish(self, warnings: Vec<String>) -> NormalizerResult {
        let text: String = self.out.iter().map(|o| o.c).collect();
        let mut spans: Vec<SpanLink> = Vec::new();
        let mut k = 0;
        let mut out_pos = 0;
        for (id, link) in self.links.iter().enumerate() {
            let start = out_pos;
            while k < self.out.len() && self.out[k].link == id {
                k += 1;
                out_pos += 1;
            }
            let output = Span::new(start, out_pos);
            match spans.last_mut() {
                Some(prev) if prev.kind == LinkKind::Copy && link.kind == LinkKind::Copy => {
                    prev.input.end = link.input.end;
                    prev.output.end = output.end;
                }
                _ => spans.push(SpanLink {
                    input: link.input,
                    output,
                    kind: link.kind,
                }),
            }
        }
        NormalizerResult {
            text,
            spans,
            applied_rules: self.applied,
            warnings,
        }
    }
}

fn context_holds(preds: &[ContextPred], word: &[char], start: usize, end: usize) -> bool {
    let base = |k: usize| word[k].to_lowercase().next().unwrap_or(word[k]);
    preds.iter().all(|p| match p {
        ContextPred::Any => true,
        ContextPred::Initial => start == 0,
        ContextPred::Final => end == word.len(),
        ContextPred::Word => start == 0 && end == word.len(),
        ContextPred::Before(cs) => end < word.len() && cs.contains(&base(end)),
        ContextPred::After(cs) => start > 0 && cs.contains(&base(start - 1)),
    })
}

/// The rule-based normalizer.
#[derive(Debug, Clone)]
pub struct RuleNormalizer {
    rules: RuleSet,
    /// Rules grouped by the first character of their pattern.
    by_first: HashMap<char, Vec<usize>>,
}

impl Default for RuleNormalizer {
    fn default() -> Self {
        Self::new(default_rules())
    }
}

impl RuleNormalizer {
    pub fn new(rules: RuleSet) -> Self {
        let mut by_first: HashMap<char, Vec<usize>> = HashMap::new();
        for (k, r) in rules.rules.iter().enumerate() {
            by_first.entry(r.pattern.chars().next().unwrap()).or_default().push(k);
        }
        Self { rules, by_first }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn normalize(&self, text: &str, language: &str) -> NormalizerResult {
        let input: Vec<char> = decompose(text).chars().collect();
        let mut b = Builder {
            out: Vec::with_capacity(input.len()),
            links: Vec::new(),
            applied: Vec::new(),
        };
        // output ranges of the words, and whether each is a numeral or a
        // single-letter initial (which both suppress the next capital)
        let mut words: Vec<(usize, usize, bool)> = Vec::new();
        let mut k = 0;
        while k < input.len() {
            if !is_word_char(input[k]) {
                b.copy(input[k], k);
                k += 1;
                continue;
            }
            let start = k;
            while k < input.len() && is_word_char(input[k]) {
                k += 1;
            }
            let word = &input[start..k];
            let word_str: String = word.iter().collect();
            let out_start = b.out.len();
            let opaque = is_numeral(&word_str) || self.rules.exceptions.contains(&word_str.to_lowercase());
            if opaque {
                word.iter().enumerate().for_each(|(o, &c)| b.copy(c, start + o));
            } else {
                self.expand(word, start, language, &mut b);
                ramist(&mut b, out_start, language);
            }
            // judged on the output so that a second pass sees the same thing
            let produced: Vec<char> = b.out[out_start..].iter().map(|o| o.c).collect();
            let letters = produced.iter().filter(|c| !is_combining_mark(**c)).count();
            let quiet = is_numeral(&produced.iter().collect::<String>())
                || (letters == 1 && produced[0].is_alphabetic());
            words.push((out_start, b.out.len(), quiet));
        }
        self.capitalize(&mut b, &words);
        b.finish(Vec::new())
    }

    fn expand(&self, word: &[char], offset: usize, language: &str, b: &mut Builder) {
        let lower: Vec<char> = word.iter().map(|c| c.to_lowercase().next().unwrap_or(*c)).collect();
        let mut p = 0;
        while p < word.len() {
            let mut fired = None;
            if let Some(cands) = self.by_first.get(&lower[p]) {
                for &ri in cands {
                    let r = &self.rules.rules[ri];
                    let pat: Vec<char> = r.pattern.chars().collect();
                    let end = p + pat.len();
                    if end <= word.len()
                        && lower[p..end] == pat[..]
                        && r.applies_to(language)
                        && context_holds(&r.context, word, p, end)
                    {
                        fired = Some((ri, end));
                        break;
                    }
                }
            }
            match fired {
                Some((ri, end)) => {
                    let r = &self.rules.rules[ri];
                    let upper = word[p].is_uppercase();
                    let repl = r
                        .replacement
                        .chars()
                        .enumerate()
                        .map(move |(n, c)| if n == 0 && upper { with_case(c, 'A') } else { c });
                    b.rewrite(Span::new(offset + p, offset + end), repl);
                    b.applied.push(AppliedRule {
                        rule: r.label(),
                        at: offset + p,
                    });
                    p = end;
                }
                None => {
                    b.copy(word[p], offset + p);
                    p += 1;
                }
            }
        }
    }

    fn capitalize(&self, b: &mut Builder, words: &[(usize, usize, bool)]) {
        let mut prev_end = 0;
        let mut prev_quiet = true;
        for (n, &(start, end, quiet)) in words.iter().enumerate() {
            let strong = n > 0
                && !prev_quiet
                && b.out[prev_end..start].iter().any(|o| matches!(o.c, '.' | '!' | '?'));
            let text: String = b.out[start..end].iter().map(|o| o.c).collect();
            let name = self.rules.proper_names.contains(&text.to_lowercase());
            if (strong || name) && !quiet {
                if let Some(first) = (start..end).find(|&k| b.out[k].c.is_alphabetic()) {
                    let c = b.out[first].c;
                    if c.is_lowercase() {
                        let up = c.to_uppercase().next().unwrap_or(c);
                        b.set(first, up, "capitalize");
                    }
                }
            }
            prev_end = end;
            prev_quiet = quiet;
        }
    }
}

/// The u/v and i/j heuristic over one word of the output, repeated until it
/// no longer changes anything.
fn ramist(b: &mut Builder, start: usize, language: &str) {
    for _ in 0..8 {
        if !ramist_pass(b, start, language) {
            break;
        }
    }
}

fn ramist_pass(b: &mut Builder, start: usize, language: &str) -> bool {
    let letters: Vec<usize> = (start..b.out.len()).filter(|&k| !is_combining_mark(b.out[k].c)).collect();
    let mut changed = false;
    for (n, &k) in letters.iter().enumerate() {
        let c = b.out[k].c;
        if !is_ramist(c) {
            continue;
        }
        let prev = n.checked_sub(1).map(|m| b.out[letters[m]].c);
        let next = letters.get(n + 1).map(|&m| b.out[m].c);
        let next2 = letters.get(n + 2).map(|&m| b.out[m].c);
        let vowel = |x: Option<char>| x.is_some_and(is_vowel);
        let consonant = |x: Option<char>| x.is_some_and(is_consonant);
        let target = match c.to_ascii_lowercase() {
            'u' => {
                let initial = prev.is_none() && vowel(next);
                let between = vowel(prev)
                    && vowel(next)
                    && !(next.map(|x| x.to_ascii_lowercase()) == Some('u') && vowel(next2));
                (initial || between).then_some(('v', "ramist:u>v"))
            }
            'v' => (consonant(next) && (prev.is_none() || consonant(prev))).then_some(('u', "ramist:v>u")),
            'j' => (consonant(next) || next.is_none()).then_some(('i', "ramist:j>i")),
            'i' => (language == "fro" && prev.is_none() && vowel(next)).then_some(('j', "ramist:i>j")),
            _ => None,
        };
        if let Some((t, rule)) = target {
            b.set(k, with_case(t, c), rule);
            changed = true;
        }
    }
    changed
}

/// Convenience wrapper around [`RuleNormalizer::normalize`].
pub fn normalize_rules(text: &str, rules: &RuleNormalizer, language: &str) -> NormalizerResult {
    rules.normalize(text, language)
}

// ---------------------------------------------------------------------------
// External normalizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub id: String,
    pub text: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ExternalResponse {
    id: String,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    /// A process reading one JSON request per line on stdin and writing one
    /// `{id, text}` line per request on stdout, in any order.
    Subprocess {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    /// An HTTP service answering `POST {id, text, language}` with `{id, text}`.
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_in_flight() -> usize {
    4
}

fn opaque_result(input: &str, text: String) -> NormalizerResult {
    let in_len = input.chars().count();
    let out_len = text.chars().count();
    let mut warnings = Vec::new();
    if text.is_empty() && !input.is_empty() {
        warnings.push("empty output".to_string());
    }
    NormalizerResult {
        text,
        spans: vec![SpanLink {
            input: Span::new(0, in_len),
            output: Span::new(0, out_len),
            kind: LinkKind::Opaque,
        }],
        applied_rules: Vec::new(),
        warnings,
    }
}

/// Sends every request to the endpoint and returns results in input order.
pub fn normalize_external(requests: &[ExternalRequest], endpoint: &Endpoint) -> Result<Vec<NormalizerResult>> {
    let texts = match endpoint {
        Endpoint::Subprocess {
            program,
            args,
            timeout_ms,
            max_in_flight,
        } => run_subprocess(requests, program, args, Duration::from_millis(*timeout_ms), *max_in_flight)?,
        Endpoint::Http {
            url,
            timeout_ms,
            max_in_flight,
        } => run_http(requests, url, Duration::from_millis(*timeout_ms), *max_in_flight)?,
    };
    Ok(requests
        .iter()
        .zip(texts)
        .map(|(r, t)| opaque_result(&r.text, t))
        .collect())
}

fn run_subprocess(
    requests: &[ExternalRequest],
    program: &str,
    args: &[String],
    timeout: Duration,
    max_in_flight: usize,
) -> Result<Vec<String>> {
    let first_id = || requests.first().map(|r| r.id.clone()).unwrap_or_default();
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| Error::EndpointFailure {
            id: first_id(),
            reason: format!("cannot start {program}: {e}"),
        })?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel::<std::io::Result<String>>();
    let reader = std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });

    let index: HashMap<&str, usize> = requests.iter().enumerate().map(|(k, r)| (r.id.as_str(), k)).collect();
    let mut results: Vec<Option<String>> = vec![None; requests.len()];
    let mut pending: BTreeMap<usize, ()> = BTreeMap::new();
    let mut next = 0;
    let window = max_in_flight.max(1);

    let outcome = (|| -> Result<()> {
        while next < requests.len() || !pending.is_empty() {
            if next < requests.len() && pending.len() < window {
                let r = &requests[next];
                let line = serde_json::to_string(r)?;
                writeln!(stdin, "{line}")
                    .and_then(|_| stdin.flush())
                    .map_err(|e| Error::EndpointFailure {
                        id: r.id.clone(),
                        reason: format!("write failed: {e}"),
                    })?;
                pending.insert(next, ());
                next += 1;
                continue;
            }
            let oldest = *pending.keys().next().expect("something in flight");
            let line = match rx.recv_timeout(timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => {
                    return Err(Error::EndpointFailure {
                        id: requests[oldest].id.clone(),
                        reason: format!("read failed: {e}"),
                    })
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout {
                        id: requests[oldest].id.clone(),
                        millis: timeout.as_millis() as u64,
                    })
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(Error::EndpointFailure {
                        id: requests[oldest].id.clone(),
                        reason: "process closed its output".into(),
                    })
                }
            };
            let resp: ExternalResponse = serde_json::from_str(&line).map_err(|e| Error::EndpointFailure {
                id: requests[oldest].id.clone(),
                reason: format!("malformed response {line:?}: {e}"),
            })?;
            let k = *index.get(resp.id.as_str()).ok_or_else(|| Error::EndpointFailure {
                id: resp.id.clone(),
                reason: "response for an unknown id".into(),
            })?;
            if pending.remove(&k).is_none() {
                return Err(Error::EndpointFailure {
                    id: resp.id,
                    reason: "duplicate response".into(),
                });
            }
            results[k] = Some(resp.text);
        }
        Ok(())
    })();

    drop(stdin);
    if outcome.is_err() {
        let _ = child.kill();
    }
    let _ = child.wait();
    let _ = reader.join();
    outcome?;
    Ok(results.into_iter().map(|r| r.expect("every request answered")).collect())
}

fn run_http(requests: &[ExternalRequest], url: &str, timeout: Duration, max_in_flight: usize) -> Result<Vec<String>> {
    let client = reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::EndpointFailure {
            id: requests.first().map(|r| r.id.clone()).unwrap_or_default(),
            reason: e.to_string(),
        })?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..requests.len()).map(|_| None).collect());
    let failed = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..max_in_flight.max(1).min(requests.len().max(1)) {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(r) = requests.get(k) else { break };
                let outcome = post_one(&client, url, r, timeout);
                if outcome.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results lock")[k] = Some(outcome);
            });
        }
    });
    let mut out = Vec::with_capacity(requests.len());
    for (k, slot) in results.into_inner().expect("results lock").into_iter().enumerate() {
        match slot {
            Some(Ok(text)) => out.push(text),
            Some(Err(e)) => return Err(e),
            None => {
                return Err(Error::EndpointFailure {
                    id: requests[k].id.clone(),
                    reason: "not sent after an earlier failure".into(),
                })
            }
        }
    }
    Ok(out)
}

fn post_one(client: &reqwest::blocking::Client, url: &str, r: &ExternalRequest, timeout: Duration) -> Result<String> {
    let fail = |reason: String| Error::EndpointFailure {
        id: r.id.clone(),
        reason,
    };
    let resp = client.post(url).json(r).send().map_err(|e| {
        if e.is_timeout() {
            Error::Timeout {
                id: r.id.clone(),
                millis: timeout.as_millis() as u64,
            }
        } else {
            fail(e.to_string())
        }
    })?;
    if !resp.status().is_success() {
        return Err(fail(format!("status {}", resp.status())));
    }
    let body: ExternalResponse = resp.json().map_err(|e| fail(format!("malformed response: {e}")))?;
    if body.id != r.id {
        return Err(fail(format!("response carries id {}", body.id)));
    }
    Ok(body.text)
}

// ---------------------------------------------------------------------------
// Task checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    PunctuationChanged { added: Vec<char>, removed: Vec<char> },
    NumeralAltered { numeral: String },
    InitialExpanded { initial: String },
    LengthRatio { ratio: f64, cap: f64 },
    AmbiguousExpansion { token: String, output: String },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::PunctuationChanged { .. } => "punctuation_changed",
            Violation::NumeralAltered { .. } => "numeral_altered",
            Violation::InitialExpanded { .. } => "initial_expanded",
            Violation::LengthRatio { .. } => "length_ratio",
            Violation::AmbiguousExpansion { .. } => "ambiguous_expansion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationOptions {
    pub length_ratio_cap: f64,
    /// Abbreviated tokens with more than one attested expansion; resolving
    /// them is reported.
    pub ambiguous: Vec<String>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            length_ratio_cap: 3.0,
            ambiguous: vec!["m\u{142}t".to_string()],
        }
    }
}

fn punct_counts(text: &str) -> BTreeMap<char, i64> {
    let mut m = BTreeMap::new();
    for c in text.chars().filter(|&c| is_text_punctuation(c)) {
        *m.entry(c).or_insert(0) += 1;
    }
    m
}

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !is_word_char(c))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Single capital letters followed by a period, such as `S.`.
fn initials(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    for k in 0..chars.len() {
        let starts = k == 0 || !is_word_char(chars[k - 1]);
        let mut end = k + 1;
        while end < chars.len() && is_combining_mark(chars[end]) {
            end += 1;
        }
        if starts && chars[k].is_uppercase() && chars.get(end) == Some(&'.') {
            out.push(chars[k..=end].iter().collect());
        }
    }
    out
}

/// Mechanically detectable departures from the task definition.
pub fn validate_against_task(output: &str, source: &str, opts: &ValidationOptions) -> Vec<Violation> {
    let out = decompose(output);
    let src = decompose(source);
    let mut violations = Vec::new();

    let (a, b) = (punct_counts(&src), punct_counts(&out));
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for c in a.keys().chain(b.keys()).collect::<std::collections::BTreeSet<_>>() {
        let d = b.get(c).copied().unwrap_or(0) - a.get(c).copied().unwrap_or(0);
        if d > 0 {
            added.extend(std::iter::repeat_n(*c, d as usize));
        } else if d < 0 {
            removed.extend(std::iter::repeat_n(*c, (-d) as usize));
        }
    }
    if !added.is_empty() || !removed.is_empty() {
        violations.push(Violation::PunctuationChanged { added, removed });
    }

    let out_words = words_of(&out);
    let mut available: HashMap<&str, usize> = HashMap::new();
    for w in &out_words {
        *available.entry(w.as_str()).or_default() += 1;
    }
    for w in words_of(&src).iter().filter(|w| is_numeral(w)) {
        match available.get_mut(w.as_str()) {
            Some(n) if *n > 0 => *n -= 1,
            _ => violations.push(Violation::NumeralAltered { numeral: w.clone() }),
        }
    }

    let mut out_initials: HashMap<String, usize> = HashMap::new();
    for i in initials(&out) {
        *out_initials.entry(i).or_default() += 1;
    }
    for i in initials(&src) {
        match out_initials.get_mut(&i) {
            Some(n) if *n > 0 => *n -= 1,
            _ => violations.push(Violation::InitialExpanded { initial: i }),
        }
    }

    let (ls, lo) = (src.chars().count(), out.chars().count());
    if ls > 0 && lo as f64 > opts.length_ratio_cap * ls as f64 {
        violations.push(Violation::LengthRatio {
            ratio: lo as f64 / ls as f64,
            cap: opts.length_ratio_cap,
        });
    }

    let src_words = words_of(&src);
    if src_words.len() == out_words.len() {
        for (s, o) in src_words.iter().zip(&out_words) {
            if s != o && opts.ambiguous.iter().any(|a| decompose(a) == *s) {
                violations.push(Violation::AmbiguousExpansion {
                    token: s.clone(),
                    output: o.clone(),
                });
            }
        }
    }
    violations
}
