//! Stage runner. Every stage writes into `<workdir>/<stage>-<key>/`, where the
//! key is a hash of the stage name, the parameters the stage reads and the
//! keys (or input digests) it depends on, so parameter sweeps never
//! overwrite each other and re-running a stage reproduces its files byte for
//! byte.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abbrev::{align_tokens, MarkerTable, PairAnnotation, PairTokenStats, StatsAccumulator, TokenOptions};
use crate::aligner::{align, AlignParams, AlignmentRecord};
use crate::error::{Error, Result};
use crate::fingerprint::{build_index, CandidatePair, GramIndex};
use crate::metrics::{evaluate, EvalOptions, EvalRecord, EvalReport};
use crate::normalize::{
    normalize_external, validate_against_task, Endpoint, ExternalRequest, NormalizerResult, RuleNormalizer, RuleSet,
    ValidationOptions, Violation,
};
use crate::pairbuilder::{build_manifest, chunk, filter_alignment, AlignedPair, ChunkBounds, FilterDecision, FilterPolicy};
use crate::textprep::{prepare_page, prepare_passage, EditionWork, PreparedText, SourcePage, ZoneFilter};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prep,
    Index,
    Candidates,
    Align,
    Pairs,
    Analyze,
    Normalize,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Prep,
        Stage::Index,
        Stage::Candidates,
        Stage::Align,
        Stage::Pairs,
        Stage::Analyze,
        Stage::Normalize,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prep => "prep",
            Stage::Index => "index",
            Stage::Candidates => "candidates",
            Stage::Align => "align",
            Stage::Pairs => "pairs",
            Stage::Analyze => "analyze",
            Stage::Normalize => "normalize",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub bins: usize,
    pub case_fold: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            bins: crate::abbrev::DEFAULT_BINS,
            case_fold: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeConfig {
    /// Rule table replacing the shipped one.
    pub rules: Option<PathBuf>,
    /// External normalizer; the rule-based one runs when absent.
    pub endpoint: Option<Endpoint>,
    /// Records `{id, text, language}` to normalize instead of the pair sources.
    pub input: Option<PathBuf>,
    pub validation: ValidationOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Records `{id, gold, pred, language?, gold_labels?, pred_labels?}` to
    /// score instead of normalizer output against pair targets.
    pub input: Option<PathBuf>,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pages: PathBuf,
    pub editions: PathBuf,
    pub workdir: PathBuf,
    /// Zone tags kept when assembling page text.
    pub zones: Vec<String>,
    /// Maximum passage length in characters when splitting editions.
    pub passage_chars: usize,
    pub n: usize,
    pub doc_freq_cap: usize,
    pub min_shared: usize,
    /// Candidates kept per page, best first; 0 keeps all.
    pub max_candidates: usize,
    pub align: AlignParams<f64>,
    pub filter: FilterPolicy,
    pub chunk: ChunkBounds,
    pub upsample: BTreeMap<String, u32>,
    pub seed: u64,
    /// Language of editions without a `language` metadata entry.
    pub default_language: String,
    /// Marker table replacing the shipped one.
    pub markers: Option<PathBuf>,
    pub analyze: AnalyzeConfig,
    pub normalize: NormalizeConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pages: "pages.jsonl".into(),
            editions: "editions.jsonl".into(),
            workdir: "work".into(),
            zones: ZoneFilter::default().keep.into_iter().collect(),
            passage_chars: 3000,
            n: crate::fingerprint::DEFAULT_GRAM_LEN,
            doc_freq_cap: crate::fingerprint::DEFAULT_DOC_FREQ_CAP,
            min_shared: crate::fingerprint::DEFAULT_MIN_SHARED,
            max_candidates: 10,
            align: AlignParams::default(),
            filter: FilterPolicy::default(),
            chunk: ChunkBounds::default(),
            upsample: BTreeMap::from([("fro".to_string(), 10)]),
            seed: 0,
            default_language: "und".into(),
            markers: None,
            analyze: AnalyzeConfig::default(),
            normalize: NormalizeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken from the config file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.pages);
        fix(&mut self.editions);
        fix(&mut self.workdir);
        for p in [
            self.markers.as_mut(),
            self.normalize.rules.as_mut(),
            self.normalize.input.as_mut(),
            self.eval.input.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.doc_freq_cap == 0 {
            return bad("doc_freq_cap must be at least 1".into());
        }
        if self.min_shared == 0 {
            return bad("min_shared must be at least 1".into());
        }
        if self.passage_chars == 0 {
            return bad("passage_chars must be at least 1".into());
        }
        if self.zones.is_empty() {
            return bad("zones must name at least one zone".into());
        }
        if let Some((lang, _)) = self.upsample.iter().find(|(_, &f)| f == 0) {
            return bad(format!("upsample factor for {lang} must be at least 1"));
        }
        if self.analyze.bins == 0 {
            return bad("analyze.bins must be at least 1".into());
        }
        if self.eval.options.mfw_k == 0 || self.eval.options.ngram == 0 {
            return bad("eval.options.mfw_k and eval.options.ngram must be at least 1".into());
        }
        if self.normalize.validation.length_ratio_cap <= 0.0 {
            return bad("normalize.validation.length_ratio_cap must be positive".into());
        }
        self.align.validate()?;
        self.filter.validate()?;
        self.chunk.validate()
    }
}

/// Written to `report.json` in the stage directory. Holds nothing that
/// varies between identical runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub key: String,
    pub counts: BTreeMap<String, u64>,
    pub rejects: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub report: StageReport,
    pub dir: PathBuf,
    pub wall: Duration,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = std::io::Read::read(&mut f, &mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: k + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A prepared edition passage with the language of its work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRecord {
    pub language: String,
    #[serde(flatten)]
    pub prepared: PreparedText,
}

/// One line of `normalized.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub id: String,
    pub language: String,
    pub source: String,
    #[serde(flatten)]
    pub result: NormalizerResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

struct Output {
    counts: BTreeMap<String, u64>,
    rejects: BTreeMap<String, u64>,
}

impl Output {
    fn new() -> Self {
        Self {
            counts: BTreeMap::new(),
            rejects: BTreeMap::new(),
        }
    }

    fn count(&mut self, name: &str, n: usize) {
        *self.counts.entry(name.into()).or_default() += n as u64;
    }

    fn reject(&mut self, name: &str) {
        *self.rejects.entry(name.into()).or_default() += 1;
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        let c = &self.config;
        match stage {
            Stage::Prep => vec![],
            Stage::Index => vec![Stage::Prep],
            Stage::Candidates => vec![Stage::Prep, Stage::Index],
            Stage::Align | Stage::Pairs => vec![Stage::Prep, prev(stage)],
            Stage::Analyze => vec![Stage::Pairs],
            Stage::Normalize if c.normalize.input.is_some() => vec![],
            Stage::Normalize => vec![Stage::Pairs],
            Stage::Eval if c.eval.input.is_some() => vec![],
            Stage::Eval => {
                if c.normalize.input.is_some() {
                    vec![Stage::Normalize]
                } else {
                    vec![Stage::Pairs, Stage::Normalize]
                }
            }
        }
    }

    /// Hash key of a stage: its name, its parameters and everything it
    /// depends on.
    pub fn key(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update([0]);
        for up in self.upstream(stage) {
            h.update(self.key(up)?.as_bytes());
            h.update([0]);
        }
        let params = match stage {
            Stage::Prep => {
                h.update(file_digest(&c.pages)?.as_bytes());
                h.update(file_digest(&c.editions)?.as_bytes());
                serde_json::json!([c.zones, c.passage_chars, c.default_language])
            }
            Stage::Index => serde_json::json!([c.n, c.doc_freq_cap]),
            Stage::Candidates => serde_json::json!([c.min_shared, c.max_candidates]),
            Stage::Align => serde_json::to_value(c.align)?,
            Stage::Pairs => serde_json::json!([c.filter, c.chunk, c.upsample, c.seed]),
            Stage::Analyze => {
                if let Some(m) = &c.markers {
                    h.update(file_digest(m)?.as_bytes());
                }
                serde_json::to_value(&c.analyze)?
            }
            Stage::Normalize => {
                for p in [&c.normalize.rules, &c.normalize.input].into_iter().flatten() {
                    h.update(file_digest(p)?.as_bytes());
                }
                serde_json::json!([c.normalize.endpoint, c.normalize.validation])
            }
            Stage::Eval => {
                if let Some(p) = &c.eval.input {
                    h.update(file_digest(p)?.as_bytes());
                }
                serde_json::to_value(&c.eval.options)?
            }
        };
        h.update(serde_json::to_string(&params)?.as_bytes());
        Ok(hex(&h.finalize())[..12].to_string())
    }

    pub fn stage_dir(&self, stage: Stage) -> Result<PathBuf> {
        Ok(self.config.workdir.join(format!("{}-{}", stage.name(), self.key(stage)?)))
    }

    fn require(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage)?;
        if !dir.join(REPORT_FILE).exists() {
            return Err(Error::MissingInput(dir));
        }
        Ok(dir)
    }

    /// Runs one stage. With `with_upstream`, missing upstream outputs are
    /// produced first; otherwise they must already exist.
    pub fn run(&self, stage: Stage, with_upstream: bool) -> Result<StageOutcome> {
        if with_upstream {
            for up in self.upstream(stage) {
                if self.require(up).is_err() {
                    self.run(up, true)?;
                }
            }
        }
        let started = Instant::now();
        let key = self.key(stage)?;
        let dir = self.stage_dir(stage)?;
        std::fs::create_dir_all(&self.config.workdir)?;
        let tmp = self.config.workdir.join(format!(".tmp-{}-{key}", stage.name()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;
        let out = match stage {
            Stage::Prep => self.prep(&tmp),
            Stage::Index => self.index(&tmp),
            Stage::Candidates => self.candidates(&tmp),
            Stage::Align => self.align(&tmp),
            Stage::Pairs => self.pairs(&tmp),
            Stage::Analyze => self.analyze(&tmp),
            Stage::Normalize => self.normalize(&tmp),
            Stage::Eval => self.eval(&tmp),
        };
        let out = match out {
            Ok(o) => o,
            Err(e) => {
                let _ = std::fs::remove_dir_all(&tmp);
                return Err(e);
            }
        };
        let report = StageReport {
            stage: stage.name().into(),
            key,
            counts: out.counts,
            rejects: out.rejects,
        };
        write_json(&tmp.join(REPORT_FILE), &report)?;
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::rename(&tmp, &dir)?;
        log::info!("{} done in {:?}: {:?}", stage.name(), started.elapsed(), report.counts);
        Ok(StageOutcome {
            report,
            dir,
            wall: started.elapsed(),
        })
    }

    /// Runs every stage up to and including `last`.
    pub fn run_through(&self, last: Stage) -> Result<Vec<StageOutcome>> {
        Stage::ALL
            .into_iter()
            .take_while(|&s| s <= last)
            .filter(|&s| s == last || self.feeds(s, last))
            .map(|s| self.run(s, false))
            .collect()
    }

    fn feeds(&self, s: Stage, target: Stage) -> bool {
        self.upstream(target).into_iter().any(|u| u == s || self.feeds(s, u))
    }

    fn prep(&self, dir: &Path) -> Result<Output> {
        let c = &self.config;
        let pages: Vec<SourcePage> = read_jsonl(&c.pages)?;
        let works: Vec<EditionWork> = read_jsonl(&c.editions)?;
        let zones = ZoneFilter::new(c.zones.iter().cloned());
        let mut out = Output::new();
        let prepared: Vec<Result<PreparedText>> = pages.par_iter().map(|p| prepare_page(p, &zones)).collect();
        let mut kept = Vec::with_capacity(prepared.len());
        for r in prepared {
            match r {
                Ok(p) => kept.push(p),
                Err(Error::EmptyPage { .. }) => out.reject("empty_page"),
                Err(e) => return Err(e),
            }
        }
        let mut passages = Vec::new();
        for w in &works {
            let language = w.language().unwrap_or(&c.default_language).to_string();
            for p in w.passages(c.passage_chars) {
                passages.push(PassageRecord {
                    language: language.clone(),
                    prepared: prepare_passage(&p)?,
                });
            }
        }
        write_jsonl(&dir.join("pages.jsonl"), &kept)?;
        write_jsonl(&dir.join("passages.jsonl"), &passages)?;
        out.count("pages_read", pages.len());
        out.count("pages", kept.len());
        out.count("editions", works.len());
        out.count("passages", passages.len());
        Ok(out)
    }

    fn load_pages(&self) -> Result<HashMap<(String, String), PreparedText>> {
        let pages: Vec<PreparedText> = read_jsonl(&self.require(Stage::Prep)?.join("pages.jsonl"))?;
        Ok(pages
            .into_iter()
            .filter_map(|p| {
                let r = p.page_ref()?.clone();
                Some(((r.doc_id, r.page_id), p))
            })
            .collect())
    }

    fn load_passages(&self) -> Result<HashMap<String, PassageRecord>> {
        let passages: Vec<PassageRecord> = read_jsonl(&self.require(Stage::Prep)?.join("passages.jsonl"))?;
        Ok(passages
            .into_iter()
            .filter_map(|p| Some((p.prepared.passage_ref()?.passage_id.clone(), p)))
            .collect())
    }

    fn index(&self, dir: &Path) -> Result<Output> {
        let passages: Vec<PassageRecord> = read_jsonl(&self.require(Stage::Prep)?.join("passages.jsonl"))?;
        let index = build_index(passages.iter().map(|p| &p.prepared), self.config.n, self.config.doc_freq_cap);
        index.write_to(BufWriter::new(File::create(dir.join("index.bin"))?))?;
        let mut out = Output::new();
        out.count("passages", passages.len());
        out.count("grams", index.posting_count());
        Ok(out)
    }

    fn candidates(&self, dir: &Path) -> Result<Output> {
        let index_path = self.require(Stage::Index)?.join("index.bin");
        let index = GramIndex::read_from(BufReader::new(
            File::open(&index_path).map_err(|_| Error::MissingInput(index_path.clone()))?,
        ))?;
        let pages: Vec<PreparedText> = read_jsonl(&self.require(Stage::Prep)?.join("pages.jsonl"))?;
        let per_page: Vec<Vec<CandidatePair>> = pages
            .par_iter()
            .map(|p| {
                let mut c = index.candidates(p, self.config.min_shared);
                if self.config.max_candidates > 0 {
                    c.truncate(self.config.max_candidates);
                }
                c
            })
            .collect();
        let mut out = Output::new();
        out.count("pages", pages.len());
        out.count("pages_without_candidates", per_page.iter().filter(|c| c.is_empty()).count());
        let all: Vec<CandidatePair> = per_page.into_iter().flatten().collect();
        out.count("candidates", all.len());
        write_jsonl(&dir.join("candidates.jsonl"), &all)?;
        Ok(out)
    }

    fn align(&self, dir: &Path) -> Result<Output> {
        let cands: Vec<CandidatePair> = read_jsonl(&self.require(Stage::Candidates)?.join("candidates.jsonl"))?;
        let pages = self.load_pages()?;
        let passages = self.load_passages()?;
        let results: Vec<Result<Option<AlignmentRecord<f64>>>> = cands
            .par_iter()
            .map(|c| {
                let page = pages
                    .get(&(c.page.doc_id.clone(), c.page.page_id.clone()))
                    .ok_or_else(|| Error::Config(format!("candidate refers to unknown page {}/{}", c.page.doc_id, c.page.page_id)))?;
                let passage = passages
                    .get(&c.passage.passage_id)
                    .ok_or_else(|| Error::Config(format!("candidate refers to unknown passage {}", c.passage.passage_id)))?;
                Ok(align(page, &passage.prepared, &self.config.align).map(|mut a| {
                    for s in &mut a.segments {
                        s.work = Some(c.passage.work_id.clone());
                    }
                    AlignmentRecord {
                        page: c.page.clone(),
                        passage: c.passage.clone(),
                        alignment: a,
                    }
                }))
            })
            .collect();
        let mut out = Output::new();
        let mut records = Vec::new();
        for r in results {
            match r? {
                Some(a) => records.push(a),
                None => out.reject("below_min_align_chars"),
            }
        }
        out.count("candidates", cands.len());
        out.count("alignments", records.len());
        write_jsonl(&dir.join("alignments.jsonl"), &records)?;
        Ok(out)
    }

    fn pairs(&self, dir: &Path) -> Result<Output> {
        let c = &self.config;
        let records: Vec<AlignmentRecord<f64>> = read_jsonl(&self.require(Stage::Align)?.join("alignments.jsonl"))?;
        let pages = self.load_pages()?;
        let passages = self.load_passages()?;
        enum Verdict {
            Pairs(crate::pairbuilder::Chunked),
            Reject(&'static str),
        }
        let verdicts: Vec<Result<Verdict>> = records
            .par_iter()
            .map(|r| {
                let page = pages
                    .get(&(r.page.doc_id.clone(), r.page.page_id.clone()))
                    .ok_or_else(|| Error::Config(format!("alignment refers to unknown page {}/{}", r.page.doc_id, r.page.page_id)))?;
                let passage = passages
                    .get(&r.passage.passage_id)
                    .ok_or_else(|| Error::Config(format!("alignment refers to unknown passage {}", r.passage.passage_id)))?;
                match filter_alignment(&r.alignment, page, &r.passage.work_id, &c.filter) {
                    FilterDecision::Reject(reason) => Ok(Verdict::Reject(reason.code())),
                    FilterDecision::Accept => {
                        match chunk(&r.alignment, page, &passage.prepared, &passage.language, &c.chunk) {
                            Ok(ch) => Ok(Verdict::Pairs(ch)),
                            Err(Error::Unchunkable { .. }) => Ok(Verdict::Reject("unchunkable")),
                            Err(e) => Err(e),
                        }
                    }
                }
            })
            .collect();
        let mut out = Output::new();
        let mut pairs: Vec<AlignedPair> = Vec::new();
        for v in verdicts {
            match v? {
                Verdict::Reject(code) => out.reject(code),
                Verdict::Pairs(ch) => {
                    out.count("accepted", 1);
                    out.count("dropped_spans", ch.dropped.len());
                    pairs.extend(ch.pairs);
                }
            }
        }
        out.count("alignments", records.len());
        out.count("pairs", pairs.len());
        let manifest = build_manifest(&pairs, &c.upsample, c.seed)?;
        out.count("manifest_entries", manifest.ids.len());
        write_jsonl(&dir.join("pairs.jsonl"), &pairs)?;
        let mut w = BufWriter::new(File::create(dir.join("manifest.txt"))?);
        manifest.write_to(&mut w)?;
        w.flush()?;
        Ok(out)
    }

    fn markers(&self) -> Result<MarkerTable> {
        match &self.config.markers {
            Some(p) => MarkerTable::load(p),
            None => Ok(MarkerTable::default()),
        }
    }

    fn analyze(&self, dir: &Path) -> Result<Output> {
        let pairs: Vec<AlignedPair> = read_jsonl(&self.require(Stage::Pairs)?.join("pairs.jsonl"))?;
        let markers = self.markers()?;
        let opts = TokenOptions {
            case_fold: self.config.analyze.case_fold,
        };
        let annotations: Vec<PairAnnotation> = pairs
            .par_iter()
            .map(|p| PairAnnotation {
                id: p.id.clone(),
                language: p.language.clone(),
                records: align_tokens(p, &markers, &opts),
            })
            .collect();
        let mut acc = StatsAccumulator::default();
        for a in &annotations {
            acc.add(PairTokenStats::from_records(&a.id, &a.language, &a.records));
        }
        let stats = acc.summarize(self.config.analyze.bins);
        write_jsonl(&dir.join("annotations.jsonl"), &annotations)?;
        write_json(&dir.join("stats.json"), &stats)?;
        let mut out = Output::new();
        out.count("pairs", pairs.len());
        out.count("source_tokens", stats.overall.source_tokens as usize);
        out.count("substitutions", stats.overall.substitutions as usize);
        out.count("abbreviations", stats.overall.abbreviations as usize);
        Ok(out)
    }

    fn normalize(&self, dir: &Path) -> Result<Output> {
        let c = &self.config.normalize;
        let requests: Vec<ExternalRequest> = match &c.input {
            Some(p) => read_jsonl(p)?,
            None => read_jsonl::<AlignedPair>(&self.require(Stage::Pairs)?.join("pairs.jsonl"))?
                .into_iter()
                .map(|p| ExternalRequest {
                    id: p.id,
                    text: p.src,
                    language: p.language,
                })
                .collect(),
        };
        let results: Vec<NormalizerResult> = match &c.endpoint {
            Some(ep) => normalize_external(&requests, ep)?,
            None => {
                let rules = match &c.rules {
                    Some(p) => RuleSet::load(p)?,
                    None => crate::normalize::default_rules(),
                };
                let norm = RuleNormalizer::new(rules);
                requests.par_iter().map(|r| norm.normalize(&r.text, &r.language)).collect()
            }
        };
        let mut out = Output::new();
        let records: Vec<NormalizedRecord> = requests
            .into_iter()
            .zip(results)
            .map(|(r, result)| {
                let violations = validate_against_task(&result.text, &r.text, &c.validation);
                NormalizedRecord {
                    id: r.id,
                    language: r.language,
                    source: r.text,
                    result,
                    violations,
                }
            })
            .collect();
        for r in &records {
            for v in &r.violations {
                out.reject(v.code());
            }
            out.count("warnings", r.result.warnings.len());
            if crate::textprep::decompose(&r.source) != r.result.text {
                out.count("changed", 1);
            }
        }
        out.count("inputs", records.len());
        write_jsonl(&dir.join("normalized.jsonl"), &records)?;
        Ok(out)
    }

    fn eval(&self, dir: &Path) -> Result<Output> {
        let c = &self.config;
        let records: Vec<EvalRecord> = match &c.eval.input {
            Some(p) => read_jsonl(p)?,
            None => {
                let normalized: Vec<NormalizedRecord> =
                    read_jsonl(&self.require(Stage::Normalize)?.join("normalized.jsonl"))?;
                if c.normalize.input.is_some() {
                    return Err(Error::Config(
                        "eval needs eval.input when normalize reads its own input (there is no gold side)".into(),
                    ));
                }
                let pairs: HashMap<String, AlignedPair> =
                    read_jsonl::<AlignedPair>(&self.require(Stage::Pairs)?.join("pairs.jsonl"))?
                        .into_iter()
                        .map(|p| (p.id.clone(), p))
                        .collect();
                normalized
                    .into_iter()
                    .filter_map(|n| {
                        let p = pairs.get(&n.id)?;
                        Some(EvalRecord {
                            id: n.id,
                            gold: p.tgt.clone(),
                            pred: n.result.text,
                            language: Some(n.language),
                            gold_labels: None,
                            pred_labels: None,
                        })
                    })
                    .collect()
            }
        };
        let mut out = Output::new();
        out.count("records", records.len());
        let report: EvalReport<f64> = evaluate(&records, &c.eval.options)?;
        write_json(&dir.join("scores.json"), &report)?;
        std::fs::write(dir.join("scores.txt"), report.render())?;
        Ok(out)
    }
}

fn prev(stage: Stage) -> Stage {
    let k = Stage::ALL.iter().position(|&s| s == stage).expect("listed");
    Stage::ALL[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{planted_corpus, PlantedSpec};

    fn write_corpus(dir: &Path, pages: usize, editions: usize) -> PipelineConfig {
        let corpus = planted_corpus(&PlantedSpec {
            pages,
            editions,
            seed: 3,
            ..PlantedSpec::default()
        });
        write_jsonl(&dir.join("pages.jsonl"), &corpus.pages).unwrap();
        write_jsonl(&dir.join("editions.jsonl"), &corpus.editions).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.resolve_paths(dir);
        cfg
    }

    #[test]
    fn two_line_page_gives_one_prepared_record() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("pages.jsonl"),
            "{\"doc_id\":\"d\",\"page_id\":\"p\",\"lines\":[{\"text\":\"ab\"},{\"text\":\"cd\"}]}\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("editions.jsonl"), "").unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.resolve_paths(dir.path());
        let out = Pipeline::new(cfg).unwrap().run(Stage::Prep, false).unwrap();
        let pages: Vec<PreparedText> = read_jsonl(&out.dir.join("pages.jsonl")).unwrap();
        assert_eq!(pages.len(), 1);
        assert_eq!(pages[0].text, "ab\ncd");
    }

    #[test]
    fn align_on_no_candidates_succeeds_empty() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("pages.jsonl"),
            "{\"doc_id\":\"d\",\"page_id\":\"p\",\"lines\":[{\"text\":\"nothing shared here\"}]}\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("editions.jsonl"), "{\"work_id\":\"w\",\"text\":\"entirely different words\"}\n").unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.resolve_paths(dir.path());
        let p = Pipeline::new(cfg).unwrap();
        let out = p.run(Stage::Align, true).unwrap();
        assert_eq!(out.report.counts["alignments"], 0);
        assert_eq!(out.report.counts["candidates"], 0);
    }

    #[test]
    fn missing_upstream_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_corpus(dir.path(), 2, 2);
        let p = Pipeline::new(cfg).unwrap();
        assert!(matches!(p.run(Stage::Index, false), Err(Error::MissingInput(_))));
    }

    #[test]
    fn missing_input_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.resolve_paths(dir.path());
        let p = Pipeline::new(cfg).unwrap();
        assert!(matches!(p.run(Stage::Prep, false), Err(Error::MissingInput(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"filter": {"min_match_rate": 1.5}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"beam": 3}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"align": {"beam_width": 0}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"align": {"beam_width": 50}, "seed": 4}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.align.beam_width, 50);
        assert_eq!(cfg.align.min_align_chars, 50);
        assert_eq!(cfg.pages, dir.path().join("pages.jsonl"));
    }

    #[test]
    fn full_run_is_byte_identical_and_keyed_by_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_corpus(dir.path(), 12, 6);
        let p = Pipeline::new(cfg.clone()).unwrap();
        let mut first = p.run_through(Stage::Eval).unwrap();
        assert_eq!(first.len(), 7);
        first.push(p.run(Stage::Analyze, false).unwrap());
        let snapshot = |d: &Path| -> BTreeMap<String, Vec<u8>> {
            std::fs::read_dir(d)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
                })
                .collect()
        };
        let before: Vec<_> = first.iter().map(|o| snapshot(&o.dir)).collect();
        let mut second = p.run_through(Stage::Eval).unwrap();
        second.push(p.run(Stage::Analyze, false).unwrap());
        for (o, snap) in second.iter().zip(&before) {
            assert_eq!(&snapshot(&o.dir), snap, "{}", o.report.stage);
        }
        let pairs = &first[4].report;
        assert!(pairs.counts["pairs"] > 0, "{pairs:?}");

        let mut tweaked = cfg;
        tweaked.filter.min_match_rate = 0.7;
        let q = Pipeline::new(tweaked).unwrap();
        assert_eq!(q.stage_dir(Stage::Align).unwrap(), p.stage_dir(Stage::Align).unwrap());
        assert_ne!(q.stage_dir(Stage::Pairs).unwrap(), p.stage_dir(Stage::Pairs).unwrap());
        assert_ne!(q.stage_dir(Stage::Eval).unwrap(), p.stage_dir(Stage::Eval).unwrap());
    }
}
