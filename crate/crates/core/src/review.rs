//! Gold-set review store: sampled pairs plus an append-only decision log.
//!
//! A store is a directory holding `pairs.jsonl` (one [`AlignedPair`] per
//! line) and `decisions.jsonl` (one [`Decision`] per line). The status of a
//! pair is the status of its last decision, or pending when it has none, so
//! the whole state can be rebuilt by replaying the log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairbuilder::AlignedPair;

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const DECISIONS_FILE: &str = "decisions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
    Edited,
}

impl ReviewStatus {
    pub const ALL: [ReviewStatus; 4] = [Self::Pending, Self::Accepted, Self::Rejected, Self::Edited];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
            Self::Edited => "edited",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

/// What an annotator submits for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub annotator: String,
    /// Optimistic concurrency guard: refuse when the pair has moved on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_status: Option<ReviewStatus>,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    /// Position in the log, starting at 0.
    pub seq: u64,
    pub pair_id: String,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub annotator: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

/// Derived state of one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairState {
    pub status: ReviewStatus,
    pub corrected_source: Option<String>,
    pub corrected_target: Option<String>,
    pub notes: Option<String>,
    pub annotator: Option<String>,
    pub decided_at: Option<String>,
    pub decisions: usize,
}

impl Default for PairState {
    fn default() -> Self {
        Self {
            status: ReviewStatus::Pending,
            corrected_source: None,
            corrected_target: None,
            notes: None,
            annotator: None,
            decided_at: None,
            decisions: 0,
        }
    }
}

impl PairState {
    fn apply(&mut self, d: &Decision) {
        self.status = d.status;
        self.corrected_source = d.corrected_source.clone();
        self.corrected_target = d.corrected_target.clone();
        self.notes = d.notes.clone();
        self.annotator = Some(d.annotator.clone());
        self.decided_at = Some(d.timestamp.clone());
        self.decisions += 1;
    }
}

/// A pair as served to reviewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub id: String,
    pub src: String,
    pub tgt: String,
    pub language: String,
    pub doc_id: String,
    pub work_id: String,
    pub match_rate: f64,
    /// Run-length encoded character alignment of `src` against `tgt`.
    pub ops: String,
    pub status: ReviewStatus,
    pub corrected_source: Option<String>,
    pub corrected_target: Option<String>,
    pub notes: Option<String>,
    pub annotator: Option<String>,
    pub decided_at: Option<String>,
    pub decisions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub edited: usize,
    /// Accepted plus edited.
    pub gold_pairs: usize,
    /// Whitespace tokens on the source side of the gold pairs, corrected
    /// text when present.
    pub gold_tokens: usize,
    pub decisions: usize,
    pub per_work: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Replays a decision log against a set of pair ids.
pub fn replay<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    log: &[Decision],
) -> std::result::Result<HashMap<String, PairState>, String> {
    let mut states: HashMap<String, PairState> = ids.into_iter().map(|id| (id.to_string(), PairState::default())).collect();
    for (k, d) in log.iter().enumerate() {
        if d.seq != k as u64 {
            return Err(format!("sequence number {} at position {k}", d.seq));
        }
        let st = states
            .get_mut(&d.pair_id)
            .ok_or_else(|| format!("decision for unknown pair {}", d.pair_id))?;
        st.apply(d);
    }
    Ok(states)
}

pub struct ReviewStore {
    dir: PathBuf,
    pairs: Vec<AlignedPair>,
    index: HashMap<String, usize>,
    states: HashMap<String, PairState>,
    log: Vec<Decision>,
    writer: File,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::StoreCorruption {
            path: path.to_path_buf(),
            line: k + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ReviewStore {
    /// Opens (creating when absent) the store in `dir` and replays its log.
    /// Refuses a log that does not replay cleanly.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let pairs_path = dir.join(PAIRS_FILE);
        let log_path = dir.join(DECISIONS_FILE);
        let pairs: Vec<AlignedPair> = read_jsonl(&pairs_path)?;
        let mut index = HashMap::new();
        for (k, p) in pairs.iter().enumerate() {
            if index.insert(p.id.clone(), k).is_some() {
                return Err(Error::StoreCorruption {
                    path: pairs_path,
                    line: k + 1,
                    reason: format!("duplicate pair id {}", p.id),
                });
            }
        }
        let log: Vec<Decision> = read_jsonl(&log_path)?;
        let states = replay(pairs.iter().map(|p| p.id.as_str()), &log).map_err(|reason| Error::StoreCorruption {
            path: log_path.clone(),
            line: 0,
            reason,
        })?;
        let writer = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            pairs,
            index,
            states,
            log,
            writer,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Adds pairs as pending; ids already in the store are skipped. Returns
    /// the number added.
    pub fn add_pairs(&mut self, pairs: &[AlignedPair]) -> Result<usize> {
        let mut file = OpenOptions::new().create(true).append(true).open(self.dir.join(PAIRS_FILE))?;
        let mut added = 0;
        for p in pairs {
            if self.index.contains_key(&p.id) {
                continue;
            }
            writeln!(file, "{}", serde_json::to_string(p)?)?;
            self.index.insert(p.id.clone(), self.pairs.len());
            self.states.insert(p.id.clone(), PairState::default());
            self.pairs.push(p.clone());
            added += 1;
        }
        file.sync_all()?;
        Ok(added)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn log(&self) -> &[Decision] {
        &self.log
    }

    pub fn state(&self, id: &str) -> Option<&PairState> {
        self.states.get(id)
    }

    pub fn states(&self) -> &HashMap<String, PairState> {
        &self.states
    }

    pub fn get(&self, id: &str) -> Result<PairView> {
        let k = *self.index.get(id).ok_or_else(|| Error::UnknownPair(id.to_string()))?;
        Ok(self.view(k))
    }

    fn view(&self, k: usize) -> PairView {
        let p = &self.pairs[k];
        let st = &self.states[&p.id];
        PairView {
            id: p.id.clone(),
            src: p.src.clone(),
            tgt: p.tgt.clone(),
            language: p.language.clone(),
            doc_id: p.lineage.doc_id.clone(),
            work_id: p.lineage.work_id.clone(),
            match_rate: p.match_rate,
            ops: crate::aligner::ops_to_rle(&p.ops),
            status: st.status,
            corrected_source: st.corrected_source.clone(),
            corrected_target: st.corrected_target.clone(),
            notes: st.notes.clone(),
            annotator: st.annotator.clone(),
            decided_at: st.decided_at.clone(),
            decisions: st.decisions,
        }
    }

    /// Pairs in store order, optionally restricted to one status.
    pub fn list(&self, status: Option<ReviewStatus>) -> Vec<PairView> {
        (0..self.pairs.len())
            .filter(|&k| status.is_none_or(|s| self.states[&self.pairs[k].id].status == s))
            .map(|k| self.view(k))
            .collect()
    }

    /// Validates, appends and fsyncs one decision before updating state.
    pub fn decide(&mut self, id: &str, req: DecisionRequest) -> Result<Decision> {
        let current = self.states.get(id).ok_or_else(|| Error::UnknownPair(id.to_string()))?.status;
        if req.annotator.trim().is_empty() {
            return Err(Error::InvalidDecision("annotator is required".into()));
        }
        let has_correction = req.corrected_source.is_some() || req.corrected_target.is_some();
        match req.status {
            ReviewStatus::Edited if !has_correction => {
                return Err(Error::InvalidDecision("an edit needs a corrected source or target".into()))
            }
            ReviewStatus::Pending | ReviewStatus::Accepted | ReviewStatus::Rejected if has_correction => {
                return Err(Error::InvalidDecision(format!(
                    "corrected texts are only allowed with status edited, not {}",
                    req.status.as_str()
                )))
            }
            _ => {}
        }
        if let Some(expected) = req.expected_status {
            if expected != current {
                return Err(Error::StaleStatus {
                    id: id.to_string(),
                    expected: expected.as_str().into(),
                    found: current.as_str().into(),
                });
            }
        }
        let d = Decision {
            seq: self.log.len() as u64,
            pair_id: id.to_string(),
            status: req.status,
            corrected_source: req.corrected_source,
            corrected_target: req.corrected_target,
            notes: req.notes,
            annotator: req.annotator,
            timestamp: now_rfc3339(),
        };
        let mut line = serde_json::to_string(&d)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.sync_data()?;
        self.states.get_mut(id).expect("checked above").apply(&d);
        self.log.push(d.clone());
        Ok(d)
    }

    pub fn stats(&self) -> ReviewStats {
        let mut s = ReviewStats {
            total: self.pairs.len(),
            decisions: self.log.len(),
            ..ReviewStats::default()
        };
        for p in &self.pairs {
            let st = &self.states[&p.id];
            match st.status {
                ReviewStatus::Pending => s.pending += 1,
                ReviewStatus::Accepted => s.accepted += 1,
                ReviewStatus::Rejected => s.rejected += 1,
                ReviewStatus::Edited => s.edited += 1,
            }
            if matches!(st.status, ReviewStatus::Accepted | ReviewStatus::Edited) {
                s.gold_pairs += 1;
                s.gold_tokens += st.corrected_source.as_deref().unwrap_or(&p.src).split_whitespace().count();
            }
            *s.per_work
                .entry(p.lineage.work_id.clone())
                .or_default()
                .entry(st.status.as_str().to_string())
                .or_default() += 1;
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Gold sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    /// One stratum per edition work.
    Work,
    /// One stratum per source document.
    Document,
    /// One stratum per language.
    Language,
}

impl Stratum {
    fn key(self, p: &AlignedPair) -> &str {
        match self {
            Stratum::Work => &p.lineage.work_id,
            Stratum::Document => &p.lineage.doc_id,
            Stratum::Language => &p.language,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub stratum: Stratum,
    /// Upper bound on pairs taken from any one stratum.
    pub per_stratum_cap: Option<usize>,
    /// Upper bound on the sample size.
    pub total: Option<usize>,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            stratum: Stratum::Work,
            per_stratum_cap: None,
            total: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub size: usize,
    pub per_stratum: BTreeMap<String, usize>,
    pub largest_stratum: Option<String>,
    /// Share of the sample taken by the largest stratum.
    pub largest_share: f64,
}

/// Stratified sample: each stratum is shuffled with a seeded generator and
/// truncated to the cap, then strata are drawn round-robin (in key order)
/// until the total is reached.
pub fn sample_gold(pairs: &[AlignedPair], spec: &SampleSpec) -> (Vec<AlignedPair>, SampleReport) {
    let mut strata: BTreeMap<&str, Vec<&AlignedPair>> = BTreeMap::new();
    for p in pairs {
        strata.entry(spec.stratum.key(p)).or_default().push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut queues: Vec<(&str, std::vec::IntoIter<&AlignedPair>)> = strata
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.id.cmp(&b.id));
            v.shuffle(&mut rng);
            v.truncate(spec.per_stratum_cap.unwrap_or(usize::MAX));
            (k, v.into_iter())
        })
        .collect();
    let total = spec.total.unwrap_or(usize::MAX);
    let mut picked = Vec::new();
    let mut per_stratum: BTreeMap<String, usize> = BTreeMap::new();
    'outer: loop {
        let mut progressed = false;
        for (key, q) in queues.iter_mut() {
            if picked.len() >= total {
                break 'outer;
            }
            if let Some(p) = q.next() {
                picked.push(p.clone());
                *per_stratum.entry(key.to_string()).or_default() += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let largest = per_stratum.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
    let report = SampleReport {
        size: picked.len(),
        largest_stratum: largest.map(|(k, _)| k.clone()),
        largest_share: largest.map_or(0.0, |(_, &n)| n as f64 / picked.len() as f64),
        per_stratum,
    };
    (picked, report)
}
