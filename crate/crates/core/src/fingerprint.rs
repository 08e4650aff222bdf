//! Hashed character n-gram index over edition passages.
//!
//! Grams are drawn from the text with whitespace and punctuation removed
//! (combining marks stay in). Each gram is hashed with 64-bit FNV-1a over the
//! little-endian UTF-32 bytes of its code points. Grams that occur in
//! `doc_freq_cap` or more distinct passages are dropped from the index.
//!
//! # On-disk layout
//!
//! All integers little-endian.
//!
//! ```text
//! magic          8 bytes  b"PENGRAMS"
//! version        u32      = 1
//! n              u32
//! doc_freq_cap   u32
//! passage_count  u32
//! posting_count  u64      number of distinct gram hashes
//! passages       passage_count × { work_id: str, passage_id: str }
//! postings       posting_count × { hash: u64, len: u32, len × { passage: u32, position: u32 } }
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8 bytes. Postings are sorted
//! by hash, entries by (passage, position).

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{is_punctuation, PageRef, PassageRef, PreparedText};

pub const DEFAULT_GRAM_LEN: usize = 10;
pub const DEFAULT_DOC_FREQ_CAP: usize = 100;
pub const DEFAULT_MIN_SHARED: usize = 5;

const MAGIC: &[u8; 8] = b"PENGRAMS";
const FORMAT_VERSION: u32 = 1;
const SHARD_BITS: u32 = 4;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn gram_hash(gram: &[char]) -> u64 {
    let mut h = FNV_OFFSET;
    for c in gram {
        for b in (*c as u32).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

fn is_filterable(c: char) -> bool {
    !c.is_whitespace() && !is_punctuation(c)
}

/// `(hash, start position)` for every window of `n` consecutive filterable
/// characters. Positions are character indices into the unstripped text.
pub fn extract_grams(text: &str, n: usize) -> Vec<(u64, usize)> {
    assert!(n >= 2, "gram length must be at least 2");
    let (kept, positions): (Vec<char>, Vec<usize>) = text
        .chars()
        .enumerate()
        .filter(|&(_, c)| is_filterable(c))
        .map(|(i, c)| (c, i))
        .unzip();
    if kept.len() < n {
        return Vec::new();
    }
    kept.windows(n)
        .zip(positions)
        .map(|(w, pos)| (gram_hash(w), pos))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Posting {
    pub passage: u32,
    pub position: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GramIndex {
    pub n: usize,
    pub doc_freq_cap: usize,
    pub passages: Vec<PassageRef>,
    pub postings: HashMap<u64, Vec<Posting>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub page: PageRef,
    pub passage: PassageRef,
    pub shared_grams: usize,
}

/// Builds the index: grams are extracted in parallel, partitioned into hash
/// shards, and each shard is merged and frequency-capped independently.
pub fn build_index<'a, I>(passages: I, n: usize, doc_freq_cap: usize) -> GramIndex
where
    I: IntoIterator<Item = &'a PreparedText>,
{
    let passages: Vec<&PreparedText> = passages.into_iter().collect();
    let refs: Vec<PassageRef> = passages
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.passage_ref().cloned().unwrap_or_else(|| PassageRef {
                work_id: String::new(),
                passage_id: format!("#{i}"),
            })
        })
        .collect();

    let grams: Vec<Vec<(u64, usize)>> = passages.par_iter().map(|p| extract_grams(&p.text, n)).collect();

    let shard_count = 1usize << SHARD_BITS;
    let shard_of = |h: u64| (h >> (64 - SHARD_BITS)) as usize;

    let shards: Vec<HashMap<u64, Vec<Posting>>> = (0..shard_count)
        .into_par_iter()
        .map(|shard| {
            let mut local: HashMap<u64, Vec<Posting>> = HashMap::new();
            for (pidx, list) in grams.iter().enumerate() {
                for &(h, pos) in list {
                    if shard_of(h) == shard {
                        local.entry(h).or_default().push(Posting {
                            passage: pidx as u32,
                            position: pos as u32,
                        });
                    }
                }
            }
            local.retain(|_, list| {
                list.sort_unstable();
                let mut df = 0;
                let mut last = None;
                for p in list.iter() {
                    if last != Some(p.passage) {
                        df += 1;
                        last = Some(p.passage);
                    }
                }
                df < doc_freq_cap
            });
            local
        })
        .collect();

    let mut postings = HashMap::with_capacity(shards.iter().map(HashMap::len).sum());
    for shard in shards {
        postings.extend(shard);
    }
    GramIndex {
        n,
        doc_freq_cap,
        passages: refs,
        postings,
    }
}

impl GramIndex {
    pub fn posting_count(&self) -> usize {
        self.postings.len()
    }

    /// Passages sharing at least `min_shared` distinct gram hashes with the
    /// page, best first (ties by passage order).
    pub fn candidates(&self, page: &PreparedText, min_shared: usize) -> Vec<CandidatePair> {
        let page_ref = page.page_ref().cloned().unwrap_or_else(|| PageRef {
            doc_id: String::new(),
            page_id: String::new(),
        });
        let hashes: HashSet<u64> = extract_grams(&page.text, self.n).into_iter().map(|(h, _)| h).collect();
        let mut shared: HashMap<u32, usize> = HashMap::new();
        for h in hashes {
            if let Some(list) = self.postings.get(&h) {
                let mut last = None;
                for p in list {
                    if last != Some(p.passage) {
                        *shared.entry(p.passage).or_default() += 1;
                        last = Some(p.passage);
                    }
                }
            }
        }
        let mut hits: Vec<(u32, usize)> = shared.into_iter().filter(|&(_, c)| c >= min_shared).collect();
        hits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.into_iter()
            .map(|(pidx, shared_grams)| CandidatePair {
                page: page_ref.clone(),
                passage: self.passages[pidx as usize].clone(),
                shared_grams,
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.doc_freq_cap as u32).to_le_bytes())?;
        w.write_all(&(self.passages.len() as u32).to_le_bytes())?;
        w.write_all(&(self.postings.len() as u64).to_le_bytes())?;
        for p in &self.passages {
            write_str(&mut w, &p.work_id)?;
            write_str(&mut w, &p.passage_id)?;
        }
        let mut keys: Vec<u64> = self.postings.keys().copied().collect();
        keys.sort_unstable();
        for h in keys {
            let list = &self.postings[&h];
            w.write_all(&h.to_le_bytes())?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for p in list {
                w.write_all(&p.passage.to_le_bytes())?;
                w.write_all(&p.position.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let doc_freq_cap = read_u32(&mut r)? as usize;
        let passage_count = read_u32(&mut r)? as usize;
        let posting_count = read_u64(&mut r)? as usize;
        let mut passages = Vec::with_capacity(passage_count);
        for _ in 0..passage_count {
            let work_id = read_str(&mut r)?;
            let passage_id = read_str(&mut r)?;
            passages.push(PassageRef { work_id, passage_id });
        }
        let mut postings = HashMap::with_capacity(posting_count);
        for _ in 0..posting_count {
            let h = read_u64(&mut r)?;
            let len = read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let passage = read_u32(&mut r)?;
                if passage as usize >= passage_count {
                    return Err(Error::IndexFormat(format!("posting refers to passage {passage}")));
                }
                let position = read_u32(&mut r)?;
                list.push(Posting { passage, position });
            }
            postings.insert(h, list);
        }
        Ok(Self {
            n,
            doc_freq_cap,
            passages,
            postings,
        })
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::IndexFormat(e.to_string()))
}
