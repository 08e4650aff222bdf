//! Character-level alignment of a transcribed page against an edition passage.
//!
//! The model is the Viterbi (min-cost) reading of a pair HMM with a
//! background state and free repositioning of the target cursor:
//!
//! * outside any segment every source character is emitted by the background
//!   state at cost `unaligned`;
//! * a segment opens with a `Match`. The first segment opens anywhere in the
//!   target for free; every later one pays `jump_open + jump_per_char * d`,
//!   where `d` is the distance between the previous segment's target end and
//!   the new start;
//! * inside a segment each `Match`, `Sub`, `Del` (source only) and `Ins`
//!   (target only) pays its own cost;
//! * unaligned target text before, between and after segments is free.
//!
//! The score of an alignment is therefore
//! `sum(op costs) + unaligned * uncovered_source + sum(jump costs)`.
//! Segments are strictly increasing in the source but may appear in any order
//! in the target, which is what lets a page whose regions were read out of
//! order align against a linear edition.
//!
//! Whitespace characters compare equal to each other, so the newline joining
//! two page lines matches the space in the edition.
//!
//! [`align`] decodes with a beam over source positions; [`align_exhaustive`]
//! fills the full table and is used as an oracle.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Cost;
use crate::textprep::{PageRef, PassageRef, PreparedText};

pub const DEFAULT_BEAM_WIDTH: usize = 200;
pub const DEFAULT_MIN_ALIGN_CHARS: usize = 50;
/// Largest `|source| * |target|` accepted by [`align_exhaustive`].
pub const EXHAUSTIVE_CELL_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    Match,
    Sub,
    Del,
    Ins,
}

impl Op {
    pub fn code(self) -> char {
        match self {
            Op::Match => 'M',
            Op::Sub => 'S',
            Op::Del => 'D',
            Op::Ins => 'I',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'M' => Some(Op::Match),
            'S' => Some(Op::Sub),
            'D' => Some(Op::Del),
            'I' => Some(Op::Ins),
            _ => None,
        }
    }

    pub fn consumes_source(self) -> bool {
        !matches!(self, Op::Ins)
    }

    pub fn consumes_target(self) -> bool {
        !matches!(self, Op::Del)
    }
}

/// Run-length encoding of an op sequence, e.g. `12M1S3M2I`.
pub fn ops_to_rle(ops: &[Op]) -> String {
    let mut out = String::new();
    let mut iter = ops.iter().peekable();
    while let Some(&op) = iter.next() {
        let mut run = 1;
        while iter.peek() == Some(&&op) {
            iter.next();
            run += 1;
        }
        out.push_str(&run.to_string());
        out.push(op.code());
    }
    out
}

pub fn rle_to_ops(rle: &str) -> Result<Vec<Op>> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in rle.chars() {
        if c.is_ascii_digit() {
            run.push(c);
            continue;
        }
        let op = Op::from_code(c).ok_or_else(|| Error::Config(format!("bad op code {c:?} in {rle:?}")))?;
        let count: usize = run
            .parse()
            .map_err(|_| Error::Config(format!("missing run length before {c:?} in {rle:?}")))?;
        out.extend(std::iter::repeat_n(op, count));
        run.clear();
    }
    if !run.is_empty() {
        return Err(Error::Config(format!("dangling run length in {rle:?}")));
    }
    Ok(out)
}

pub(crate) mod rle {
    use super::*;

    pub fn serialize<S: Serializer>(ops: &[Op], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ops_to_rle(ops))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Op>, D::Error> {
        let s = String::deserialize(d)?;
        rle_to_ops(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Log-domain costs. See the module docs for how they combine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "C: Cost + Deserialize<'de>"))]
pub struct CostModel<C> {
    #[serde(rename = "match")]
    pub match_cost: C,
    pub substitute: C,
    pub insert: C,
    pub delete: C,
    pub jump_open: C,
    pub jump_per_char: C,
    pub unaligned: C,
}

impl<C: Cost> Default for CostModel<C> {
    fn default() -> Self {
        let c = |v: i32| C::from_i32(v).expect("default cost fits the scalar type");
        Self {
            match_cost: c(0),
            substitute: c(2),
            insert: c(3),
            delete: c(3),
            jump_open: c(10),
            jump_per_char: c(0),
            unaligned: c(1),
        }
    }
}

impl<C: Cost> CostModel<C> {
    pub fn validate(&self) -> Result<()> {
        let zero = C::zero();
        if self.match_cost < zero || self.jump_open < zero || self.jump_per_char < zero {
            return Err(Error::Config("costs must be non-negative".into()));
        }
        if !(self.match_cost <= self.substitute && self.substitute <= self.insert && self.substitute <= self.delete) {
            return Err(Error::Config("costs must satisfy match <= substitute <= insert, delete".into()));
        }
        if !(self.unaligned > self.match_cost) {
            return Err(Error::Config("unaligned cost must exceed the match cost".into()));
        }
        Ok(())
    }

    fn op_cost(&self, op: Op) -> C {
        match op {
            Op::Match => self.match_cost,
            Op::Sub => self.substitute,
            Op::Del => self.delete,
            Op::Ins => self.insert,
        }
    }

    fn per_char(&self, distance: usize) -> C {
        if self.jump_per_char == C::zero() {
            return C::zero();
        }
        self.jump_per_char * C::from_usize(distance).expect("distance fits the cost type")
    }

    /// Score of an alignment of a source of `source_len` characters, computed
    /// directly from its structure.
    pub fn score(&self, segments: &[Segment], source_len: usize) -> C {
        let mut total = C::zero();
        let mut covered = 0;
        let mut prev_end: Option<usize> = None;
        for seg in segments {
            for &op in &seg.ops {
                total = total + self.op_cost(op);
            }
            covered += seg.src.len();
            if let Some(end) = prev_end {
                total = total + self.jump_open + self.per_char(seg.tgt.start.abs_diff(end));
            }
            prev_end = Some(seg.tgt.end);
        }
        let uncovered = C::from_usize(source_len - covered).expect("length fits the cost type");
        total + self.unaligned * uncovered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "C: Cost + Deserialize<'de>"))]
pub struct AlignParams<C> {
    pub beam_width: usize,
    pub min_align_chars: usize,
    pub costs: CostModel<C>,
}

impl<C: Cost> Default for AlignParams<C> {
    fn default() -> Self {
        Self {
            beam_width: DEFAULT_BEAM_WIDTH,
            min_align_chars: DEFAULT_MIN_ALIGN_CHARS,
            costs: CostModel::default(),
        }
    }
}

impl<C: Cost> AlignParams<C> {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.min_align_chars == 0 {
            return Err(Error::Config("min_align_chars must be at least 1".into()));
        }
        self.costs.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub src: Span,
    pub tgt: Span,
    #[serde(with = "rle")]
    pub ops: Vec<Op>,
    /// Work the target span belongs to when it differs from the passage the
    /// alignment was computed against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work: Option<String>,
}

impl Segment {
    pub fn count(&self, op: Op) -> usize {
        self.ops.iter().filter(|&&o| o == op).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharAlignment<C> {
    pub segments: Vec<Segment>,
    pub score: C,
    pub matched_chars: usize,
    pub match_rate: f64,
}

impl<C> CharAlignment<C> {
    fn from_segments(segments: Vec<Segment>, score: C) -> Self {
        let matched_chars = segments.iter().map(|s| s.count(Op::Match)).sum();
        let covered: usize = segments.iter().map(|s| s.src.len()).sum();
        let match_rate = if covered == 0 {
            0.0
        } else {
            matched_chars as f64 / covered as f64
        };
        Self {
            segments,
            score,
            matched_chars,
            match_rate,
        }
    }

    pub fn covered_source(&self) -> usize {
        self.segments.iter().map(|s| s.src.len()).sum()
    }
}

/// An alignment together with the texts it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord<C> {
    pub page: PageRef,
    pub passage: PassageRef,
    #[serde(flatten)]
    pub alignment: CharAlignment<C>,
}

fn same_char(a: char, b: char) -> bool {
    a == b || (a.is_whitespace() && b.is_whitespace())
}

fn char_class(c: char) -> char {
    if c.is_whitespace() {
        ' '
    } else {
        c
    }
}

#[derive(Debug, Clone, Copy)]
struct Step {
    op: Op,
    entry: bool,
    /// Source and target cursors after the op.
    i: usize,
    j: usize,
}

fn segments_from_steps(steps: &[Step]) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    for step in steps {
        if step.entry || segments.is_empty() {
            segments.push(Segment {
                src: Span::new(step.i - 1, step.i),
                tgt: Span::new(step.j - 1, step.j),
                ops: vec![step.op],
                work: None,
            });
            continue;
        }
        let seg = segments.last_mut().expect("non-empty");
        seg.src.end = step.i;
        seg.tgt.end = step.j;
        seg.ops.push(step.op);
    }
    segments
}

/// Aligns a prepared page against a prepared passage.
///
/// Returns `None` when fewer than `min_align_chars` source characters end up
/// inside segments.
pub fn align<C: Cost>(page: &PreparedText, passage: &PreparedText, params: &AlignParams<C>) -> Option<CharAlignment<C>> {
    align_chars(&page.chars(), &passage.chars(), params)
}

/// Full dynamic programme over the same model as [`align`], without pruning.
pub fn align_exhaustive<C: Cost>(
    page: &PreparedText,
    passage: &PreparedText,
    params: &AlignParams<C>,
) -> Result<CharAlignment<C>> {
    align_chars_exhaustive(&page.chars(), &passage.chars(), &params.costs)
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum AlBack {
    Step(Op),
    FromStart,
    Jump(usize),
}

#[derive(Debug, Clone, Copy)]
enum BgBack {
    Ended,
    Skip,
}

fn better<C: Cost>(candidate: C, current: Option<C>) -> bool {
    match current {
        None => true,
        Some(cur) => candidate < cur,
    }
}

pub fn align_chars_exhaustive<C: Cost>(src: &[char], tgt: &[char], costs: &CostModel<C>) -> Result<CharAlignment<C>> {
    let (n, m) = (src.len(), tgt.len());
    let cells = n.saturating_mul(m);
    if cells > EXHAUSTIVE_CELL_CAP {
        return Err(Error::TooLarge {
            cells,
            cap: EXHAUSTIVE_CELL_CAP,
        });
    }
    let width = m + 1;
    let idx = |i: usize, j: usize| i * width + j;
    let mut al: Vec<Option<C>> = vec![None; (n + 1) * width];
    let mut al_back = vec![AlBack::FromStart; (n + 1) * width];
    let mut bg: Vec<Option<C>> = vec![None; (n + 1) * width];
    let mut bg_back = vec![BgBack::Ended; (n + 1) * width];
    let unaligned_before = |i: usize| costs.unaligned * C::from_usize(i).expect("length fits the cost type");

    let mut jump_in: Vec<Option<(C, usize)>> = vec![None; m];
    for i in 1..=n {
        let s = src[i - 1];

        // cheapest way to reach target index q from a finished segment
        jump_in.iter_mut().for_each(|v| *v = None);
        let mut run: Option<(C, usize)> = None;
        for q in 0..m {
            if let Some((c, from)) = run {
                run = Some((c + costs.jump_per_char, from));
            }
            if q >= 1 {
                if let Some(c) = bg[idx(i - 1, q)] {
                    if run.is_none_or(|(rc, _)| c <= rc) {
                        run = Some((c, q));
                    }
                }
            }
            jump_in[q] = run;
        }
        let mut run: Option<(C, usize)> = None;
        for q in (0..m).rev() {
            if let Some((c, from)) = run {
                run = Some((c + costs.jump_per_char, from));
            }
            if let Some(c) = bg[idx(i - 1, q + 1)] {
                if run.is_none_or(|(rc, _)| c < rc) {
                    run = Some((c, q + 1));
                }
            }
            if let Some((c, from)) = run {
                if jump_in[q].is_none_or(|(jc, _)| c < jc) {
                    jump_in[q] = Some((c, from));
                }
            }
        }

        for j in 1..=m {
            let t = tgt[j - 1];
            let mut best: Option<C> = None;
            let mut back = AlBack::FromStart;
            if let Some(c) = al[idx(i - 1, j - 1)] {
                let op = if same_char(s, t) { Op::Match } else { Op::Sub };
                let v = c + costs.op_cost(op);
                if better(v, best) {
                    best = Some(v);
                    back = AlBack::Step(op);
                }
            }
            if let Some(c) = al[idx(i - 1, j)] {
                let v = c + costs.delete;
                if better(v, best) {
                    best = Some(v);
                    back = AlBack::Step(Op::Del);
                }
            }
            if same_char(s, t) {
                let v = unaligned_before(i - 1) + costs.match_cost;
                if better(v, best) {
                    best = Some(v);
                    back = AlBack::FromStart;
                }
                if let Some((c, from)) = jump_in[j - 1] {
                    let v = c + costs.jump_open + costs.match_cost;
                    if better(v, best) {
                        best = Some(v);
                        back = AlBack::Jump(from);
                    }
                }
            }
            al[idx(i, j)] = best;
            al_back[idx(i, j)] = back;
        }
        for j in 2..=m {
            if let Some(c) = al[idx(i, j - 1)] {
                let v = c + costs.insert;
                if better(v, al[idx(i, j)]) {
                    al[idx(i, j)] = Some(v);
                    al_back[idx(i, j)] = AlBack::Step(Op::Ins);
                }
            }
        }
        for j in 1..=m {
            let mut best = al[idx(i, j)];
            let mut back = BgBack::Ended;
            if let Some(c) = bg[idx(i - 1, j)] {
                let v = c + costs.unaligned;
                if better(v, best) {
                    best = Some(v);
                    back = BgBack::Skip;
                }
            }
            bg[idx(i, j)] = best;
            bg_back[idx(i, j)] = back;
        }
    }

    #[derive(Clone, Copy)]
    enum State {
        Al(usize, usize),
        Bg(usize, usize),
        Start,
    }

    let mut best_cost = unaligned_before(n);
    let mut state = State::Start;
    if n > 0 {
        for j in 1..=m {
            if let Some(c) = bg[idx(n, j)] {
                if c < best_cost {
                    best_cost = c;
                    state = State::Bg(n, j);
                }
            }
        }
    }

    let mut steps = Vec::new();
    loop {
        match state {
            State::Start => break,
            State::Bg(i, j) => match bg_back[idx(i, j)] {
                BgBack::Ended => state = State::Al(i, j),
                BgBack::Skip => state = State::Bg(i - 1, j),
            },
            State::Al(i, j) => match al_back[idx(i, j)] {
                AlBack::Step(op) => {
                    steps.push(Step { op, entry: false, i, j });
                    state = match op {
                        Op::Match | Op::Sub => State::Al(i - 1, j - 1),
                        Op::Del => State::Al(i - 1, j),
                        Op::Ins => State::Al(i, j - 1),
                    };
                }
                AlBack::FromStart => {
                    steps.push(Step {
                        op: Op::Match,
                        entry: true,
                        i,
                        j,
                    });
                    state = State::Start;
                }
                AlBack::Jump(from) => {
                    steps.push(Step {
                        op: Op::Match,
                        entry: true,
                        i,
                        j,
                    });
                    state = State::Bg(i - 1, from);
                }
            },
        }
    }
    steps.reverse();
    Ok(CharAlignment::from_segments(segments_from_steps(&steps), best_cost))
}

// ---------------------------------------------------------------------------
// Beam decoder
// ---------------------------------------------------------------------------

const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    entry: bool,
    i: u32,
    j: u32,
    prev: u32,
}

#[derive(Debug, Clone, Copy)]
struct BeamState<C> {
    j: u32,
    cost: C,
    node: u32,
}

#[derive(Debug, Clone, Copy)]
enum Prev {
    Node(u32),
    InRow(usize),
}

#[derive(Debug, Clone, Copy)]
struct Cand<C> {
    j: u32,
    cost: C,
    op: Op,
    entry: bool,
    prev: Prev,
}

impl<C: Cost> Cand<C> {
    fn rank(&self) -> u8 {
        let op = match self.op {
            Op::Match => 0,
            Op::Sub => 1,
            Op::Del => 2,
            Op::Ins => 3,
        };
        op * 2 + self.entry as u8
    }
}

fn cost_order<C: Cost>(a: C, b: C) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}

/// Keeps the `k` best states by (cost, target position), re-sorted by position.
fn prune<C: Cost, T>(items: &mut Vec<T>, k: usize, key: impl Fn(&T) -> (C, u32)) {
    if items.len() <= k {
        return;
    }
    items.sort_by(|a, b| {
        let (ca, ja) = key(a);
        let (cb, jb) = key(b);
        cost_order(ca, cb).then(ja.cmp(&jb))
    });
    items.truncate(k);
    items.sort_by_key(|x| key(x).1);
}

/// For each sorted query position, the cheapest `(cost, node)` of reaching it
/// from a finished segment, charging `per_char` per unit of target distance.
fn jump_sources<C: Cost>(bg: &[BeamState<C>], queries: &[u32], per_char: C) -> Vec<Option<(C, u32)>> {
    if bg.is_empty() {
        return vec![None; queries.len()];
    }
    if per_char == C::zero() {
        let mut best = bg[0];
        for st in &bg[1..] {
            if st.cost < best.cost {
                best = *st;
            }
        }
        return vec![Some((best.cost, best.node)); queries.len()];
    }
    let step = |c: C, d: u32| c + per_char * C::from_u32(d).expect("distance fits the cost type");
    let mut out: Vec<Option<(C, u32)>> = vec![None; queries.len()];

    // from the left: sources at positions <= query
    let mut run: Option<(C, u32, u32)> = None; // cost at `pos`, node, pos
    let mut k = 0;
    for (qi, &q) in queries.iter().enumerate() {
        while k < bg.len() && bg[k].j <= q {
            let st = bg[k];
            let moved = run.map(|(c, node, pos)| (step(c, st.j - pos), node, st.j));
            run = match moved {
                Some((c, node, pos)) if c <= st.cost => Some((c, node, pos)),
                _ => Some((st.cost, st.node, st.j)),
            };
            k += 1;
        }
        out[qi] = run.map(|(c, node, pos)| (step(c, q - pos), node));
    }

    // from the right: sources at positions > query
    let mut run: Option<(C, u32, u32)> = None;
    let mut k = bg.len();
    for (qi, &q) in queries.iter().enumerate().rev() {
        while k > 0 && bg[k - 1].j > q {
            let st = bg[k - 1];
            let moved = run.map(|(c, node, pos)| (step(c, pos - st.j), node, st.j));
            run = match moved {
                Some((c, node, pos)) if c <= st.cost => Some((c, node, pos)),
                _ => Some((st.cost, st.node, st.j)),
            };
            k -= 1;
        }
        if let Some((c, node, pos)) = run {
            let v = step(c, pos - q);
            if out[qi].is_none_or(|(oc, _)| v < oc) {
                out[qi] = Some((v, node));
            }
        }
    }
    out
}

pub fn align_chars<C: Cost>(src: &[char], tgt: &[char], params: &AlignParams<C>) -> Option<CharAlignment<C>> {
    let alignment = beam_decode(src, tgt, &params.costs, params.beam_width.max(1));
    (alignment.covered_source() >= params.min_align_chars).then_some(alignment)
}

/// Beam decoding without the minimum-length cut.
pub fn beam_decode<C: Cost>(src: &[char], tgt: &[char], costs: &CostModel<C>, beam_width: usize) -> CharAlignment<C> {
    let m = tgt.len() as u32;
    let mut positions: HashMap<char, Vec<u32>> = HashMap::new();
    for (q, &c) in tgt.iter().enumerate() {
        positions.entry(char_class(c)).or_default().push(q as u32);
    }
    let empty: Vec<u32> = Vec::new();

    let mut nodes: Vec<Node> = Vec::new();
    let mut al: Vec<BeamState<C>> = Vec::new();
    let mut bg: Vec<BeamState<C>> = Vec::new();
    let mut start_cost = C::zero();
    let mut cands: Vec<Cand<C>> = Vec::new();
    let mut row: Vec<Cand<C>> = Vec::new();

    for (i, &s) in src.iter().enumerate() {
        let i_after = (i + 1) as u32;
        cands.clear();
        for st in &al {
            if st.j < m {
                let op = if same_char(s, tgt[st.j as usize]) { Op::Match } else { Op::Sub };
                cands.push(Cand {
                    j: st.j + 1,
                    cost: st.cost + costs.op_cost(op),
                    op,
                    entry: false,
                    prev: Prev::Node(st.node),
                });
            }
            cands.push(Cand {
                j: st.j,
                cost: st.cost + costs.delete,
                op: Op::Del,
                entry: false,
                prev: Prev::Node(st.node),
            });
        }
        let entry_positions = positions.get(&char_class(s)).unwrap_or(&empty);
        let jumps = jump_sources(&bg, entry_positions, costs.jump_per_char);
        for (&q, jump) in entry_positions.iter().zip(jumps) {
            let mut cost = start_cost + costs.match_cost;
            let mut prev = NO_NODE;
            if let Some((c, node)) = jump {
                let v = c + costs.jump_open + costs.match_cost;
                if v < cost {
                    cost = v;
                    prev = node;
                }
            }
            cands.push(Cand {
                j: q + 1,
                cost,
                op: Op::Match,
                entry: true,
                prev: Prev::Node(prev),
            });
        }

        cands.sort_by(|a, b| a.j.cmp(&b.j).then(cost_order(a.cost, b.cost)).then(a.rank().cmp(&b.rank())));
        cands.dedup_by_key(|c| c.j);

        let threshold = if cands.len() >= beam_width {
            let mut costs_only: Vec<C> = cands.iter().map(|c| c.cost).collect();
            let (_, kth, _) = costs_only.select_nth_unstable_by(beam_width - 1, |a, b| cost_order(*a, *b));
            Some(*kth)
        } else {
            None
        };
        let within = |c: C| threshold.is_none_or(|t| c <= t);

        // insertion closure along the row
        row.clear();
        let mut carry: Option<(u32, C)> = None; // position and cost of row.last()
        let extend = |row: &mut Vec<Cand<C>>, carry: &mut Option<(u32, C)>, limit: u32| {
            while let Some((cj, cc)) = *carry {
                if cj + 1 >= limit {
                    break;
                }
                let v = cc + costs.insert;
                if !within(v) {
                    *carry = None;
                    break;
                }
                let prev = Prev::InRow(row.len() - 1);
                row.push(Cand {
                    j: cj + 1,
                    cost: v,
                    op: Op::Ins,
                    entry: false,
                    prev,
                });
                *carry = Some((cj + 1, v));
            }
        };
        for cand in cands.iter() {
            extend(&mut row, &mut carry, cand.j);
            let mut chosen = *cand;
            if let Some((cj, cc)) = carry {
                if cj + 1 == cand.j {
                    let v = cc + costs.insert;
                    if v < chosen.cost {
                        chosen = Cand {
                            j: cand.j,
                            cost: v,
                            op: Op::Ins,
                            entry: false,
                            prev: Prev::InRow(row.len() - 1),
                        };
                    }
                }
            }
            row.push(chosen);
            carry = Some((chosen.j, chosen.cost));
        }
        extend(&mut row, &mut carry, m + 1);

        // prune, keeping in-row ancestors of survivors
        let mut keep: Vec<usize> = (0..row.len()).collect();
        prune(&mut keep, beam_width, |&k| (row[k].cost, row[k].j));
        let mut needed = vec![false; row.len()];
        for &k in &keep {
            let mut cur = k;
            loop {
                if needed[cur] {
                    break;
                }
                needed[cur] = true;
                match row[cur].prev {
                    Prev::InRow(p) => cur = p,
                    Prev::Node(_) => break,
                }
            }
        }
        let mut node_of = vec![NO_NODE; row.len()];
        for (k, cand) in row.iter().enumerate() {
            if !needed[k] {
                continue;
            }
            let prev = match cand.prev {
                Prev::Node(n) => n,
                Prev::InRow(p) => node_of[p],
            };
            node_of[k] = nodes.len() as u32;
            nodes.push(Node {
                op: cand.op,
                entry: cand.entry,
                i: i_after,
                j: cand.j,
                prev,
            });
        }
        al.clear();
        al.extend(keep.iter().map(|&k| BeamState {
            j: row[k].j,
            cost: row[k].cost,
            node: node_of[k],
        }));

        // background after a finished segment
        let mut next_bg: Vec<BeamState<C>> = Vec::with_capacity(bg.len() + al.len());
        let (mut a, mut b) = (0, 0);
        while a < al.len() || b < bg.len() {
            let take_al = b >= bg.len() || (a < al.len() && al[a].j <= bg[b].j);
            if take_al && b < bg.len() && al[a].j == bg[b].j {
                let skipped = bg[b].cost + costs.unaligned;
                next_bg.push(if skipped < al[a].cost {
                    BeamState { cost: skipped, ..bg[b] }
                } else {
                    al[a]
                });
                a += 1;
                b += 1;
            } else if take_al {
                next_bg.push(al[a]);
                a += 1;
            } else {
                next_bg.push(BeamState {
                    cost: bg[b].cost + costs.unaligned,
                    ..bg[b]
                });
                b += 1;
            }
        }
        prune(&mut next_bg, beam_width, |s| (s.cost, s.j));
        bg = next_bg;
        start_cost = start_cost + costs.unaligned;
    }

    let mut best_cost = start_cost;
    let mut best_node = NO_NODE;
    for st in &bg {
        if st.cost < best_cost {
            best_cost = st.cost;
            best_node = st.node;
        }
    }

    let mut steps = Vec::new();
    let mut cur = best_node;
    while cur != NO_NODE {
        let node = nodes[cur as usize];
        steps.push(Step {
            op: node.op,
            entry: node.entry,
            i: node.i as usize,
            j: node.j as usize,
        });
        cur = node.prev;
    }
    steps.reverse();
    CharAlignment::from_segments(segments_from_steps(&steps), best_cost)
}
