//! Construction of the consistent score function: the expected number of
//! steps to reach the optimal program under the chain the scores themselves
//! induce. Programs are settled in nondecreasing score order with a
//! Dijkstra-style priority queue over tentative values, giving
//! O((n + m) log n) where m is the total support size.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ProgramSpace;

/// An extended nonnegative real: a finite score or +infinity.
///
/// Infinity is a distinct variant rather than `f64::INFINITY` so the
/// accumulator arithmetic inside the settling loop never touches sentinel
/// values. Serialized as a plain number, or the string `"inf"`.
#[derive(Clone, Copy, Debug)]
pub enum Score {
    /// Must be a nonnegative non-NaN value.
    Finite(f64),
    Infinite,
}

impl Score {
    pub const ZERO: Score = Score::Finite(0.0);

    /// `a / b`, or +infinity when `b` is zero (no settled mass reachable).
    /// An overflowing quotient also saturates to infinity.
    pub fn from_ratio(a: f64, b: f64) -> Score {
        if b > 0.0 {
            let v = a / b;
            if v.is_finite() {
                Score::Finite(v)
            } else {
                Score::Infinite
            }
        } else {
            Score::Infinite
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Score::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Score::Finite(v) => Some(v),
            Score::Infinite => None,
        }
    }

    /// Strict-improvement move rule: lower wins, and infinity never beats
    /// infinity. Exact comparison on the computed doubles, no epsilon.
    pub fn improves_on(self, other: Score) -> bool {
        self < other
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Score::Finite(a), Score::Finite(b)) => a.total_cmp(b),
            (Score::Finite(_), Score::Infinite) => Ordering::Less,
            (Score::Infinite, Score::Finite(_)) => Ordering::Greater,
            (Score::Infinite, Score::Infinite) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Finite(v) => write!(f, "{v}"),
            Score::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Score::Finite(v) => serializer.serialize_f64(*v),
            Score::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ScoreVisitor;

        impl Visitor<'_> for ScoreVisitor {
            type Value = Score;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Score, E> {
                if v.is_finite() && v >= 0.0 {
                    Ok(Score::Finite(v))
                } else {
                    Err(E::custom(format!("score {v} is not a nonnegative finite number")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Score, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Score, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<Score, E> {
                if s == "inf" {
                    Ok(Score::Infinite)
                } else {
                    Err(E::custom(format!("expected \"inf\", got {s:?}")))
                }
            }
        }

        deserializer.deserialize_any(ScoreVisitor)
    }
}

/// 1-based position in ascending score order, ties broken by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rank(pub u32);

impl Rank {
    pub fn get(self) -> u32 {
        self.0
    }
}

/// Finalized scores plus the order programs were settled in. Programs absent
/// from `settle_order` are exactly those with infinite score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    scores: Vec<Score>,
    settle_order: Vec<u32>,
}

impl ScoreTable {
    /// Assemble a table without checking coherence; used by tests and file
    /// loading (consistency against a space is [`crate::chain::check_consistency`]'s job).
    pub fn from_parts(scores: Vec<Score>, settle_order: Vec<u32>) -> Self {
        Self { scores, settle_order }
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn score(&self, program: usize) -> Score {
        self.scores[program]
    }

    pub fn scores(&self) -> &[Score] {
        &self.scores
    }

    pub fn settle_order(&self) -> &[u32] {
        &self.settle_order
    }

    /// The table as it stood after only the first `k` settle steps: later
    /// programs are reset to infinity. `censored(1)` is the initial state
    /// (just the optimal program), `censored(settle_order.len())` is `self`.
    pub fn censored(&self, k: usize) -> ScoreTable {
        assert!(k <= self.settle_order.len());
        let mut scores = vec![Score::Infinite; self.scores.len()];
        for &p in &self.settle_order[..k] {
            scores[p as usize] = self.scores[p as usize];
        }
        ScoreTable {
            scores,
            settle_order: self.settle_order[..k].to_vec(),
        }
    }
}

/// Save a score table as `{"scores": [...], "settle_order": [...]}`.
pub fn save_table(table: &ScoreTable, path: &Path) -> Result<()> {
    save_table_value(&serde_json::to_value(table).expect("table serializes"), path)
}

/// Like [`save_table`] with an extra ignored-on-load `meta` field.
pub fn save_table_with_meta(table: &ScoreTable, meta: serde_json::Value, path: &Path) -> Result<()> {
    let mut value = serde_json::to_value(table).expect("table serializes");
    value
        .as_object_mut()
        .expect("table serializes to an object")
        .insert("meta".into(), meta);
    save_table_value(&value, path)
}

fn save_table_value(value: &serde_json::Value, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Load a score table, checking index bounds of `settle_order`.
pub fn load_table(path: &Path) -> Result<ScoreTable> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let table: ScoreTable =
        serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Parse {
            path: path.to_owned(),
            source,
        })?;
    let n = table.scores.len();
    let mut seen = vec![false; n];
    for &p in &table.settle_order {
        if p as usize >= n {
            return Err(Error::BadFile {
                path: path.to_owned(),
                msg: format!("settle_order entry {p} out of range (n = {n})"),
            });
        }
        if std::mem::replace(&mut seen[p as usize], true) {
            return Err(Error::BadFile {
                path: path.to_owned(),
                msg: format!("settle_order repeats program {p}"),
            });
        }
    }
    Ok(table)
}

/// Expected steps to the optimal assuming moves only into the settled set:
/// `a / b` with `a = 1 + sum of q*score` over settled generation targets and
/// `b = sum of q` over them; +infinity when `b` is zero.
pub fn tentative_value(a: f64, b: f64) -> Score {
    Score::from_ratio(a, b)
}

/// Heap entry; orders smallest key first, ties by lowest program index.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    key: f64,
    program: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap pops the maximum; invert so the smallest key (and then
        // the smallest index) comes out first.
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.program.cmp(&self.program))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reverse adjacency in CSR form: which programs generate program k, and
/// with what probability.
struct ReverseAdjacency {
    offsets: Vec<usize>,
    sources: Vec<u32>,
    mass: Vec<f64>,
}

impl ReverseAdjacency {
    fn build(space: &ProgramSpace) -> Self {
        let n = space.n();
        let mut counts = vec![0usize; n + 1];
        for row in space.rows() {
            for (j, q) in row.entries() {
                if q > 0.0 {
                    counts[j + 1] += 1;
                }
            }
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let total = counts[n];
        let mut sources = vec![0u32; total];
        let mut mass = vec![0.0f64; total];
        let mut fill = counts.clone();
        for (i, row) in space.rows().iter().enumerate() {
            for (j, q) in row.entries() {
                if q > 0.0 {
                    let slot = fill[j];
                    sources[slot] = i as u32;
                    mass[slot] = q;
                    fill[j] += 1;
                }
            }
        }
        Self { offsets: counts, sources, mass }
    }

    fn edges_into(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[k]..self.offsets[k + 1];
        self.sources[range.clone()]
            .iter()
            .zip(&self.mass[range])
            .map(|(&s, &q)| (s as usize, q))
    }
}

/// Build the consistent score table for a space: the expected number of
/// steps to reach the optimal program, settled in nondecreasing order.
///
/// Maintains per-program accumulators `a = 1 + sum q*score` and `b = sum q`
/// over settled generation targets, settles the unsettled program with the
/// minimum tentative value `a/b`, and propagates along reverse edges. Uses
/// lazy reinsertion: tentative keys only decrease, so stale heap entries are
/// skipped on pop. Programs whose `b` never turns positive keep +infinity.
pub fn consistent_scores(space: &ProgramSpace) -> Result<ScoreTable> {
    space.validate().into_result()?;
    let n = space.n();
    let rev = ReverseAdjacency::build(space);

    let mut a = vec![1.0f64; n];
    let mut b = vec![0.0f64; n];
    let mut settled = vec![false; n];
    let mut scores = vec![Score::Infinite; n];
    let mut settle_order = Vec::with_capacity(n);
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();

    let optimal = space.optimal();
    scores[optimal] = Score::ZERO;
    settled[optimal] = true;
    settle_order.push(optimal as u32);
    relax(&rev, optimal, 0.0, &mut a, &mut b, &settled, &mut heap);

    while let Some(Candidate { key, program }) = heap.pop() {
        let i = program as usize;
        if settled[i] {
            continue; // stale lazy entry
        }
        // Keys only decrease, so the first pop of an unsettled program
        // carries its current tentative value.
        debug_assert_eq!(key, a[i] / b[i]);
        settled[i] = true;
        scores[i] = Score::Finite(key);
        settle_order.push(program);
        relax(&rev, i, key, &mut a, &mut b, &settled, &mut heap);
    }

    Ok(ScoreTable { scores, settle_order })
}

fn relax(
    rev: &ReverseAdjacency,
    settled_program: usize,
    settled_score: f64,
    a: &mut [f64],
    b: &mut [f64],
    settled: &[bool],
    heap: &mut BinaryHeap<Candidate>,
) {
    for (j, q) in rev.edges_into(settled_program) {
        if settled[j] {
            continue;
        }
        #[cfg(debug_assertions)]
        let before = Score::from_ratio(a[j], b[j]);
        a[j] += q * settled_score;
        b[j] += q;
        let key = a[j] / b[j];
        #[cfg(debug_assertions)]
        if let Score::Finite(old) = before {
            // Allow a couple of ulps of slack for the rounded update.
            debug_assert!(
                key <= old * (1.0 + 1e-12) + 1e-12,
                "tentative key increased for program {j}: {old} -> {key}"
            );
        }
        heap.push(Candidate { key, program: j as u32 });
    }
}

/// Tentative value of every program against the settled (finite-score) part
/// of `table`; settled programs report their own score. With the full table
/// this is the identity on finite scores.
pub fn tentative_values(space: &ProgramSpace, table: &ScoreTable) -> Result<Vec<Score>> {
    if table.n() != space.n() {
        return Err(Error::LengthMismatch {
            expected: space.n(),
            got: table.n(),
        });
    }
    let mut out = Vec::with_capacity(space.n());
    for i in 0..space.n() {
        match table.score(i) {
            s @ Score::Finite(_) => out.push(s),
            Score::Infinite => {
                let mut a = 1.0;
                let mut b = 0.0;
                for (j, q) in space.row(i).entries() {
                    if let Score::Finite(s) = table.score(j) {
                        a += q * s;
                        b += q;
                    }
                }
                out.push(tentative_value(a, b));
            }
        }
    }
    Ok(out)
}

/// Rank of one program: `1 + |{j: score[j] < score[i]}| + |{j < i: score[j] = score[i]}|`.
pub fn rank_of(table: &ScoreTable, program: usize) -> Result<Rank> {
    if program >= table.n() {
        return Err(Error::IndexOutOfRange {
            index: program,
            n: table.n(),
        });
    }
    let s = table.score(program);
    let mut rank = 1u32;
    for (j, &t) in table.scores().iter().enumerate() {
        if t < s || (t == s && j < program) {
            rank += 1;
        }
    }
    Ok(Rank(rank))
}

/// Ranks of every program at once (one sort instead of n scans).
pub fn ranks(table: &ScoreTable) -> Vec<Rank> {
    let n = table.n();
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.sort_unstable_by(|&p, &q| {
        table
            .score(p as usize)
            .cmp(&table.score(q as usize))
            .then_with(|| p.cmp(&q))
    });
    let mut out = vec![Rank(0); n];
    for (pos, &p) in idx.iter().enumerate() {
        out[p as usize] = Rank(pos as u32 + 1);
    }
    out
}
