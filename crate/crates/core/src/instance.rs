//! Program spaces: data model, validation, the worked four-program example,
//! the seeded random-instance generator, and file I/O.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance for a row's probability mass summing to one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Largest supported instance exponent (n = 2^l indices must fit in u32
/// with room to spare; anything near this is far beyond desk scale anyway).
pub const MAX_L: u32 = 30;

/// One program's generation distribution, stored sparsely.
///
/// `support` holds distinct target indices in ascending order and
/// `weights[k]` is the probability of generating `support[k]`. Zero-weight
/// entries are never stored, so equality of rows is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub support: Vec<u32>,
    pub weights: Vec<f64>,
}

impl Row {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Iterate (target, probability) pairs.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support
            .iter()
            .zip(&self.weights)
            .map(|(&j, &q)| (j as usize, q))
    }
}

/// A finite space of program-generating programs.
///
/// Program `i`'s behaviour is `rows[i]`: the distribution over programs it
/// generates. `optimal` designates the target program. The struct mirrors
/// the instance file format exactly: `{"n": .., "optimal": .., "rows": ..}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpace {
    n: usize,
    optimal: usize,
    rows: Vec<Row>,
}

impl ProgramSpace {
    /// Assemble a space without checking invariants; pair with [`ProgramSpace::validate`].
    pub fn from_parts(n: usize, optimal: usize, rows: Vec<Row>) -> Self {
        Self { n, optimal, rows }
    }

    /// Build from dense weight vectors, dropping zero entries.
    pub fn from_dense(rows: &[Vec<f64>], optimal: usize) -> Self {
        let n = rows.len();
        let rows = rows
            .iter()
            .map(|dense| {
                let mut support = Vec::new();
                let mut weights = Vec::new();
                for (j, &q) in dense.iter().enumerate() {
                    if q != 0.0 {
                        support.push(j as u32);
                        weights.push(q);
                    }
                }
                Row { support, weights }
            })
            .collect();
        Self { n, optimal, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn optimal(&self) -> usize {
        self.optimal
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Row {
        &self.rows[i]
    }

    /// Total support size over all rows.
    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Row::len).sum()
    }

    /// Check every invariant; an empty report means the space is well formed.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if self.rows.len() != self.n {
            v.push(Violation::RowCountMismatch {
                declared: self.n,
                actual: self.rows.len(),
            });
        }
        if self.optimal >= self.n {
            v.push(Violation::OptimalOutOfRange {
                optimal: self.optimal,
                n: self.n,
            });
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.support.len() != row.weights.len() {
                v.push(Violation::ArityMismatch {
                    row: i,
                    support: row.support.len(),
                    weights: row.weights.len(),
                });
                continue;
            }
            for &j in &row.support {
                if j as usize >= self.n {
                    v.push(Violation::IndexOutOfRange { row: i, index: j });
                }
            }
            if !row.support.windows(2).all(|w| w[0] < w[1]) {
                v.push(Violation::UnsortedSupport { row: i });
            }
            let mut sum = 0.0;
            let mut bad_weight = false;
            for &q in &row.weights {
                if !q.is_finite() {
                    v.push(Violation::NonFiniteWeight { row: i });
                    bad_weight = true;
                    break;
                }
                if q < 0.0 {
                    v.push(Violation::NegativeWeight { row: i, weight: q });
                    bad_weight = true;
                    break;
                }
                sum += q;
            }
            if !bad_weight && (sum - 1.0).abs() > ROW_SUM_TOL {
                v.push(Violation::RowSumMismatch { row: i, sum });
            }
        }
        ValidationReport { violations: v }
    }
}

/// One violated invariant, tagged with the row it occurred in.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    RowCountMismatch { declared: usize, actual: usize },
    OptimalOutOfRange { optimal: usize, n: usize },
    ArityMismatch { row: usize, support: usize, weights: usize },
    IndexOutOfRange { row: usize, index: u32 },
    UnsortedSupport { row: usize },
    NegativeWeight { row: usize, weight: f64 },
    NonFiniteWeight { row: usize },
    RowSumMismatch { row: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::RowCountMismatch { declared, actual } => {
                write!(f, "declared n = {declared} but {actual} rows present")
            }
            Violation::OptimalOutOfRange { optimal, n } => {
                write!(f, "optimal out of range: {optimal} with n = {n}")
            }
            Violation::ArityMismatch { row, support, weights } => {
                write!(f, "row {row}: {support} support indices vs {weights} weights")
            }
            Violation::IndexOutOfRange { row, index } => {
                write!(f, "row {row}: support index {index} out of range")
            }
            Violation::UnsortedSupport { row } => {
                write!(f, "row {row}: support not strictly ascending")
            }
            Violation::NegativeWeight { row, weight } => {
                write!(f, "row {row}: negative weight {weight}")
            }
            Violation::NonFiniteWeight { row } => {
                write!(f, "row {row}: non-finite weight")
            }
            Violation::RowSumMismatch { row, sum } => {
                write!(f, "row {row}: weights sum to {sum} (expected 1 within {ROW_SUM_TOL:e})")
            }
        }
    }
}

/// Outcome of validating a space; violations are data, not failures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Turn a failed report into an error, for callers that require a
    /// well-formed space.
    pub fn into_result(self) -> Result<()> {
        if self.ok() {
            Ok(())
        } else {
            Err(Error::InvalidSpace(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// How weights on a drawn support are distributed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightLaw {
    /// Uniform on the simplex (flat Dirichlet): normalized i.i.d. unit
    /// exponentials.
    #[default]
    FlatDirichlet,
    /// Normalized i.i.d. Uniform(0,1) draws.
    NormalizedUniform,
}

/// Configuration for random instance generation; n = 2^l.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub l: u32,
    pub support_min: u32,
    pub support_max: u32,
    pub seed: u64,
    pub weight_law: WeightLaw,
}

impl GenConfig {
    /// Config with the default support-size bounds of 10..=100.
    pub fn new(l: u32, seed: u64) -> Self {
        Self {
            l,
            support_min: 10,
            support_max: 100,
            seed,
            weight_law: WeightLaw::default(),
        }
    }

    pub fn n(&self) -> usize {
        1usize << self.l
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidConfig(
                "l must be at least 1 (a 1-program space has no non-start optimal)".into(),
            ));
        }
        if self.l > MAX_L {
            return Err(Error::InvalidConfig(format!(
                "l = {} exceeds the supported maximum {MAX_L}",
                self.l
            )));
        }
        if self.support_min < 1 || self.support_min > self.support_max {
            return Err(Error::InvalidConfig(format!(
                "support bounds must satisfy 1 <= min <= max, got {}..{}",
                self.support_min, self.support_max
            )));
        }
        Ok(())
    }
}

/// The hand-checkable four-program space used throughout the tests and by
/// the `example` subcommand. Program 0 is optimal; the rows are small enough
/// that every settling step can be recomputed by hand.
pub fn worked_example() -> ProgramSpace {
    ProgramSpace::from_dense(
        &[
            vec![0.97, 0.01, 0.01, 0.01],
            vec![0.75, 0.00, 0.25, 0.00],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.00, 0.58, 0.00, 0.42],
        ],
        0,
    )
}

/// Generate a random instance: row 0 is uniform over all programs, every
/// other row draws a support size from Uniform{support_min..=support_max}
/// (clamped to n), a uniform subset of that size, and weights on it from the
/// configured law. The optimal index is uniform over 1..n, so the measured
/// start program is never the target. Fully deterministic given the seed.
pub fn generate_random_instance(cfg: &GenConfig) -> Result<ProgramSpace> {
    cfg.validate()?;
    let n = cfg.n();
    let mut rng = rng::stream_rng(cfg.seed);
    let optimal = rng.gen_range(1..n);
    let size_dist = Uniform::new_inclusive(cfg.support_min, cfg.support_max);

    let mut rows = Vec::with_capacity(n);
    rows.push(uniform_row(n));
    for _ in 1..n {
        let k = (size_dist.sample(&mut rng) as usize).min(n);
        let mut support: Vec<u32> = rand::seq::index::sample(&mut rng, n, k)
            .iter()
            .map(|j| j as u32)
            .collect();
        support.sort_unstable();
        let weights = draw_weights(&mut rng, k, cfg.weight_law);
        // Drop entries whose weight underflowed to zero, keeping the
        // sparse form canonical.
        let (support, weights) = support
            .into_iter()
            .zip(weights)
            .filter(|&(_, q)| q > 0.0)
            .unzip();
        rows.push(Row { support, weights });
    }
    Ok(ProgramSpace { n, optimal, rows })
}

fn uniform_row(n: usize) -> Row {
    // n is a power of two, so 1/n is exact and the row sums to exactly 1.
    let w = 1.0 / n as f64;
    Row {
        support: (0..n as u32).collect(),
        weights: vec![w; n],
    }
}

fn draw_weights<R: Rng>(rng: &mut R, k: usize, law: WeightLaw) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = match law {
            WeightLaw::FlatDirichlet => (0..k).map(|_| rng.sample(Exp1)).collect(),
            WeightLaw::NormalizedUniform => (0..k).map(|_| rng.gen::<f64>()).collect(),
        };
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return raw.into_iter().map(|e| e / total).collect();
        }
        // All draws zero has probability ~0; redraw rather than divide by it.
    }
}

/// Write a space to `path` as JSON. Round-trips exactly: floats are emitted
/// in shortest form that parses back to the same bits.
pub fn save(space: &ProgramSpace, path: &Path) -> Result<()> {
    save_value(&serde_json::to_value(space).expect("space serializes"), path)
}

/// Like [`save`] but with an extra `meta` field (provenance: config, seed,
/// generator name). Loaders ignore it.
pub fn save_with_meta(space: &ProgramSpace, meta: serde_json::Value, path: &Path) -> Result<()> {
    let mut value = serde_json::to_value(space).expect("space serializes");
    value
        .as_object_mut()
        .expect("space serializes to an object")
        .insert("meta".into(), meta);
    save_value(&value, path)
}

fn save_value(value: &serde_json::Value, path: &Path) -> Result<()> {
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

/// Load a space from `path`, validating every invariant.
pub fn load(path: &Path) -> Result<ProgramSpace> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let space: ProgramSpace =
        serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Parse {
            path: path.to_owned(),
            source,
        })?;
    space.validate().into_result()?;
    Ok(space)
}
