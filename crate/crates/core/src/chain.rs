//! The Markov chain a score table induces, and an exact expected-hitting-time
//! solver used as the independent oracle for the scorer.
//!
//! The chain is materialized only on demand (tests, the oracle, small
//! instances); the scorer and simulator work on `ProgramSpace` + scores
//! directly so large sweeps never pay for an extra copy.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::instance::ProgramSpace;
use crate::scorer::{Score, ScoreTable};

/// Solve-set size up to which the oracle uses dense elimination; larger
/// systems fall back to Gauss-Seidel sweeps.
pub const DIRECT_SOLVE_MAX: usize = 2048;
/// Scaled residual target for the iterative solver.
pub const SWEEP_RESIDUAL: f64 = 1e-12;
/// Sweep count after which the iterative solver gives up.
pub const SWEEP_CAP: usize = 100_000;

/// Relative tolerance for the fixed-point and order checks in
/// [`check_consistency`].
pub const CONSISTENCY_RTOL: f64 = 1e-8;

/// Row-stochastic sparse transition matrix with one absorbing state.
///
/// Every off-diagonal destination of a row has strictly smaller score than
/// its source under the table the matrix was built from; rejected
/// generations are folded into the diagonal self-loop mass.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    absorbing: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn absorbing(&self) -> usize {
        self.absorbing
    }

    /// Sparse (destination, probability) pairs of one row, ascending by
    /// destination, including the self-loop mass.
    pub fn row(&self, state: usize) -> &[(u32, f64)] {
        &self.rows[state]
    }

    /// Dense rendering, for display and small-instance golden tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                dense[i][j as usize] = p;
            }
        }
        dense
    }

    /// CSV edge list `source,dest,prob`, one edge per line, header included.
    pub fn write_edge_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "source,dest,prob")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                writeln!(w, "{i},{j},{p}")?;
            }
        }
        Ok(())
    }
}

/// Materialize the chain induced by `table` over `space`:
/// `P(i -> j) = q_ij` iff `score[j] < score[i]` (strict; infinity never
/// beats infinity), all remaining generation mass stays on `i`, and the
/// optimal program is absorbing. Works for intermediate tables containing
/// infinities exactly as for the final one.
pub fn build_transition(space: &ProgramSpace, table: &ScoreTable) -> Result<TransitionMatrix> {
    if table.n() != space.n() {
        return Err(Error::LengthMismatch {
            expected: space.n(),
            got: table.n(),
        });
    }
    let n = space.n();
    let optimal = space.optimal();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        if i == optimal {
            rows.push(vec![(i as u32, 1.0)]);
            continue;
        }
        let own = table.score(i);
        let mut moved: Vec<(u32, f64)> = Vec::new();
        let mut stay = 0.0;
        for (j, q) in space.row(i).entries() {
            if table.score(j).improves_on(own) {
                moved.push((j as u32, q));
            } else {
                stay += q;
            }
        }
        if moved.is_empty() {
            // No improving destination: the state keeps all its mass with
            // certainty, independent of how exactly the row sums.
            rows.push(vec![(i as u32, 1.0)]);
            continue;
        }
        if stay > 0.0 {
            let pos = moved.partition_point(|&(j, _)| (j as usize) < i);
            moved.insert(pos, (i as u32, stay));
        }
        rows.push(moved);
    }
    Ok(TransitionMatrix { n, absorbing: optimal, rows })
}

/// Expected number of steps from every state until first arrival at
/// `target`, computed from the chain alone (never from a score table).
///
/// `h[target] = 0`; states that reach the target almost surely solve the
/// linear system `h_i = 1 + sum_j P(i->j) h_j`; every other state — unable
/// to reach the target, or able to wander somewhere the target is
/// unreachable from — gets +infinity.
pub fn hitting_times_exact(chain: &TransitionMatrix, target: usize) -> Result<Vec<Score>> {
    let n = chain.n;
    if target >= n {
        return Err(Error::IndexOutOfRange { index: target, n });
    }
    if target != chain.absorbing {
        return Err(Error::TargetMismatch {
            target,
            absorbing: chain.absorbing,
        });
    }

    // Reverse adjacency (structure only).
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, row) in chain.rows.iter().enumerate() {
        for &(j, p) in row {
            if p > 0.0 && j as usize != i {
                rev[j as usize].push(i as u32);
            }
        }
    }

    // States with any path to the target.
    let reach = mark_reverse(&rev, std::iter::once(target), n);
    // States with a path into the complement never absorb almost surely.
    let leaky = mark_reverse(&rev, (0..n).filter(|&s| !reach[s]), n);

    let solve_states: Vec<u32> = (0..n)
        .filter(|&s| reach[s] && !leaky[s] && s != target)
        .map(|s| s as u32)
        .collect();

    let solved = if solve_states.len() <= DIRECT_SOLVE_MAX {
        solve_dense(chain, &solve_states, target)?
    } else {
        solve_sweep(chain, &solve_states, target)?
    };

    let mut out = vec![Score::Infinite; n];
    out[target] = Score::ZERO;
    for (r, &s) in solve_states.iter().enumerate() {
        out[s as usize] = Score::Finite(solved[r]);
    }
    Ok(out)
}

/// Mark everything that can reach any seed state by following edges forward
/// (i.e. a reverse BFS from the seeds).
fn mark_reverse(rev: &[Vec<u32>], seeds: impl Iterator<Item = usize>, n: usize) -> Vec<bool> {
    let mut marked = vec![false; n];
    let mut queue: Vec<usize> = Vec::new();
    for s in seeds {
        if !marked[s] {
            marked[s] = true;
            queue.push(s);
        }
    }
    while let Some(s) = queue.pop() {
        for &p in &rev[s] {
            let p = p as usize;
            if !marked[p] {
                marked[p] = true;
                queue.push(p);
            }
        }
    }
    marked
}

/// Gaussian elimination with partial pivoting on `(I - P) h = 1` restricted
/// to `states`; edges to the target contribute zero, and edges outside
/// `states` cannot occur by construction of the solve set.
fn solve_dense(chain: &TransitionMatrix, states: &[u32], target: usize) -> Result<Vec<f64>> {
    let k = states.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut col_of = vec![usize::MAX; chain.n];
    for (c, &s) in states.iter().enumerate() {
        col_of[s as usize] = c;
    }

    let mut a = vec![0.0f64; k * k];
    let mut rhs = vec![1.0f64; k];
    for (r, &s) in states.iter().enumerate() {
        a[r * k + r] = 1.0;
        for &(j, p) in &chain.rows[s as usize] {
            let j = j as usize;
            if j == target {
                continue;
            }
            let c = col_of[j];
            debug_assert_ne!(c, usize::MAX, "edge out of the solve set");
            a[r * k + c] -= p;
        }
    }

    // Forward elimination.
    for col in 0..k {
        let mut pivot_row = col;
        let mut pivot_abs = a[col * k + col].abs();
        for r in col + 1..k {
            let v = a[r * k + col].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs < 1e-14 {
            return Err(Error::SingularSystem);
        }
        if pivot_row != col {
            for c in 0..k {
                a.swap(col * k + c, pivot_row * k + c);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = a[col * k + col];
        for r in col + 1..k {
            let factor = a[r * k + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[r * k + col] = 0.0;
            for c in col + 1..k {
                a[r * k + c] -= factor * a[col * k + c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }

    // Back substitution.
    let mut h = vec![0.0f64; k];
    for r in (0..k).rev() {
        let mut acc = rhs[r];
        for c in r + 1..k {
            acc -= a[r * k + c] * h[c];
        }
        h[r] = acc / a[r * k + r];
    }
    Ok(h)
}

/// Gauss-Seidel sweeps for solve sets too large for dense elimination.
/// The restricted system is a nonsingular M-matrix, so the sweeps converge;
/// the residual target is scaled by the solution magnitude.
fn solve_sweep(chain: &TransitionMatrix, states: &[u32], target: usize) -> Result<Vec<f64>> {
    let k = states.len();
    let mut col_of = vec![usize::MAX; chain.n];
    for (c, &s) in states.iter().enumerate() {
        col_of[s as usize] = c;
    }
    let mut h = vec![0.0f64; k];
    let mut residual = f64::INFINITY;
    for _ in 0..SWEEP_CAP {
        for (r, &s) in states.iter().enumerate() {
            let mut num = 1.0;
            let mut self_p = 0.0;
            for &(j, p) in &chain.rows[s as usize] {
                let j = j as usize;
                if j == s as usize {
                    self_p += p;
                } else if j != target {
                    num += p * h[col_of[j]];
                }
            }
            let escape = 1.0 - self_p;
            if escape <= 0.0 {
                return Err(Error::SingularSystem);
            }
            h[r] = num / escape;
        }

        let mut max_h: f64 = 1.0;
        residual = 0.0f64;
        for (r, &s) in states.iter().enumerate() {
            let mut rhs = 1.0;
            for &(j, p) in &chain.rows[s as usize] {
                let j = j as usize;
                if j != target {
                    rhs += p * h[col_of[j]];
                }
            }
            residual = residual.max((h[r] - rhs).abs());
            max_h = max_h.max(h[r]);
        }
        if residual < SWEEP_RESIDUAL * max_h {
            return Ok(h);
        }
    }
    Err(Error::IterationCap { sweeps: SWEEP_CAP, residual })
}

/// One way a score table fails to be consistent with the chain it induces.
#[derive(Clone, Debug, PartialEq)]
pub enum Inconsistency {
    LengthMismatch { expected: usize, got: usize },
    OptimalScoreNonzero { score: Score },
    SettleOrderStart { first: Option<u32> },
    SettleOrderEntry { position: usize, program: u32 },
    SettleOrderDecreasing { position: usize },
    SettledInfinite { program: usize },
    UnsettledFinite { program: usize },
    FiniteScoreUnreachable { program: usize, score: f64 },
    FixedPointMismatch { program: usize, score: f64, hitting: f64 },
    OrderMismatch { lower: usize, higher: usize },
    OracleFailure { msg: String },
}

impl std::fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use Inconsistency::*;
        match self {
            LengthMismatch { expected, got } => {
                write!(f, "score table covers {got} programs, the space has {expected}")
            }
            OptimalScoreNonzero { score } => {
                write!(f, "optimal program scored {score}, expected 0")
            }
            SettleOrderStart { first } => match first {
                Some(p) => write!(f, "settle order starts at {p}, expected the optimal program"),
                None => write!(f, "settle order is empty"),
            },
            SettleOrderEntry { position, program } => {
                write!(f, "settle order position {position}: invalid or repeated program {program}")
            }
            SettleOrderDecreasing { position } => {
                write!(f, "scores decrease along the settle order at position {position}")
            }
            SettledInfinite { program } => {
                write!(f, "program {program} is in the settle order but scored infinity")
            }
            UnsettledFinite { program } => {
                write!(f, "program {program} has a finite score but is absent from the settle order")
            }
            FiniteScoreUnreachable { program, score } => {
                write!(f, "program {program} scored {score} but cannot reach the optimal program")
            }
            FixedPointMismatch { program, score, hitting } => {
                write!(
                    f,
                    "program {program} scored {score} but its expected steps are {hitting}"
                )
            }
            OrderMismatch { lower, higher } => {
                write!(
                    f,
                    "program {lower} scores below {higher} but needs more expected steps"
                )
            }
            OracleFailure { msg } => write!(f, "hitting-time oracle failed: {msg}"),
        }
    }
}

/// Result of [`check_consistency`]; empty means consistent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConsistencyReport {
    pub violations: Vec<Inconsistency>,
}

impl ConsistencyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
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

/// Rebuild the final chain, run the exact oracle, and verify that the table
/// is a fixed point (finite scores equal expected steps within
/// [`CONSISTENCY_RTOL`]), that score order agrees with hitting-time order up
/// to ties at the same tolerance, and that the settle order is coherent and
/// nondecreasing.
pub fn check_consistency(space: &ProgramSpace, table: &ScoreTable) -> ConsistencyReport {
    let mut violations = Vec::new();
    if table.n() != space.n() {
        violations.push(Inconsistency::LengthMismatch {
            expected: space.n(),
            got: table.n(),
        });
        return ConsistencyReport { violations };
    }
    let n = space.n();

    // Structural checks on the table itself.
    if table.score(space.optimal()) != Score::ZERO {
        violations.push(Inconsistency::OptimalScoreNonzero {
            score: table.score(space.optimal()),
        });
    }
    let order = table.settle_order();
    if order.first() != Some(&(space.optimal() as u32)) {
        violations.push(Inconsistency::SettleOrderStart {
            first: order.first().copied(),
        });
    }
    let mut settled = vec![false; n];
    let mut prev = Score::ZERO;
    for (position, &p) in order.iter().enumerate() {
        if p as usize >= n || settled[p as usize] {
            violations.push(Inconsistency::SettleOrderEntry { position, program: p });
            continue;
        }
        settled[p as usize] = true;
        match table.score(p as usize) {
            Score::Infinite => {
                violations.push(Inconsistency::SettledInfinite { program: p as usize })
            }
            s => {
                if s < prev {
                    violations.push(Inconsistency::SettleOrderDecreasing { position });
                }
                prev = s;
            }
        }
    }
    for (i, &was_settled) in settled.iter().enumerate() {
        if !was_settled && table.score(i).is_finite() {
            violations.push(Inconsistency::UnsettledFinite { program: i });
        }
    }

    // Oracle comparison on the induced chain.
    let chain = match build_transition(space, table) {
        Ok(c) => c,
        Err(e) => {
            violations.push(Inconsistency::OracleFailure { msg: e.to_string() });
            return ConsistencyReport { violations };
        }
    };
    let hitting = match hitting_times_exact(&chain, space.optimal()) {
        Ok(h) => h,
        Err(e) => {
            violations.push(Inconsistency::OracleFailure { msg: e.to_string() });
            return ConsistencyReport { violations };
        }
    };

    for (i, &h) in hitting.iter().enumerate() {
        if let Score::Finite(s) = table.score(i) {
            match h {
                Score::Finite(h) => {
                    // h >= 1 for every non-optimal state, so relative to h
                    // with an absolute floor of 1.
                    if (s - h).abs() > CONSISTENCY_RTOL * h.max(1.0) {
                        violations.push(Inconsistency::FixedPointMismatch {
                            program: i,
                            score: s,
                            hitting: h,
                        });
                    }
                }
                Score::Infinite => {
                    violations.push(Inconsistency::FiniteScoreUnreachable { program: i, score: s })
                }
            }
        }
    }

    // Sorting by score must sort by exact hitting time, ties allowed.
    let mut by_score: Vec<u32> = (0..n as u32).collect();
    by_score.sort_unstable_by(|&p, &q| {
        table
            .score(p as usize)
            .cmp(&table.score(q as usize))
            .then_with(|| p.cmp(&q))
    });
    let mut running_max: Option<(usize, f64)> = None;
    for &p in &by_score {
        match hitting[p as usize] {
            Score::Infinite => {} // greatest possible; never violates order
            Score::Finite(h) => {
                if let Some((argmax, max_h)) = running_max {
                    if h < max_h - CONSISTENCY_RTOL * max_h.max(1.0) {
                        violations.push(Inconsistency::OrderMismatch {
                            lower: p as usize,
                            higher: argmax,
                        });
                    }
                }
                if running_max.is_none_or(|(_, max_h)| h > max_h) {
                    running_max = Some((p as usize, h));
                }
            }
        }
    }

    ConsistencyReport { violations }
}
