//! Forward simulation of the generate/accept process under a fixed score
//! table, plus ensemble statistics across independent runs.
//!
//! One step is one generation event, accepted or not: a rejected candidate
//! costs a step, which is what makes Monte Carlo step counts comparable to
//! the scorer's expected-steps values (the induced chain's self-loops are
//! exactly the rejections).

use std::io::{self, Write};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::ProgramSpace;
use crate::rng::{derive_seed, stream_rng};
use crate::scorer::{ranks, ScoreTable};

/// Fallback step budget when no finite score bounds the walk.
pub const DEFAULT_MAX_STEPS: u64 = 100_000;

/// One run of the improvement process.
///
/// `visited[0]` is the start program and each later entry is the current
/// program after one more generation event, so scores along `visited` are
/// strictly decreasing at every change point and constant otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub visited: Vec<u32>,
    /// `None` when the walk hit its step budget without absorbing.
    pub steps_to_absorption: Option<u64>,
    pub seed: u64,
}

/// Monte Carlo estimate of the expected steps to absorption.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepsEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub runs: u32,
    /// Runs that hit the step budget; they are counted at `max_steps`, never
    /// dropped.
    pub truncated: u32,
    pub max_steps: u64,
}

/// Per-checkpoint rank statistics over an ensemble of runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub checkpoints: Vec<u64>,
    pub mean_rank: Vec<f64>,
    pub std_rank: Vec<f64>,
    pub min_rank: Vec<u32>,
    pub max_rank: Vec<u32>,
    pub absorbed_count: Vec<u32>,
}

/// Outcome of one run within an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunOutcome {
    pub run_index: u32,
    /// Steps until absorption, or the final checkpoint when truncated.
    pub steps_to_absorption: u64,
    pub truncated: bool,
    pub seed: u64,
}

/// Sampler for one program's generation distribution.
fn make_sampler(space: &ProgramSpace, program: usize) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(space.row(program).weights.iter().copied())
        .map_err(|_| Error::DegenerateRow { row: program })
}

/// The walking core shared by every simulation entry point.
struct Walker<'a> {
    space: &'a ProgramSpace,
    table: &'a ScoreTable,
    current: usize,
    rng: ChaCha8Rng,
    sampler: Option<Arc<WeightedIndex<f64>>>,
}

impl<'a> Walker<'a> {
    fn new(
        space: &'a ProgramSpace,
        table: &'a ScoreTable,
        start: usize,
        seed: u64,
        start_sampler: Option<Arc<WeightedIndex<f64>>>,
    ) -> Self {
        Self {
            space,
            table,
            current: start,
            rng: stream_rng(seed),
            sampler: start_sampler,
        }
    }

    /// One generation event; returns the current program after it.
    fn step(&mut self) -> Result<usize> {
        let sampler = match &self.sampler {
            Some(s) => s,
            None => {
                self.sampler = Some(Arc::new(make_sampler(self.space, self.current)?));
                self.sampler.as_ref().unwrap()
            }
        };
        let pos = sampler.sample(&mut self.rng);
        let candidate = self.space.row(self.current).support[pos] as usize;
        if self
            .table
            .score(candidate)
            .improves_on(self.table.score(self.current))
        {
            self.current = candidate;
            self.sampler = None;
        }
        Ok(self.current)
    }
}

fn check_run_inputs(space: &ProgramSpace, table: &ScoreTable, start: usize) -> Result<()> {
    if table.n() != space.n() {
        return Err(Error::LengthMismatch {
            expected: space.n(),
            got: table.n(),
        });
    }
    if start >= space.n() {
        return Err(Error::IndexOutOfRange {
            index: start,
            n: space.n(),
        });
    }
    Ok(())
}

/// Run the improvement process from `start`: sample a candidate from the
/// current program's distribution, move iff it scores strictly better, stop
/// at absorption into the optimal program or after `max_steps` generations.
pub fn run_rsi(
    space: &ProgramSpace,
    table: &ScoreTable,
    start: usize,
    seed: u64,
    max_steps: u64,
) -> Result<Trajectory> {
    check_run_inputs(space, table, start)?;
    let optimal = space.optimal();
    let mut visited = vec![start as u32];
    if start == optimal {
        return Ok(Trajectory { visited, steps_to_absorption: Some(0), seed });
    }
    let mut walker = Walker::new(space, table, start, seed, None);
    for step in 1..=max_steps {
        let current = walker.step()?;
        visited.push(current as u32);
        if current == optimal {
            return Ok(Trajectory { visited, steps_to_absorption: Some(step), seed });
        }
    }
    Ok(Trajectory { visited, steps_to_absorption: None, seed })
}

/// Deterministic replay of a given candidate sequence under the accept
/// rule; used by tests and the worked-example narrative. Stops early at
/// absorption.
pub fn replay(
    space: &ProgramSpace,
    table: &ScoreTable,
    start: usize,
    candidates: &[u32],
) -> Result<Trajectory> {
    check_run_inputs(space, table, start)?;
    for &c in candidates {
        if c as usize >= space.n() {
            return Err(Error::IndexOutOfRange { index: c as usize, n: space.n() });
        }
    }
    let optimal = space.optimal();
    let mut visited = vec![start as u32];
    let mut current = start;
    let mut steps_to_absorption = if start == optimal { Some(0) } else { None };
    if steps_to_absorption.is_none() {
        for (i, &c) in candidates.iter().enumerate() {
            if table.score(c as usize).improves_on(table.score(current)) {
                current = c as usize;
            }
            visited.push(current as u32);
            if current == optimal {
                steps_to_absorption = Some(i as u64 + 1);
                break;
            }
        }
    }
    Ok(Trajectory { visited, steps_to_absorption, seed: 0 })
}

/// Monte Carlo estimate of the expected steps to absorption from `start`,
/// over `runs` independent trajectories with per-run seeds derived from
/// `seed`. The step budget defaults to `100 * score(start)` (so truncation
/// probability is at most 1% by Markov's inequality); pass `max_steps` to
/// override it.
pub fn estimate_mean_steps(
    space: &ProgramSpace,
    table: &ScoreTable,
    start: usize,
    runs: u32,
    seed: u64,
    max_steps: Option<u64>,
) -> Result<StepsEstimate> {
    check_run_inputs(space, table, start)?;
    if runs < 2 {
        return Err(Error::TooFewRuns { need: 2, got: runs });
    }
    let start_score = table
        .score(start)
        .finite()
        .ok_or(Error::InfiniteStartScore { start })?;
    let max_steps = max_steps.unwrap_or_else(|| ((100.0 * start_score).ceil() as u64).max(1));
    let optimal = space.optimal();
    let shared = if start == optimal {
        None
    } else {
        Some(Arc::new(make_sampler(space, start)?))
    };

    let counts: Vec<(u64, bool)> = (0..runs)
        .into_par_iter()
        .map(|r| -> Result<(u64, bool)> {
            if start == optimal {
                return Ok((0, false));
            }
            let run_seed = derive_seed(seed, r as u64);
            let mut walker = Walker::new(space, table, start, run_seed, shared.clone());
            for step in 1..=max_steps {
                if walker.step()? == optimal {
                    return Ok((step, false));
                }
            }
            Ok((max_steps, true))
        })
        .collect::<Result<_>>()?;

    let n = runs as f64;
    let mean = counts.iter().map(|&(s, _)| s as f64).sum::<f64>() / n;
    let var = counts
        .iter()
        .map(|&(s, _)| {
            let d = s as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    let truncated = counts.iter().filter(|&&(_, t)| t).count() as u32;
    Ok(StepsEstimate {
        mean,
        std_error: (var / n).sqrt(),
        runs,
        truncated,
        max_steps,
    })
}

/// Rank statistics at each checkpoint over `runs` independent trajectories;
/// absorbed runs stay at the optimal program, contributing rank 1 from their
/// absorption step onward.
pub fn ensemble(
    space: &ProgramSpace,
    table: &ScoreTable,
    start: usize,
    runs: u32,
    checkpoints: &[u64],
    seed: u64,
) -> Result<EnsembleStats> {
    ensemble_detailed(space, table, start, runs, checkpoints, seed).map(|(stats, _)| stats)
}

/// Like [`ensemble`], also returning the per-run outcomes (used for the
/// run-level CSV).
pub fn ensemble_detailed(
    space: &ProgramSpace,
    table: &ScoreTable,
    start: usize,
    runs: u32,
    checkpoints: &[u64],
    seed: u64,
) -> Result<(EnsembleStats, Vec<RunOutcome>)> {
    check_run_inputs(space, table, start)?;
    if runs < 1 {
        return Err(Error::TooFewRuns { need: 1, got: runs });
    }
    if checkpoints.is_empty() || !checkpoints.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::BadCheckpoints);
    }
    let rank_table: Vec<u32> = ranks(table).iter().map(|r| r.get()).collect();
    let optimal = space.optimal();
    debug_assert_eq!(rank_table[optimal], 1);
    let last = *checkpoints.last().unwrap();
    let shared = if start == optimal {
        None
    } else {
        Some(Arc::new(make_sampler(space, start)?))
    };

    struct RunResult {
        ranks_at: Vec<u32>,
        absorbed_at: Option<u64>,
        seed: u64,
    }

    let per_run: Vec<RunResult> = (0..runs)
        .into_par_iter()
        .map(|r| -> Result<RunResult> {
            let run_seed = derive_seed(seed, r as u64);
            let mut ranks_at = Vec::with_capacity(checkpoints.len());
            let mut ci = 0;
            if checkpoints[0] == 0 {
                ranks_at.push(rank_table[start]);
                ci = 1;
            }
            let mut absorbed_at = if start == optimal { Some(0) } else { None };
            if absorbed_at.is_none() {
                let mut walker = Walker::new(space, table, start, run_seed, shared.clone());
                for step in 1..=last {
                    if ci >= checkpoints.len() {
                        break;
                    }
                    let current = walker.step()?;
                    if current == optimal {
                        absorbed_at = Some(step);
                    }
                    if step == checkpoints[ci] {
                        ranks_at.push(rank_table[current]);
                        ci += 1;
                    }
                    if absorbed_at.is_some() {
                        break;
                    }
                }
            }
            // Absorption is permanent: later checkpoints see rank 1.
            while ranks_at.len() < checkpoints.len() {
                ranks_at.push(1);
            }
            Ok(RunResult { ranks_at, absorbed_at, seed: run_seed })
        })
        .collect::<Result<_>>()?;

    let n_ck = checkpoints.len();
    let mut stats = EnsembleStats {
        checkpoints: checkpoints.to_vec(),
        mean_rank: Vec::with_capacity(n_ck),
        std_rank: Vec::with_capacity(n_ck),
        min_rank: Vec::with_capacity(n_ck),
        max_rank: Vec::with_capacity(n_ck),
        absorbed_count: Vec::with_capacity(n_ck),
    };
    for (c, &ck) in checkpoints.iter().enumerate() {
        let column = per_run.iter().map(|r| r.ranks_at[c]);
        let mean = column.clone().map(|v| v as f64).sum::<f64>() / runs as f64;
        let std = if runs < 2 {
            0.0
        } else {
            (column
                .clone()
                .map(|v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / (runs as f64 - 1.0))
                .sqrt()
        };
        stats.mean_rank.push(mean);
        stats.std_rank.push(std);
        stats.min_rank.push(column.clone().min().unwrap());
        stats.max_rank.push(column.max().unwrap());
        stats.absorbed_count.push(
            per_run
                .iter()
                .filter(|r| r.absorbed_at.is_some_and(|s| s <= ck))
                .count() as u32,
        );
    }

    let outcomes = per_run
        .iter()
        .enumerate()
        .map(|(i, r)| RunOutcome {
            run_index: i as u32,
            steps_to_absorption: r.absorbed_at.unwrap_or(last),
            truncated: r.absorbed_at.is_none(),
            seed: r.seed,
        })
        .collect();
    Ok((stats, outcomes))
}

/// Default checkpoint schedule: 1, 2, 4, ... capped by and including
/// `max_steps`. Geometric spacing keeps exponential rank decay legible.
pub fn geometric_checkpoints(max_steps: u64) -> Vec<u64> {
    assert!(max_steps >= 1);
    let mut v = Vec::new();
    let mut c = 1u64;
    while c < max_steps {
        v.push(c);
        match c.checked_mul(2) {
            Some(next) => c = next,
            None => break,
        }
    }
    v.push(max_steps);
    v
}

/// Ensemble statistics as CSV, one row per checkpoint. `meta`, when given,
/// is embedded as a leading `#` comment line.
pub fn write_ensemble_csv<W: Write>(
    stats: &EnsembleStats,
    meta: Option<&str>,
    mut w: W,
) -> io::Result<()> {
    if let Some(m) = meta {
        writeln!(w, "# {m}")?;
    }
    writeln!(w, "checkpoint,mean_rank,std_rank,min_rank,max_rank,absorbed_count")?;
    for i in 0..stats.checkpoints.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            stats.checkpoints[i],
            stats.mean_rank[i],
            stats.std_rank[i],
            stats.min_rank[i],
            stats.max_rank[i],
            stats.absorbed_count[i],
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_random_instance, worked_example, GenConfig, ProgramSpace, Row};
    use crate::scorer::{consistent_scores, Score, ScoreTable};

    fn increasing_scores() -> ScoreTable {
        ScoreTable::from_parts(
            vec![
                Score::Finite(1.0),
                Score::Finite(2.0),
                Score::Finite(3.0),
                Score::Finite(4.0),
            ],
            vec![0, 1, 2, 3],
        )
    }

    #[test]
    fn replay_reproduces_the_narrative_walk() {
        // From program 2: candidate 3 is rejected, 1 and then 0 accepted.
        let space = worked_example();
        let table = increasing_scores();
        let traj = replay(&space, &table, 2, &[3, 1, 0]).unwrap();
        assert_eq!(traj.visited, vec![2, 2, 1, 0]);
        assert_eq!(traj.steps_to_absorption, Some(3));
    }

    #[test]
    fn starting_at_the_optimal_costs_nothing() {
        let space = worked_example();
        let table = consistent_scores(&space).unwrap();
        let traj = run_rsi(&space, &table, 0, 9, 100).unwrap();
        assert_eq!(traj.visited, vec![0]);
        assert_eq!(traj.steps_to_absorption, Some(0));
    }

    #[test]
    fn isolated_infinite_start_never_moves() {
        // Programs 1 and 2 only generate each other; both stay infinite.
        let space = ProgramSpace::from_parts(
            3,
            0,
            vec![
                Row { support: vec![0], weights: vec![1.0] },
                Row { support: vec![2], weights: vec![1.0] },
                Row { support: vec![1], weights: vec![1.0] },
            ],
        );
        let table = consistent_scores(&space).unwrap();
        assert_eq!(table.score(1), Score::Infinite);
        let traj = run_rsi(&space, &table, 1, 5, 50).unwrap();
        assert_eq!(traj.steps_to_absorption, None);
        assert!(traj.visited.iter().all(|&p| p == 1));
        assert_eq!(traj.visited.len(), 51);
    }

    #[test]
    fn trajectories_only_ever_improve() {
        let space = generate_random_instance(&GenConfig::new(6, 17)).unwrap();
        let table = consistent_scores(&space).unwrap();
        for seed in 0..20 {
            let traj = run_rsi(&space, &table, 0, seed, 10_000).unwrap();
            for w in traj.visited.windows(2) {
                let (prev, cur) = (w[0] as usize, w[1] as usize);
                if prev != cur {
                    assert!(table.score(cur) < table.score(prev));
                }
            }
            if let Some(steps) = traj.steps_to_absorption {
                assert_eq!(traj.visited[steps as usize] as usize, space.optimal());
                assert!(traj.visited[steps as usize..]
                    .iter()
                    .all(|&p| p as usize == space.optimal()));
            }
        }
    }

    #[test]
    fn deterministic_absorption_estimates_exactly_one_step() {
        let space = ProgramSpace::from_parts(
            2,
            0,
            vec![
                Row { support: vec![0], weights: vec![1.0] },
                Row { support: vec![0], weights: vec![1.0] },
            ],
        );
        let table = consistent_scores(&space).unwrap();
        let est = estimate_mean_steps(&space, &table, 1, 100, 3, None).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.truncated, 0);
    }

    #[test]
    fn estimate_matches_the_worked_example_score() {
        let space = worked_example();
        let table = consistent_scores(&space).unwrap();
        let est = estimate_mean_steps(&space, &table, 1, 100_000, 123, None).unwrap();
        let expected = 4.0 / 3.0;
        assert!(
            (est.mean - expected).abs() <= 3.0 * est.std_error,
            "mean {} vs {} (se {})",
            est.mean,
            expected,
            est.std_error
        );
    }

    #[test]
    fn estimate_matches_the_hand_solved_three_state_system() {
        let space = ProgramSpace::from_parts(
            3,
            0,
            vec![
                Row { support: vec![0], weights: vec![1.0] },
                Row { support: vec![0, 1], weights: vec![0.5, 0.5] },
                Row { support: vec![1, 2], weights: vec![0.5, 0.5] },
            ],
        );
        let table = consistent_scores(&space).unwrap();
        let est = estimate_mean_steps(&space, &table, 2, 100_000, 7, None).unwrap();
        assert!((est.mean - 4.0).abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn estimate_rejects_infinite_starts_and_single_runs() {
        let space = ProgramSpace::from_parts(
            2,
            0,
            vec![
                Row { support: vec![0], weights: vec![1.0] },
                Row { support: vec![1], weights: vec![1.0] },
            ],
        );
        let table = consistent_scores(&space).unwrap();
        assert!(matches!(
            estimate_mean_steps(&space, &table, 1, 100, 3, None),
            Err(Error::InfiniteStartScore { start: 1 })
        ));
        let ok_space = worked_example();
        let ok_table = consistent_scores(&ok_space).unwrap();
        assert!(matches!(
            estimate_mean_steps(&ok_space, &ok_table, 1, 1, 3, None),
            Err(Error::TooFewRuns { .. })
        ));
    }

    #[test]
    fn ensemble_checkpoint_zero_reports_the_start_rank() {
        let space = worked_example();
        let table = consistent_scores(&space).unwrap();
        let stats = ensemble(&space, &table, 2, 50, &[0], 11).unwrap();
        assert_eq!(stats.mean_rank, vec![3.0]);
        assert_eq!(stats.std_rank, vec![0.0]);
        assert_eq!(stats.min_rank, vec![3]);
        assert_eq!(stats.max_rank, vec![3]);
        assert_eq!(stats.absorbed_count, vec![0]);
    }

    #[test]
    fn ensemble_reaches_rank_one_once_everyone_absorbs() {
        let space = worked_example();
        let table = consistent_scores(&space).unwrap();
        let (stats, outcomes) =
            ensemble_detailed(&space, &table, 2, 40, &[1, 2, 4, 8192], 21).unwrap();
        let last = stats.checkpoints.len() - 1;
        assert_eq!(stats.absorbed_count[last], 40);
        assert_eq!(stats.mean_rank[last], 1.0);
        assert_eq!(stats.std_rank[last], 0.0);
        assert!(outcomes.iter().all(|o| !o.truncated));
        // Means never increase and absorption is permanent.
        for w in stats.mean_rank.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for w in stats.absorbed_count.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn ensemble_statistics_are_schedule_independent() {
        let space = generate_random_instance(&GenConfig::new(7, 5)).unwrap();
        let table = consistent_scores(&space).unwrap();
        let checkpoints = geometric_checkpoints(4096);
        let run = || {
            ensemble_detailed(&space, &table, 0, 60, &checkpoints, 99).unwrap()
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(single, multi);
    }

    #[test]
    fn ensemble_validates_checkpoints() {
        let space = worked_example();
        let table = consistent_scores(&space).unwrap();
        assert!(matches!(
            ensemble(&space, &table, 2, 5, &[], 1),
            Err(Error::BadCheckpoints)
        ));
        assert!(matches!(
            ensemble(&space, &table, 2, 5, &[1, 1, 2], 1),
            Err(Error::BadCheckpoints)
        ));
    }

    #[test]
    fn geometric_schedule_doubles_and_ends_at_the_budget() {
        assert_eq!(geometric_checkpoints(1), vec![1]);
        assert_eq!(geometric_checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(geometric_checkpoints(100), vec![1, 2, 4, 8, 16, 32, 64, 100]);
    }

    #[test]
    fn ensemble_csv_has_the_documented_columns() {
        let space = worked_example();
        let table = consistent_scores(&space).unwrap();
        let stats = ensemble(&space, &table, 2, 3, &[0, 1], 2).unwrap();
        let mut buf = Vec::new();
        write_ensemble_csv(&stats, Some(r#"{"runs":3}"#), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(r##"# {"runs":3}"##));
        assert_eq!(
            lines.next(),
            Some("checkpoint,mean_rank,std_rank,min_rank,max_rank,absorbed_count")
        );
        assert_eq!(lines.count(), 2);
    }
}
