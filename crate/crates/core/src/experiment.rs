//! Scaling experiments: the instance-size sweep with ordinary least-squares
//! fits, and the fixed-instance trajectory ensemble. Emits plot-ready CSV
//! and a machine-readable fit summary.
//!
//! Every cell of a sweep and every run of an ensemble derives its own seed
//! from the master seed and its ordinal, so results are a pure function of
//! the configuration regardless of worker-thread count.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{generate_random_instance, GenConfig, WeightLaw};
use crate::rng::{derive_seed, RNG_ALGORITHM};
use crate::scorer::{consistent_scores, rank_of};
use crate::simulator::{ensemble_detailed, geometric_checkpoints, EnsembleStats, RunOutcome};

/// Largest sweep exponent that runs without `allow_large`; above it the
/// per-instance memory estimate must be acknowledged explicitly.
pub const SWEEP_GATE_L: u32 = 14;

/// One sweep datapoint: the scored start program of one generated instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub l: u32,
    pub n: u64,
    pub repeat: u32,
    pub instance_seed: u64,
    pub start_score: f64,
    pub start_rank: u32,
}

/// Ordinary least-squares line fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Standard least squares of `ys` on `xs`. `r_squared = 1 - SS_res/SS_tot`;
/// for constant data (`SS_tot = 0`) it is 1 when the residuals vanish and 0
/// otherwise.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::FitLengthMismatch { xs: xs.len(), ys: ys.len() });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = n as f64;
    let x_mean = xs.iter().sum::<f64>() / nf;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(FitResult { slope, intercept, r_squared, n_points: n })
}

/// Sweep configuration. Cell (l, repeat) gets the derived instance seed of
/// ordinal `(l - l_min) * repeats + repeat`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub l_min: u32,
    pub l_max: u32,
    pub repeats: u32,
    pub seed: u64,
    pub support_min: u32,
    pub support_max: u32,
    pub weight_law: WeightLaw,
    /// Acknowledge the memory estimate and run past [`SWEEP_GATE_L`].
    pub allow_large: bool,
}

impl SweepConfig {
    pub fn new(l_min: u32, l_max: u32, repeats: u32, seed: u64) -> Self {
        Self {
            l_min,
            l_max,
            repeats,
            seed,
            support_min: 10,
            support_max: 100,
            weight_law: WeightLaw::default(),
            allow_large: false,
        }
    }
}

/// Sweep output: all records plus all four fits (per-l means and raw
/// scatter, for both the steps-vs-l and the rank-vs-n trends).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub records: Vec<ExperimentRecord>,
    pub steps_vs_l: FitResult,
    pub rank_vs_n: FitResult,
    pub steps_vs_l_scatter: FitResult,
    pub rank_vs_n_scatter: FitResult,
    pub gen_seconds: f64,
    pub score_seconds: f64,
}

/// Rough peak bytes needed to generate and score one instance at 2^l:
/// forward rows, reverse adjacency, queue entries, and per-program state.
pub fn sweep_memory_estimate_bytes(l: u32, support_max: u32) -> u64 {
    let n = 1u64 << l.min(63);
    let avg_support = (10 + support_max as u64) / 2;
    n * (avg_support * 40 + 64)
}

/// Generate and score one instance per (l, repeat) cell, then fit the
/// scaling trends. Cells run in parallel; outputs are ordered by (l, repeat)
/// and independent of scheduling.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.l_min < 1 || cfg.l_min > cfg.l_max {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= l_min <= l_max, got {}..{}",
            cfg.l_min, cfg.l_max
        )));
    }
    if cfg.repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    if cfg.l_max > SWEEP_GATE_L && !cfg.allow_large {
        let estimate_mib =
            sweep_memory_estimate_bytes(cfg.l_max, cfg.support_max) / (1024 * 1024);
        return Err(Error::LargeSweepGated { l_max: cfg.l_max, estimate_mib });
    }

    let cells: Vec<(u32, u32)> = (cfg.l_min..=cfg.l_max)
        .flat_map(|l| (0..cfg.repeats).map(move |r| (l, r)))
        .collect();

    struct Cell {
        record: ExperimentRecord,
        gen_seconds: f64,
        score_seconds: f64,
    }

    let outputs: Vec<Cell> = cells
        .par_iter()
        .map(|&(l, repeat)| -> Result<Cell> {
            let ordinal = (l - cfg.l_min) as u64 * cfg.repeats as u64 + repeat as u64;
            let instance_seed = derive_seed(cfg.seed, ordinal);
            let gcfg = GenConfig {
                l,
                support_min: cfg.support_min,
                support_max: cfg.support_max,
                seed: instance_seed,
                weight_law: cfg.weight_law,
            };
            let t0 = Instant::now();
            let space = generate_random_instance(&gcfg)?;
            let t1 = Instant::now();
            let table = consistent_scores(&space)?;
            let t2 = Instant::now();
            // Program 0 generates every program, the optimal included, so
            // its score is always finite.
            let start_score = table
                .score(0)
                .finite()
                .ok_or(Error::InfiniteStartScore { start: 0 })?;
            let start_rank = rank_of(&table, 0)?.get();
            Ok(Cell {
                record: ExperimentRecord {
                    l,
                    n: 1u64 << l,
                    repeat,
                    instance_seed,
                    start_score,
                    start_rank,
                },
                gen_seconds: (t1 - t0).as_secs_f64(),
                score_seconds: (t2 - t1).as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;

    let records: Vec<ExperimentRecord> = outputs.iter().map(|c| c.record).collect();
    let gen_seconds = outputs.iter().map(|c| c.gen_seconds).sum();
    let score_seconds = outputs.iter().map(|c| c.score_seconds).sum();

    // Per-l means, in l order (records are ordered by construction).
    let mut mean_l = Vec::new();
    let mut mean_n = Vec::new();
    let mut mean_score = Vec::new();
    let mut mean_rank = Vec::new();
    for l in cfg.l_min..=cfg.l_max {
        let group: Vec<&ExperimentRecord> = records.iter().filter(|r| r.l == l).collect();
        let k = group.len() as f64;
        mean_l.push(l as f64);
        mean_n.push((1u64 << l) as f64);
        mean_score.push(group.iter().map(|r| r.start_score).sum::<f64>() / k);
        mean_rank.push(group.iter().map(|r| r.start_rank as f64).sum::<f64>() / k);
    }

    let xs_l: Vec<f64> = records.iter().map(|r| r.l as f64).collect();
    let xs_n: Vec<f64> = records.iter().map(|r| r.n as f64).collect();
    let ys_score: Vec<f64> = records.iter().map(|r| r.start_score).collect();
    let ys_rank: Vec<f64> = records.iter().map(|r| r.start_rank as f64).collect();

    // A single-l sweep has no trend to fit; report a degenerate flat fit
    // rather than failing the whole sweep.
    let flat = |ys: &[f64]| FitResult {
        slope: 0.0,
        intercept: ys.iter().sum::<f64>() / ys.len() as f64,
        r_squared: 0.0,
        n_points: ys.len(),
    };
    let fit_or_flat = |xs: &[f64], ys: &[f64]| match ols_fit(xs, ys) {
        Ok(fit) => Ok(fit),
        Err(Error::DegenerateFit) | Err(Error::TooFewPoints(_)) => Ok(flat(ys)),
        Err(e) => Err(e),
    };

    Ok(SweepReport {
        config: *cfg,
        steps_vs_l: fit_or_flat(&mean_l, &mean_score)?,
        rank_vs_n: fit_or_flat(&mean_n, &mean_rank)?,
        steps_vs_l_scatter: fit_or_flat(&xs_l, &ys_score)?,
        rank_vs_n_scatter: fit_or_flat(&xs_n, &ys_rank)?,
        records,
        gen_seconds,
        score_seconds,
    })
}

/// Trajectory-ensemble experiment configuration: one instance at 2^l, `runs`
/// walks from program 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub l: u32,
    pub runs: u32,
    pub seed: u64,
    pub support_min: u32,
    pub support_max: u32,
    pub weight_law: WeightLaw,
    pub max_steps: u64,
}

impl EnsembleConfig {
    pub fn new(l: u32, runs: u32, seed: u64) -> Self {
        Self {
            l,
            runs,
            seed,
            support_min: 10,
            support_max: 100,
            weight_law: WeightLaw::default(),
            max_steps: crate::simulator::DEFAULT_MAX_STEPS,
        }
    }
}

/// Output of [`trajectory_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleReport {
    pub config: EnsembleConfig,
    pub instance_seed: u64,
    pub start_rank: u32,
    pub start_score: f64,
    pub stats: EnsembleStats,
    pub runs: Vec<RunOutcome>,
    pub score_seconds: f64,
    pub sim_seconds: f64,
}

/// Generate one instance, score it, and run the ensemble from program 0 on
/// the geometric checkpoint schedule. The instance seed derives from
/// (master, 0) and the run seeds from (master, 1), so the whole experiment
/// is a pure function of its configuration.
pub fn trajectory_experiment(cfg: &EnsembleConfig) -> Result<EnsembleReport> {
    let instance_seed = derive_seed(cfg.seed, 0);
    let runs_seed = derive_seed(cfg.seed, 1);
    let gcfg = GenConfig {
        l: cfg.l,
        support_min: cfg.support_min,
        support_max: cfg.support_max,
        seed: instance_seed,
        weight_law: cfg.weight_law,
    };
    let space = generate_random_instance(&gcfg)?;
    let t0 = Instant::now();
    let table = consistent_scores(&space)?;
    let t1 = Instant::now();
    let checkpoints = geometric_checkpoints(cfg.max_steps);
    let (stats, runs) = ensemble_detailed(&space, &table, 0, cfg.runs, &checkpoints, runs_seed)?;
    let t2 = Instant::now();
    Ok(EnsembleReport {
        config: *cfg,
        instance_seed,
        start_rank: rank_of(&table, 0)?.get(),
        start_score: table
            .score(0)
            .finite()
            .ok_or(Error::InfiniteStartScore { start: 0 })?,
        stats,
        runs,
        score_seconds: (t1 - t0).as_secs_f64(),
        sim_seconds: (t2 - t1).as_secs_f64(),
    })
}

/// Fit `ln(mean_rank)` against the step count over the pre-absorption range
/// (checkpoints before any run has absorbed). A clearly negative slope with
/// high `r_squared` is the testable form of "ranks improve exponentially".
pub fn pre_absorption_decay_fit(stats: &EnsembleStats) -> Result<FitResult> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..stats.checkpoints.len() {
        if stats.absorbed_count[i] > 0 {
            break;
        }
        xs.push(stats.checkpoints[i] as f64);
        ys.push(stats.mean_rank[i].ln());
    }
    ols_fit(&xs, &ys)
}

/// JSON metadata embedded in CSV outputs: the configuration, seed, and RNG
/// name. Never contains timings or host details, so identical configurations
/// produce byte-identical files.
pub fn meta_json<C: Serialize>(kind: &str, config: &C) -> String {
    serde_json::json!({
        "kind": kind,
        "rng": RNG_ALGORITHM,
        "config": config,
    })
    .to_string()
}

/// Sweep records as CSV: `l,n,repeat,instance_seed,start_score,start_rank`.
pub fn write_sweep_csv<W: Write>(report: &SweepReport, mut w: W) -> io::Result<()> {
    writeln!(w, "# {}", meta_json("sweep", &report.config))?;
    writeln!(w, "l,n,repeat,instance_seed,start_score,start_rank")?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.l, r.n, r.repeat, r.instance_seed, r.start_score, r.start_rank
        )?;
    }
    Ok(())
}

/// Fit summary as JSON: both trends, their scatter variants, and the full
/// configuration.
pub fn write_fit_summary_json<W: Write>(report: &SweepReport, w: W) -> io::Result<()> {
    let value = serde_json::json!({
        "steps_vs_l": report.steps_vs_l,
        "rank_vs_n": report.rank_vs_n,
        "steps_vs_l_scatter": report.steps_vs_l_scatter,
        "rank_vs_n_scatter": report.rank_vs_n_scatter,
        "config": {
            "kind": "sweep",
            "rng": RNG_ALGORITHM,
            "config": report.config,
        },
    });
    serde_json::to_writer_pretty(w, &value).map_err(io::Error::from)
}

/// Run-level ensemble CSV: `run_index,steps_to_absorption,truncated_flag`.
pub fn write_runs_csv<W: Write>(report: &EnsembleReport, mut w: W) -> io::Result<()> {
    writeln!(w, "# {}", meta_json("ensemble-runs", &report.config))?;
    writeln!(w, "run_index,steps_to_absorption,truncated_flag")?;
    for r in &report.runs {
        writeln!(
            w,
            "{},{},{}",
            r.run_index,
            r.steps_to_absorption,
            u8::from(r.truncated)
        )?;
    }
    Ok(())
}
