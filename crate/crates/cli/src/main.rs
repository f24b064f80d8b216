//! `rsi` — generate program-space instances, build their consistent score
//! functions, check them against the exact hitting-time oracle, simulate the
//! improvement process, and reproduce the scaling experiments.
//!
//! Exit codes: 0 on success, 1 on validation failure, 2 on usage errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rsi_core::chain::{build_transition, check_consistency};
use rsi_core::error::Error;
use rsi_core::experiment::{
    meta_json, pre_absorption_decay_fit, sweep, trajectory_experiment, write_fit_summary_json,
    write_runs_csv, write_sweep_csv, sweep_memory_estimate_bytes, EnsembleConfig, SweepConfig,
    SWEEP_GATE_L,
};
use rsi_core::instance::{
    generate_random_instance, load, save_with_meta, worked_example, GenConfig,
};
use rsi_core::rng::RNG_ALGORITHM;
use rsi_core::scorer::{
    consistent_scores, load_table, rank_of, save_table_with_meta, tentative_values,
};
use rsi_core::simulator::{estimate_mean_steps, replay, write_ensemble_csv};
use rsi_core::{ProgramSpace, ScoreTable, WeightLaw};

#[derive(Parser)]
#[command(
    name = "rsi",
    version,
    about = "Hill-climbing self-improvement over finite program spaces: \
             scoring, simulation, and scaling experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Walk through the built-in four-program example end to end.
    Example,
    /// Generate a random instance file.
    Gen(GenArgs),
    /// Build the consistent score table for an instance file.
    Score(ScoreArgs),
    /// Check a score table against the chain it induces.
    Check(CheckArgs),
    /// Estimate mean steps to absorption by Monte Carlo.
    Simulate(SimulateArgs),
    /// Sweep instance sizes and fit the scaling trends.
    Sweep(SweepArgs),
    /// Run a trajectory ensemble on one generated instance.
    Ensemble(EnsembleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightLawArg {
    FlatDirichlet,
    NormalizedUniform,
}

impl From<WeightLawArg> for WeightLaw {
    fn from(v: WeightLawArg) -> Self {
        match v {
            WeightLawArg::FlatDirichlet => WeightLaw::FlatDirichlet,
            WeightLawArg::NormalizedUniform => WeightLaw::NormalizedUniform,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct GenOptions {
    /// Smallest support size drawn for rows past the first.
    #[arg(long, default_value_t = 10)]
    support_min: u32,
    /// Largest support size drawn for rows past the first.
    #[arg(long, default_value_t = 100)]
    support_max: u32,
    /// Distribution of weights over a drawn support.
    #[arg(long, value_enum, default_value_t = WeightLawArg::FlatDirichlet)]
    weight_law: WeightLawArg,
}

#[derive(Args)]
struct GenArgs {
    /// Instance size exponent; n = 2^l.
    #[arg(long)]
    l: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    gen: GenOptions,
    /// Output directory for instance.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Instance file to score.
    #[arg(long)]
    instance: PathBuf,
    /// Output directory for scores.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Also dump the induced chain as a CSV edge list.
    #[arg(long)]
    dump_chain: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Program the walks start from.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 10_000)]
    runs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step budget per run; defaults to 100x the start program's score.
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 1)]
    l_min: u32,
    #[arg(long, default_value_t = SWEEP_GATE_L)]
    l_max: u32,
    #[arg(long, default_value_t = 10)]
    repeats: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    gen: GenOptions,
    /// Acknowledge the printed memory estimate and sweep past l = 14.
    #[arg(long)]
    allow_large: bool,
    /// Also print the fits over the raw repeat scatter.
    #[arg(long)]
    fit_scatter: bool,
    /// Worker threads (default: all cores). Outputs do not depend on it;
    /// large sweeps hold one instance in memory per worker.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output directory for the records file and fits.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, default_value_t = SWEEP_GATE_L)]
    l: u32,
    #[arg(long, default_value_t = 100)]
    runs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,
    #[command(flatten)]
    gen: GenOptions,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for the ensemble files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::LargeSweepGated { .. } => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.cmd {
        Cmd::Example => cmd_example(),
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Score(args) => cmd_score(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Ensemble(args) => cmd_ensemble(args),
    }
}

/// Run `body` on a dedicated pool when a thread count was requested.
fn with_threads<T: Send>(threads: Option<usize>, body: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match threads {
        None => Ok(body()),
        Some(0) => Err(Failure { code: 2, msg: "--threads must be at least 1".into() }),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Failure { code: 1, msg: e.to_string() })?;
            Ok(pool.install(body))
        }
    }
}

fn print_matrix(dense: &[Vec<f64>]) {
    for row in dense {
        let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        println!("  {}", cells.join(" "));
    }
}

fn cmd_example() -> Result<u8, Failure> {
    let space = worked_example();
    println!("four-program example: n = 4, optimal program = 0");
    println!("generation distributions:");
    for (i, row) in space.rows().iter().enumerate() {
        let entries: Vec<String> = row
            .entries()
            .map(|(j, q)| format!("{j}: {q}"))
            .collect();
        println!("  program {i} -> {{{}}}", entries.join(", "));
    }

    let table = consistent_scores(&space)?;
    for k in 1..=table.settle_order().len() {
        let censored = table.censored(k);
        let settled = censored.settle_order().last().copied().unwrap();
        println!(
            "\nafter settling program {settled} (score {}):",
            censored.score(settled as usize)
        );
        println!("transition matrix:");
        print_matrix(&build_transition(&space, &censored)?.to_dense());
        if k < table.settle_order().len() {
            let tentative = tentative_values(&space, &censored)?;
            let cells: Vec<String> = (0..space.n())
                .map(|i| {
                    if censored.score(i).is_finite() {
                        format!("{i}: settled")
                    } else {
                        format!("{i}: {}", tentative[i])
                    }
                })
                .collect();
            println!("tentative expected steps: {}", cells.join(", "));
        }
    }

    let scores: Vec<String> = table.scores().iter().map(|s| s.to_string()).collect();
    println!("\nfinal scores: {}", scores.join(" "));
    let order: Vec<String> = table.settle_order().iter().map(u32::to_string).collect();
    println!("settle order: {}", order.join(" "));

    let walk = replay(&space, &table, 2, &[3, 1, 0])?;
    let visited: Vec<String> = walk.visited.iter().map(u32::to_string).collect();
    println!(
        "replayed walk from program 2 with candidates 3, 1, 0: visited {} (absorbed after {} steps)",
        visited.join(" "),
        walk.steps_to_absorption.expect("walk absorbs")
    );

    let report = check_consistency(&space, &table);
    println!("consistency check: {report}");
    Ok(if report.ok() { 0 } else { 1 })
}

fn load_pair(instance: &Path, scores: &Path) -> Result<(ProgramSpace, ScoreTable), Failure> {
    let space = load(instance)?;
    let table = load_table(scores)?;
    if table.n() != space.n() {
        return Err(Failure {
            code: 1,
            msg: format!(
                "score table covers {} programs, the instance has {}",
                table.n(),
                space.n()
            ),
        });
    }
    Ok((space, table))
}

fn out_file(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok((path, BufWriter::new(file)))
}

fn cmd_gen(args: GenArgs) -> Result<u8, Failure> {
    let cfg = GenConfig {
        l: args.l,
        support_min: args.gen.support_min,
        support_max: args.gen.support_max,
        seed: args.seed,
        weight_law: args.gen.weight_law.into(),
    };
    let t0 = Instant::now();
    let space = generate_random_instance(&cfg)?;
    let elapsed = t0.elapsed();
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("instance.json");
    let meta = serde_json::json!({"kind": "instance", "rng": RNG_ALGORITHM, "config": cfg});
    save_with_meta(&space, meta, &path)?;
    println!(
        "wrote {} (n = {}, optimal = {}, {} edges) in {elapsed:.2?}",
        path.display(),
        space.n(),
        space.optimal(),
        space.edge_count()
    );
    Ok(0)
}

fn cmd_score(args: ScoreArgs) -> Result<u8, Failure> {
    let space = load(&args.instance)?;
    let t0 = Instant::now();
    let table = consistent_scores(&space)?;
    let elapsed = t0.elapsed();
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("scores.json");
    let meta = serde_json::json!({
        "kind": "scores",
        "instance": args.instance.display().to_string(),
    });
    save_table_with_meta(&table, meta, &path)?;
    let finite = table.settle_order().len();
    println!(
        "wrote {} ({} of {} programs reach the optimal; score construction took {elapsed:.2?})",
        path.display(),
        finite,
        table.n()
    );
    if let Some(score0) = table.score(0).finite() {
        println!(
            "program 0: score {score0}, rank {}",
            rank_of(&table, 0)?.get()
        );
    }
    Ok(0)
}

fn cmd_check(args: CheckArgs) -> Result<u8, Failure> {
    let (space, table) = load_pair(&args.instance, &args.scores)?;
    if let Some(path) = &args.dump_chain {
        let chain = build_transition(&space, &table)?;
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        chain.write_edge_csv(BufWriter::new(file))?;
        println!("wrote chain edge list to {}", path.display());
    }
    let report = check_consistency(&space, &table);
    println!("consistency check: {report}");
    Ok(if report.ok() { 0 } else { 1 })
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let (space, table) = load_pair(&args.instance, &args.scores)?;
    let t0 = Instant::now();
    let est = estimate_mean_steps(
        &space,
        &table,
        args.start,
        args.runs,
        args.seed,
        args.max_steps,
    )?;
    let elapsed = t0.elapsed();
    let score = table.score(args.start);
    println!(
        "start {}: mean steps {} (std error {}, {} runs, {} truncated at {} steps) in {elapsed:.2?}",
        args.start, est.mean, est.std_error, est.runs, est.truncated, est.max_steps
    );
    println!("score of start program: {score}");
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, Failure> {
    let cfg = SweepConfig {
        l_min: args.l_min,
        l_max: args.l_max,
        repeats: args.repeats,
        seed: args.seed,
        support_min: args.gen.support_min,
        support_max: args.gen.support_max,
        weight_law: args.gen.weight_law.into(),
        allow_large: args.allow_large,
    };
    if args.l_max > SWEEP_GATE_L {
        let mib = sweep_memory_estimate_bytes(args.l_max, args.gen.support_max) / (1024 * 1024);
        println!("largest instances need roughly {mib} MiB each");
    }
    let t0 = Instant::now();
    let report = with_threads(args.threads, || sweep(&cfg))??;
    let elapsed = t0.elapsed();

    match args.format {
        Format::Csv => {
            let (path, mut w) = out_file(&args.out, "sweep.csv")?;
            write_sweep_csv(&report, &mut w)?;
            w.flush()?;
            println!("wrote {}", path.display());
        }
        Format::Json => {
            let (path, w) = out_file(&args.out, "sweep.json")?;
            let value = serde_json::json!({
                "config": {"kind": "sweep", "rng": RNG_ALGORITHM, "config": report.config},
                "records": report.records,
            });
            serde_json::to_writer_pretty(w, &value).map_err(|e| Failure {
                code: 1,
                msg: e.to_string(),
            })?;
            println!("wrote {}", path.display());
        }
    }
    let (fits_path, mut w) = out_file(&args.out, "fits.json")?;
    write_fit_summary_json(&report, &mut w)?;
    w.flush()?;
    println!("wrote {}", fits_path.display());

    println!(
        "steps vs l:  slope {:.4}, intercept {:.4}, r^2 {:.6} over {} points",
        report.steps_vs_l.slope,
        report.steps_vs_l.intercept,
        report.steps_vs_l.r_squared,
        report.steps_vs_l.n_points
    );
    println!(
        "rank vs n:   slope {:.6}, intercept {:.4}, r^2 {:.6} over {} points",
        report.rank_vs_n.slope,
        report.rank_vs_n.intercept,
        report.rank_vs_n.r_squared,
        report.rank_vs_n.n_points
    );
    if args.fit_scatter {
        println!(
            "steps vs l (scatter): r^2 {:.6} over {} points",
            report.steps_vs_l_scatter.r_squared, report.steps_vs_l_scatter.n_points
        );
        println!(
            "rank vs n (scatter):  r^2 {:.6} over {} points",
            report.rank_vs_n_scatter.r_squared, report.rank_vs_n_scatter.n_points
        );
    }
    println!(
        "generation {:.2}s, score construction {:.2}s, wall {elapsed:.2?}",
        report.gen_seconds, report.score_seconds
    );
    Ok(0)
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<u8, Failure> {
    let cfg = EnsembleConfig {
        l: args.l,
        runs: args.runs,
        seed: args.seed,
        support_min: args.gen.support_min,
        support_max: args.gen.support_max,
        weight_law: args.gen.weight_law.into(),
        max_steps: args.max_steps,
    };
    let report = with_threads(args.threads, || trajectory_experiment(&cfg))??;

    match args.format {
        Format::Csv => {
            let (stats_path, mut w) = out_file(&args.out, "ensemble_stats.csv")?;
            write_ensemble_csv(&report.stats, Some(&meta_json("ensemble", &report.config)), &mut w)?;
            w.flush()?;
            println!("wrote {}", stats_path.display());
            let (runs_path, mut w) = out_file(&args.out, "ensemble_runs.csv")?;
            write_runs_csv(&report, &mut w)?;
            w.flush()?;
            println!("wrote {}", runs_path.display());
        }
        Format::Json => {
            let (path, w) = out_file(&args.out, "ensemble.json")?;
            let value = serde_json::json!({
                "config": {"kind": "ensemble", "rng": RNG_ALGORITHM, "config": report.config},
                "stats": report.stats,
                "runs": report.runs,
            });
            serde_json::to_writer_pretty(w, &value).map_err(|e| Failure {
                code: 1,
                msg: e.to_string(),
            })?;
            println!("wrote {}", path.display());
        }
    }

    let last = report.stats.checkpoints.len() - 1;
    println!(
        "start program 0: score {}, rank {} of {}",
        report.start_score,
        report.start_rank,
        1u64 << report.config.l
    );
    println!(
        "absorbed {} of {} runs within {} steps",
        report.stats.absorbed_count[last], report.config.runs, report.config.max_steps
    );
    match pre_absorption_decay_fit(&report.stats) {
        Ok(fit) => println!(
            "pre-absorption rank decay: slope {:.4} per step, r^2 {:.4} over {} checkpoints",
            fit.slope, fit.r_squared, fit.n_points
        ),
        Err(_) => println!("pre-absorption range too short for a decay fit"),
    }
    println!(
        "score construction {:.2}s vs simulation {:.2}s",
        report.score_seconds, report.sim_seconds
    );
    Ok(0)
}
