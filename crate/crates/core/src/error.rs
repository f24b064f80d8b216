//! Crate-wide error type.

use std::path::PathBuf;

use crate::instance::ValidationReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {msg}")]
    BadFile { path: PathBuf, msg: String },

    #[error("invalid program space:\n{0}")]
    InvalidSpace(ValidationReport),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("program index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("score table covers {got} programs, the space has {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("row {row} has no positive generation mass")]
    DegenerateRow { row: usize },

    #[error("start program {start} has infinite score")]
    InfiniteStartScore { start: usize },

    #[error("target state {target} is not the absorbing state {absorbing}")]
    TargetMismatch { target: usize, absorbing: usize },

    #[error("hitting-time system is singular (internal error)")]
    SingularSystem,

    #[error("hitting-time sweep still at residual {residual:e} after {sweeps} sweeps")]
    IterationCap { sweeps: usize, residual: f64 },

    #[error("least-squares fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("least-squares fit needs {xs} x values and {ys} y values to match")]
    FitLengthMismatch { xs: usize, ys: usize },

    #[error("least-squares fit is degenerate: all x values are equal")]
    DegenerateFit,

    #[error("checkpoints must be a nonempty strictly increasing sequence")]
    BadCheckpoints,

    #[error("need at least {need} runs, got {got}")]
    TooFewRuns { need: u32, got: u32 },

    #[error(
        "a sweep up to l = {l_max} needs roughly {estimate_mib} MiB per instance; \
         enable allow_large to proceed"
    )]
    LargeSweepGated { l_max: u32, estimate_mib: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
