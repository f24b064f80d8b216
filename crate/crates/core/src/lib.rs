//! A model of recursive self-improvement over a finite program space.
//!
//! A "program" here is abstract: an index into a finite set together with a
//! fixed probability distribution over that same set — the programs it tends
//! to generate. One program is designated optimal. The improvement process
//! repeatedly generates a candidate from the current program's distribution
//! and adopts it iff it scores strictly better, which makes the process an
//! absorbing Markov chain once a score function is fixed.
//!
//! The crate provides:
//!
//! * [`instance`] — the program-space data model, validation, a worked
//!   four-program example, a seeded random-instance generator, and file I/O;
//! * [`scorer`] — construction of the consistent score function (expected
//!   steps to reach the optimal program), settled in nondecreasing order
//!   with a Dijkstra-style priority queue;
//! * [`chain`] — materialization of the chain a score table induces, plus an
//!   exact expected-hitting-time solver used as an independent oracle;
//! * [`simulator`] — forward simulation of the generate/accept process and
//!   ensemble statistics across runs;
//! * [`experiment`] — the instance-size sweep with least-squares fits and
//!   the fixed-instance trajectory ensemble, with CSV/JSON emitters.

pub mod chain;
pub mod error;
pub mod experiment;
pub mod instance;
pub mod rng;
pub mod scorer;
pub mod simulator;

pub use error::{Error, Result};
pub use instance::{GenConfig, ProgramSpace, WeightLaw};
pub use scorer::{Score, ScoreTable};
