//! Numerical solvers and a verification harness for backward stochastic
//! differential equations with jumps.
//!
//! The driving noise is a `d`-dimensional Brownian motion together with an
//! independent, finite-activity Poisson random measure on a finite mark set.
//! Solutions `(Y, Z, V)` of
//!
//! ```text
//! Y_t = ξ + ∫_t^T f(s, Y_s, Z_s, V_s) ds − ∫_t^T Z_s dB_s − ∫_t^T ∫_U V_s(e) μ̃(ds, de)
//! ```
//!
//! are computed either exactly on a recombining scenario lattice (the oracle)
//! or by least-squares Monte Carlo regression, optionally wrapped in a Picard
//! iteration with contraction monitoring, horizon subdivision and a truncation
//! ladder for merely integrable data.
//!
//! Parallel loops go through [`par`]; disabling the default `parallel` feature
//! gives a purely sequential build with bit-identical results.

pub mod cli;
pub mod error;
pub mod estimates;
pub mod generators;
pub mod integrals;
pub mod norms;
pub mod par;
pub mod randomness;
pub mod solver;

pub use error::{Error, Result};
pub use generators::{BsdeProblem, GeneratorSpec, TerminalSpec};
pub use randomness::{MarkSpace, PathBatch, PathSample, ScenarioTree, TimeGrid};
pub use solver::{Solution, SolveMethod};
