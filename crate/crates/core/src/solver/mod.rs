//! Backward solvers: exact lattice induction, regression Monte Carlo, the
//! Picard iteration with contraction monitoring, horizon subdivision and the
//! truncation ladder.
//!
//! Every step uses the implicit-in-`y` scheme
//! `Y_k = E_k[Y_{k+1}] + f(t_k, Y_k, Z_k, V_k) Δt`, solved by fixed-point
//! iteration, which contracts with factor `κΔt < 1`.

mod ladder;
mod picard;
mod regression;
mod solution;
mod subdivide;
mod tree;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ladder::{truncation_ladder_solve, LadderLevel, LadderPair, LadderReport};
pub use picard::{
    chained_on, chained_solve, picard_on, picard_q, picard_solve, ChainedSolution, Initialization, PicardConfig, PicardTrace,
};
pub use regression::{solve_mc_regression, solve_mc_regression_with, BasisConfig, RankPolicy};
pub use solution::{solution_distance, Backend, Distances, Fields, PathSolution, Solution, ViewConfig};
pub use subdivide::{calibrate_constant, subdivide_horizon, IntervalCertificate, SubdivisionPlan};
pub use tree::{martingale_residual, solve_on_new_tree, solve_tree, solve_tree_with, ResidualReport};

use crate::error::{Error, Result};
use crate::generators::BsdeProblem;
use crate::randomness::{build_scenario_tree, PathBatch, PathSample};

/// Numerical method for conditional expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolveMethod {
    /// Exact induction on the scenario lattice.
    Tree,
    /// Regression on `n_paths` simulated paths.
    Mc { n_paths: usize, seed: u64, basis: BasisConfig },
}

impl SolveMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolveMethod::Tree => "tree",
            SolveMethod::Mc { .. } => "mc",
        }
    }

    /// Builds the lattice or simulates the paths this method works on.
    pub fn prepare(&self, problem: &BsdeProblem) -> Result<Backend> {
        match *self {
            SolveMethod::Tree => {
                Ok(Backend::Tree(Arc::new(build_scenario_tree(problem.grid, &problem.marks, problem.dim)?)))
            }
            SolveMethod::Mc { n_paths, seed, .. } => {
                let batch = PathBatch::simulate(problem.grid, problem.dim, &problem.marks, n_paths, seed)?;
                Ok(Backend::Paths(Arc::new(PathSample::from_batch(batch))))
            }
        }
    }

    pub(crate) fn basis(&self) -> BasisConfig {
        match *self {
            SolveMethod::Tree => BasisConfig::default(),
            SolveMethod::Mc { basis, .. } => basis,
        }
    }
}

/// Direct (non-Picard) solve with the given method.
pub fn solve(problem: &BsdeProblem, method: &SolveMethod) -> Result<Solution> {
    solve_on(problem, &method.prepare(problem)?, &method.basis())
}

/// Direct solve on a prepared lattice or path set.
pub fn solve_on(problem: &BsdeProblem, backend: &Backend, basis: &BasisConfig) -> Result<Solution> {
    match backend {
        Backend::Tree(t) => solve_tree(problem, t.clone()),
        Backend::Paths(s) => solve_mc_regression(problem, s.clone(), basis),
    }
}

/// Stopping rule of the per-step fixed point: stop when successive iterates
/// differ by at most `tol · max(|y|, |E|, |f Δt|)` or not at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig { tol: 1e-15, max_iter: 500 }
    }
}

/// `(z, v)` held fixed inside the generator, indexed like [`Fields`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frozen<'a> {
    pub z: &'a [Vec<f64>],
    pub v: &'a [Vec<f64>],
}

/// Solves `y = e + g(y) Δt`; returns `y` and the generator value that
/// produced it.
pub(crate) fn implicit_step(
    e: f64,
    dt: f64,
    cfg: &InnerConfig,
    step: usize,
    g: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let mut y = e;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let fv = g(y);
        let next = e + fv * dt;
        if !next.is_finite() {
            break;
        }
        let diff = (next - y).abs();
        if diff == 0.0 || diff <= cfg.tol * next.abs().max(e.abs()).max((fv * dt).abs()) {
            return Ok((next, fv));
        }
        residual = diff;
        y = next;
    }
    Err(Error::NotConverged { step, iterations: cfg.max_iter, residual })
}

pub(crate) fn check_step_size(problem: &BsdeProblem) -> Result<()> {
    let (kappa, dt) = (problem.kappa(), problem.grid.dt());
    if kappa * dt >= 1.0 {
        return Err(Error::StepSize { kappa, dt, product: kappa * dt });
    }
    Ok(())
}

/// Solves on `backend` between grid indices `k0 < k1`, starting from
/// per-unit terminal values at `k1`.
pub(crate) fn backward_block(
    problem: &BsdeProblem,
    backend: &Backend,
    basis: &BasisConfig,
    k0: usize,
    k1: usize,
    terminal: Vec<f64>,
    frozen: Option<Frozen<'_>>,
    inner: &InnerConfig,
) -> Result<Fields> {
    match backend {
        Backend::Tree(t) => tree::tree_backward(problem, t, k0, k1, terminal, frozen, inner),
        Backend::Paths(s) => regression::mc_backward(problem, s, basis, k0, k1, terminal, frozen, inner),
    }
}

pub(crate) fn terminal_values(problem: &BsdeProblem, backend: &Backend) -> Result<Vec<f64>> {
    match backend {
        Backend::Tree(t) => {
            tree::check_tree(problem, t)?;
            Ok(tree::leaf_values(problem, t))
        }
        Backend::Paths(s) => {
            regression::check_sample(problem, s)?;
            Ok(regression::path_terminal(problem, s))
        }
    }
}

pub(crate) fn assemble(problem: &BsdeProblem, backend: &Backend, fields: Fields) -> Solution {
    match backend {
        Backend::Tree(t) => tree::tree_solution(problem, t.clone(), fields),
        Backend::Paths(s) => regression::paths_solution(problem, s.clone(), fields),
    }
}
