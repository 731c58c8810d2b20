use serde::Serialize;

use super::solution::{Backend, Solution, ViewConfig};
use super::{solve_on, SolveMethod};
use crate::error::{Error, Result};
use crate::generators::{truncate_problem, BsdeProblem, StateView};
use crate::norms::{ProcessSample, StoppingFamily};
use crate::par;
use crate::randomness::PathSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderLevel {
    pub n: f64,
    pub y0: f64,
    pub y0_se: f64,
}

/// Comparison of the solutions truncated at `n` and `n_next`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderPair {
    pub n: f64,
    pub n_next: f64,
    /// Class-𝔻 distance `max_τ 𝔼|Y^n_τ − Y^{n'}_τ|` over the default family.
    pub distance: f64,
    pub distance_se: f64,
    /// `𝔼[|ξ|1{|ξ|>n} + Σ_j |f(t_j,0)|1{|f(t_j,0)|>n} Δt]`.
    pub bound: f64,
    pub bound_se: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderReport {
    pub levels: Vec<LadderLevel>,
    pub pairs: Vec<LadderPair>,
    pub tol: f64,
    /// Whether the last consecutive pair is within `tol` in both distance
    /// and bound.
    pub cauchy: bool,
}

/// Solves the problem truncated at each level of `levels` on one shared
/// lattice or path set and compares every pair of levels.
///
/// `within_bound` allows three standard errors of slack plus a relative
/// `1e-9` for rounding.
pub fn truncation_ladder_solve(
    problem: &BsdeProblem,
    levels: &[f64],
    method: &SolveMethod,
    tol: f64,
    view: &ViewConfig,
) -> Result<(LadderReport, Solution)> {
    if levels.is_empty() {
        return Err(Error::invalid("truncation ladder needs at least one level"));
    }
    if levels.iter().any(|&n| !(n > 0.0 && n.is_finite())) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("truncation levels must be positive and increasing, got {levels:?}")));
    }
    let backend = method.prepare(problem)?;
    let basis = method.basis();
    let solutions = levels
        .iter()
        .map(|&n| solve_on(&truncate_problem(problem, n)?, &backend, &basis))
        .collect::<Result<Vec<_>>>()?;
    let sample = match &backend {
        Backend::Tree(t) => std::sync::Arc::new(view.view(t)?),
        Backend::Paths(s) => s.clone(),
    };
    let ys = solutions.iter().map(|s| s.lift_y(&sample)).collect::<Result<Vec<ProcessSample>>>()?;
    let mut pairs = Vec::new();
    for a in 0..levels.len() {
        for b in a + 1..levels.len() {
            let (distance, distance_se) = class_d_distance(&ys[a], &ys[b], &sample)?;
            let (bound, bound_se) = tail_bound(problem, &sample, levels[a]);
            let slack = 3.0 * (distance_se + bound_se) + 1e-9 * bound.abs().max(1e-300);
            pairs.push(LadderPair {
                n: levels[a],
                n_next: levels[b],
                distance,
                distance_se,
                bound,
                bound_se,
                within_bound: distance <= bound + slack,
            });
        }
    }
    let last = levels.len().checked_sub(2).and_then(|a| {
        pairs.iter().find(|p| p.n == levels[a] && p.n_next == levels[a + 1])
    });
    let cauchy = last.is_some_and(|p| p.distance < tol && p.bound < tol);
    let report = LadderReport {
        levels: levels
            .iter()
            .zip(&solutions)
            .map(|(&n, s)| LadderLevel { n, y0: s.y0, y0_se: s.y0_se })
            .collect(),
        pairs,
        tol,
        cauchy,
    };
    let final_solution = solutions.into_iter().next_back().expect("non-empty ladder");
    Ok((report, final_solution))
}

fn class_d_distance(a: &ProcessSample, b: &ProcessSample, sample: &PathSample) -> Result<(f64, f64)> {
    let diff = a.difference(b)?;
    let family = StoppingFamily::default_for(&diff);
    let mut best = (0.0, 0.0);
    for rule in &family.rules {
        let per_path = par::map_range(diff.n_paths, |p| diff.at(p, rule.stop(&diff, p))[0].abs());
        let (m, se) = sample.mean_se(&per_path);
        if m > best.0 {
            best = (m, se);
        }
    }
    Ok(best)
}

/// Mass of the terminal value and zero-section above level `n`.
pub(crate) fn tail_bound(problem: &BsdeProblem, sample: &PathSample, n: f64) -> (f64, f64) {
    let steps = problem.grid.steps;
    let dt = problem.grid.dt();
    let tail = |x: f64| if x.abs() > n { x.abs() } else { 0.0 };
    let per_path = par::map_range(sample.n_paths(), |p| {
        let state = |k: usize| StateView { brownian: sample.states.brownian(p, k), counts: sample.states.counts(p, k) };
        let mut total = tail(problem.terminal_value(state(steps)));
        for k in 0..steps {
            total += tail(problem.driver_at_zero(problem.grid.time(k), state(k))) * dt;
        }
        total
    });
    sample.mean_se(&per_path)
}
