//! Picard iteration: each sweep solves the backward equation whose generator
//! sees `(z, v)` frozen at the previous iterate, so only `y` is implicit.

use serde::{Deserialize, Serialize};

use super::solution::{block_distances, Backend, Distances, Fields, Solution, UnitMap, ViewConfig};
use super::subdivide::SubdivisionPlan;
use super::{assemble, backward_block, check_step_size, terminal_values, BasisConfig, Frozen, InnerConfig, SolveMethod};
use crate::error::{Error, Result};
use crate::generators::{BsdeProblem, GeneratorSpec};
use crate::randomness::PathSample;

/// Starting triple `(Y⁰, Z⁰, V⁰)`, constant in time and state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Initialization {
    Zero,
    Constant { y: f64, z: f64, v: f64 },
}

impl Initialization {
    /// `(10, 1, 1)`.
    pub fn perturbed() -> Self {
        Initialization::Constant { y: 10.0, z: 1.0, v: 1.0 }
    }

    fn values(self) -> (f64, f64, f64) {
        match self {
            Initialization::Zero => (0.0, 0.0, 0.0),
            Initialization::Constant { y, z, v } => (y, z, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    /// Stop once `‖ΔY‖_{𝒮^q} + ‖ΔZ‖_{ℳ^q} + ‖ΔV‖_{ℒ^q}` is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Norm index; derived from the generator's growth exponent when unset.
    pub q: Option<f64>,
    pub init: Initialization,
    /// Consecutive ratios `≥ 1` that count as divergence.
    pub divergence_run: usize,
    #[serde(skip)]
    pub view: ViewConfig,
    pub inner: InnerConfig,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-8,
            max_iter: 60,
            q: None,
            init: Initialization::Zero,
            divergence_run: 3,
            view: ViewConfig::default(),
            inner: InnerConfig::default(),
        }
    }
}

/// `q = min(2, 0.95/α)` when a growth exponent `α` is declared, else `1.5`;
/// if that is not above 1, the midpoint of `(1, 1/α)`.
pub fn picard_q(spec: &GeneratorSpec) -> f64 {
    match spec.growth {
        None => 1.5,
        Some(g) => {
            let q = (0.95 / g.alpha).min(2.0);
            if q > 1.0 {
                q
            } else {
                0.5 * (1.0 + 1.0 / g.alpha)
            }
        }
    }
}

/// Distances between successive iterates. Entry `n` is
/// `‖S^{n+1} − S^n‖` with `S^0` the initialization; `ratios[n-1]` is
/// `dist_{n+1}/dist_n` for `n ≥ 1` (absent when `dist_n = 0`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardTrace {
    pub q: f64,
    pub start: f64,
    pub end: f64,
    pub distances: Vec<Distances>,
    pub totals: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl PicardTrace {
    /// Largest measured contraction ratio.
    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().flatten().copied().reduce(f64::max)
    }

    /// Whether `dist_n ≤ slack · dist_1 · r^{n−1}` for every recorded
    /// `n ≥ 1`, with `r` the largest measured ratio.
    pub fn within_envelope(&self, slack: f64) -> bool {
        let Some(r) = self.max_ratio() else {
            return true;
        };
        let Some(&d1) = self.totals.get(1) else {
            return true;
        };
        self.totals.iter().enumerate().skip(1).all(|(n, &d)| d <= slack * d1 * r.powi(n as i32 - 1))
    }

    /// CSV rows `iteration,y,z,v,total,ratio`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "y", "z", "v", "total", "ratio"])?;
        for (n, d) in self.distances.iter().enumerate() {
            let ratio = if n >= 1 { self.ratios.get(n - 1).copied().flatten() } else { None };
            w.write_record([
                n.to_string(),
                d.y.to_string(),
                d.z.to_string(),
                d.v.to_string(),
                self.totals[n].to_string(),
                ratio.map_or(String::new(), |r| r.to_string()),
            ])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::invalid(e.to_string()))
    }
}

fn units(backend: &Backend, k: usize) -> usize {
    match backend {
        Backend::Tree(t) => t.n_nodes(k),
        Backend::Paths(s) => s.n_paths(),
    }
}

fn initial_fields(problem: &BsdeProblem, backend: &Backend, k0: usize, k1: usize, init: Initialization) -> Fields {
    let (y, z, v) = init.values();
    let (d, m) = (problem.dim, problem.marks.len());
    Fields {
        first: k0,
        y: (k0..=k1).map(|k| vec![y; units(backend, k)]).collect(),
        z: (k0..k1).map(|k| vec![z; units(backend, k) * d]).collect(),
        v: (k0..k1).map(|k| vec![v; units(backend, k) * m]).collect(),
        f: (k0..k1).map(|k| vec![0.0; units(backend, k)]).collect(),
    }
}

/// Paths on which iterates are compared.
fn distance_view(backend: &Backend, view: &ViewConfig) -> Result<(std::sync::Arc<PathSample>, UnitMap)> {
    match backend {
        Backend::Tree(t) => Ok((std::sync::Arc::new(view.view(t)?), UnitMap::Nodes)),
        Backend::Paths(s) => Ok((s.clone(), UnitMap::Paths)),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_picard(
    problem: &BsdeProblem,
    backend: &Backend,
    basis: &BasisConfig,
    sample: &PathSample,
    map: UnitMap,
    k0: usize,
    k1: usize,
    terminal: Vec<f64>,
    cfg: &PicardConfig,
) -> Result<(Fields, PicardTrace)> {
    let q = cfg.q.unwrap_or_else(|| picard_q(&problem.generator));
    let grid = problem.grid;
    let mut trace = PicardTrace {
        q,
        start: grid.time(k0),
        end: grid.time(k1),
        distances: Vec::new(),
        totals: Vec::new(),
        ratios: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let mut prev = initial_fields(problem, backend, k0, k1, cfg.init);
    for n in 0..cfg.max_iter {
        let frozen = Frozen { z: &prev.z, v: &prev.v };
        let next = backward_block(problem, backend, basis, k0, k1, terminal.clone(), Some(frozen), &cfg.inner)?;
        let dist = block_distances(&next, &prev, sample, map, problem.dim, &problem.marks, grid.dt(), q);
        trace.distances.push(dist);
        trace.totals.push(dist.total());
        trace.iterations = n + 1;
        if n >= 2 {
            let before = trace.totals[n - 1];
            trace.ratios.push((before > 0.0).then(|| dist.total() / before));
        }
        prev = next;
        if dist.total() <= cfg.tol {
            trace.converged = true;
            break;
        }
        let run = cfg.divergence_run.max(1);
        if trace.ratios.len() >= run && trace.ratios[trace.ratios.len() - run..].iter().all(|r| r.is_some_and(|r| r >= 1.0)) {
            let ratios = trace.ratios.iter().flatten().copied().collect();
            return Err(Error::Divergence { interval_length: trace.end - trace.start, ratios, trace: Box::new(trace) });
        }
    }
    Ok((prev, trace))
}

/// Picard iteration over the whole horizon.
pub fn picard_solve(problem: &BsdeProblem, method: &SolveMethod, cfg: &PicardConfig) -> Result<(Solution, PicardTrace)> {
    picard_on(problem, &method.prepare(problem)?, &method.basis(), cfg)
}

/// Picard iteration on a prepared lattice or path set.
pub fn picard_on(
    problem: &BsdeProblem,
    backend: &Backend,
    basis: &BasisConfig,
    cfg: &PicardConfig,
) -> Result<(Solution, PicardTrace)> {
    check_step_size(problem)?;
    let terminal = terminal_values(problem, backend)?;
    let (sample, map) = distance_view(backend, &cfg.view)?;
    let (fields, trace) = run_picard(problem, backend, basis, &sample, map, 0, problem.grid.steps, terminal, cfg)?;
    Ok((assemble(problem, backend, fields), trace))
}

/// Result of a subdivided solve: the glued solution, one trace per
/// interval (in time order) and the grid indices used as breakpoints.
#[derive(Debug, Clone)]
pub struct ChainedSolution {
    pub solution: Solution,
    pub traces: Vec<PicardTrace>,
    pub indices: Vec<usize>,
}

impl ChainedSolution {
    pub fn converged(&self) -> bool {
        self.traces.iter().all(|t| t.converged)
    }
}

/// Picard on each interval of `plan`, last interval first; the terminal
/// condition of an interval is the `Y` computed at its right end.
pub fn chained_solve(
    problem: &BsdeProblem,
    plan: &SubdivisionPlan,
    method: &SolveMethod,
    cfg: &PicardConfig,
) -> Result<ChainedSolution> {
    chained_on(problem, &method.prepare(problem)?, &method.basis(), plan, cfg)
}

pub fn chained_on(
    problem: &BsdeProblem,
    backend: &Backend,
    basis: &BasisConfig,
    plan: &SubdivisionPlan,
    cfg: &PicardConfig,
) -> Result<ChainedSolution> {
    check_step_size(problem)?;
    let indices = plan.grid_indices(&problem.grid)?;
    let mut terminal = terminal_values(problem, backend)?;
    let (sample, map) = distance_view(backend, &cfg.view)?;
    let count = indices.len() - 1;
    let mut blocks = Vec::with_capacity(count);
    let mut traces = Vec::with_capacity(count);
    for (index, w) in indices.windows(2).enumerate().rev() {
        let (k0, k1) = (w[0], w[1]);
        let (block, trace) = run_picard(problem, backend, basis, &sample, map, k0, k1, terminal, cfg).map_err(|e| {
            Error::Interval { index, start: problem.grid.time(k0), end: problem.grid.time(k1), source: Box::new(e) }
        })?;
        terminal = block.y[0].clone();
        blocks.push(block);
        traces.push(trace);
    }
    blocks.reverse();
    traces.reverse();
    let fields = Fields::concat(blocks);
    Ok(ChainedSolution { solution: assemble(problem, backend, fields), traces, indices })
}
