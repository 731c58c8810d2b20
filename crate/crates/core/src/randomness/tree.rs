//! Exact scenario lattice.
//!
//! Each step branches into `2^d` Brownian sign patterns (increment `±√Δt` per
//! coordinate, probability `2^{-d}`) times `1 + m` jump outcomes: no jump with
//! probability `exp(−ΛΔt)`, or a single jump of mark `i` with probability
//! `(λ_i/Λ)(1 − exp(−ΛΔt))`. Scenarios that reach the same Brownian position
//! and per-mark jump counts share a node; the lattice has
//! `(k+1)^d · C(k+m, m)` nodes at depth `k` rather than `(2^d(1+m))^k`.
//! Terminal data and generators only see `(t, B_t, jump counts)`.

use std::collections::HashMap;

use super::grid::{MarkSpace, TimeGrid};
use super::paths::{Estimator, JumpEvent, JumpLaw, PathBatch, PathSample, PathStates};
use super::rng::{CounterRng, StreamTag};
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_NODE_CAP: u128 = 10_000_000;

#[derive(Debug, Clone)]
pub struct TreeLevel {
    pub depth: usize,
    /// Jump-count vectors present at this depth.
    pub counts: Vec<Vec<u32>>,
    /// Node probabilities, indexed `count_index * (depth+1)^d + brownian_index`.
    pub prob: Vec<f64>,
    // [count_index * (1+m) + branch] -> count index at depth + 1
    child_counts: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    pub grid: TimeGrid,
    pub dim: usize,
    pub marks: MarkSpace,
    levels: Vec<TreeLevel>,
    branch_prob: Vec<f64>,
    half_step: f64,
}

pub fn build_scenario_tree(grid: TimeGrid, marks: &MarkSpace, dim: usize) -> Result<ScenarioTree> {
    ScenarioTree::with_cap(grid, marks, dim, DEFAULT_NODE_CAP)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

impl ScenarioTree {
    /// Number of stored nodes for a lattice of this shape.
    pub fn node_count(steps: usize, dim: usize, n_marks: usize) -> u128 {
        (0..=steps as u128).fold(0u128, |acc, k| {
            let b = (k + 1).saturating_pow(dim as u32);
            acc.saturating_add(b.saturating_mul(binomial(k + n_marks as u128, n_marks as u128)))
        })
    }

    pub fn with_cap(grid: TimeGrid, marks: &MarkSpace, dim: usize, cap: u128) -> Result<Self> {
        if dim == 0 || dim > 16 {
            return Err(Error::invalid(format!("lattice dimension must be in 1..=16, got {dim}")));
        }
        let m = marks.len();
        let requested = Self::node_count(grid.steps, dim, m);
        if requested > cap {
            return Err(Error::ResourceLimit { what: "scenario lattice", requested, cap });
        }

        let dt = grid.dt();
        let total = marks.total_intensity();
        let jump_any = -(-total * dt).exp_m1();
        let mut branch_prob = vec![(-total * dt).exp()];
        branch_prob.extend(marks.intensities().iter().map(|l| l / total * jump_any));

        let mut levels: Vec<TreeLevel> = Vec::with_capacity(grid.steps + 1);
        levels.push(TreeLevel { depth: 0, counts: vec![vec![0; m]], prob: vec![1.0], child_counts: Vec::new() });
        let sign_prob = 0.5f64.powi(dim as i32);
        for k in 0..grid.steps {
            let cur = &levels[k];
            let mut index: HashMap<Vec<u32>, u32> = HashMap::new();
            let mut next_counts: Vec<Vec<u32>> = Vec::new();
            let mut child_counts = Vec::with_capacity(cur.counts.len() * (1 + m));
            for c in &cur.counts {
                for branch in 0..=m {
                    let mut nc = c.clone();
                    if branch > 0 {
                        nc[branch - 1] += 1;
                    }
                    let id = *index.entry(nc.clone()).or_insert_with(|| {
                        next_counts.push(nc);
                        (next_counts.len() - 1) as u32
                    });
                    child_counts.push(id);
                }
            }
            let width_next = (k + 2).pow(dim as u32);
            let mut prob = vec![0.0; next_counts.len() * width_next];
            let width = (k + 1).pow(dim as u32);
            for (ci, _) in cur.counts.iter().enumerate() {
                for b in 0..width {
                    let p = cur.prob[ci * width + b];
                    for branch in 0..=m {
                        let nci = child_counts[ci * (1 + m) + branch] as usize;
                        let pb = p * sign_prob * branch_prob[branch];
                        for s in 0..(1usize << dim) {
                            let nb = child_brownian(b, s, k + 1, dim);
                            prob[nci * width_next + nb] += pb;
                        }
                    }
                }
            }
            levels[k].child_counts = child_counts;
            levels.push(TreeLevel { depth: k + 1, counts: next_counts, prob, child_counts: Vec::new() });
        }
        Ok(ScenarioTree { grid, dim, marks: marks.clone(), levels, branch_prob, half_step: dt.sqrt() })
    }

    pub fn depth(&self) -> usize {
        self.grid.steps
    }

    pub fn level(&self, k: usize) -> &TreeLevel {
        &self.levels[k]
    }

    pub fn n_nodes(&self, k: usize) -> usize {
        self.levels[k].prob.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(|l| l.prob.len()).sum()
    }

    /// `2^d (1 + m)`.
    pub fn children_per_node(&self) -> usize {
        (1 << self.dim) * (1 + self.marks.len())
    }

    /// Number of distinct scenarios (root-to-leaf paths) in the unrecombined tree.
    pub fn scenario_count(&self) -> u128 {
        (self.children_per_node() as u128).saturating_pow(self.grid.steps as u32)
    }

    /// Brownian increment magnitude `√Δt`.
    pub fn step_size(&self) -> f64 {
        self.half_step
    }

    /// `[P(no jump), P(jump of mark 1), …]` for one step.
    pub fn branch_probabilities(&self) -> &[f64] {
        &self.branch_prob
    }

    fn width(&self, k: usize) -> usize {
        (k + 1).pow(self.dim as u32)
    }

    /// Writes `B` at node `node` of depth `k` into `out`.
    pub fn brownian_state(&self, k: usize, node: usize, out: &mut [f64]) {
        let r = k + 1;
        let mut b = node % self.width(k);
        for x in out.iter_mut().take(self.dim) {
            let up = b % r;
            b /= r;
            *x = (2.0 * up as f64 - k as f64) * self.half_step;
        }
    }

    pub fn counts(&self, k: usize, node: usize) -> &[u32] {
        &self.levels[k].counts[node / self.width(k)]
    }

    /// Child of `node` (depth `k`) along jump branch `branch` (0 = none) and
    /// sign pattern `signs` (bit `l` set = up-move in coordinate `l`).
    pub fn child(&self, k: usize, node: usize, branch: usize, signs: usize) -> usize {
        let w = self.width(k);
        let (ci, b) = (node / w, node % w);
        let nci = self.levels[k].child_counts[ci * (1 + self.marks.len()) + branch] as usize;
        nci * self.width(k + 1) + child_brownian(b, signs, k + 1, self.dim)
    }

    /// Every scenario with its exact probability. Fails when there are more
    /// than `max_paths` scenarios.
    pub fn enumerate_paths(&self, max_paths: usize) -> Result<PathSample> {
        let count = self.scenario_count();
        if count > max_paths as u128 {
            return Err(Error::ResourceLimit { what: "scenario enumeration", requested: count, cap: max_paths as u128 });
        }
        let per = self.children_per_node();
        let n = self.grid.steps;
        let count = count as usize;
        let choices: Vec<Vec<(usize, usize)>> = par::map_range(count, |mut code| {
            let mut c = vec![(0, 0); n];
            for slot in c.iter_mut() {
                let x = code % per;
                code /= per;
                *slot = (x % (1 << self.dim), x >> self.dim);
            }
            c
        });
        let sign_prob = 0.5f64.powi(self.dim as i32);
        let weights = choices
            .iter()
            .map(|c| c.iter().fold(1.0, |p, &(_, br)| p * sign_prob * self.branch_prob[br]))
            .collect();
        Ok(self.assemble(choices, Some(weights), Estimator::Tree, 0))
    }

    /// `n_paths` scenarios drawn from the lattice law.
    pub fn sample_paths(&self, n_paths: usize, seed: u64) -> Result<PathSample> {
        if n_paths == 0 {
            return Err(Error::invalid("path count must be positive"));
        }
        let rng = CounterRng::new(seed, StreamTag::TreeWalk);
        let mut cum = self.branch_prob.clone();
        for i in 1..cum.len() {
            cum[i] += cum[i - 1];
        }
        let choices = par::map_range(n_paths, |p| {
            (0..self.grid.steps)
                .map(|j| {
                    let mut d = rng.at(p as u64, j as u64);
                    let signs = (d.next_u64() & ((1u64 << self.dim) - 1)) as usize;
                    let u = d.uniform() * cum[cum.len() - 1];
                    let branch = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
                    (signs, branch)
                })
                .collect()
        });
        Ok(self.assemble(choices, None, Estimator::Mc, seed))
    }

    fn assemble(
        &self,
        choices: Vec<Vec<(usize, usize)>>,
        weights: Option<Vec<f64>>,
        estimator: Estimator,
        seed: u64,
    ) -> PathSample {
        let (n, d, m) = (self.grid.steps, self.dim, self.marks.len());
        let n_paths = choices.len();
        let h = self.half_step;
        let rows: Vec<(Vec<f64>, Vec<JumpEvent>, Vec<u32>, Vec<f64>, Vec<u32>)> = par::map_range(n_paths, |p| {
            let mut inc = vec![0.0; n * d];
            let mut events = Vec::new();
            let mut nodes = vec![0u32; n + 1];
            let mut b = vec![0.0; (n + 1) * d];
            let mut counts = vec![0u32; (n + 1) * m];
            let mut node = 0usize;
            for (j, &(signs, branch)) in choices[p].iter().enumerate() {
                for l in 0..d {
                    inc[j * d + l] = if signs >> l & 1 == 1 { h } else { -h };
                }
                if branch > 0 {
                    events.push(JumpEvent { time: self.grid.time(j + 1), step: j, mark: branch - 1 });
                }
                node = self.child(j, node, branch, signs);
                nodes[j + 1] = node as u32;
                self.brownian_state(j + 1, node, &mut b[(j + 1) * d..(j + 2) * d]);
                counts[(j + 1) * m..(j + 2) * m].copy_from_slice(self.counts(j + 1, node));
            }
            (inc, events, nodes, b, counts)
        });
        let mut batch = PathBatch {
            grid: self.grid,
            dim: d,
            n_paths,
            seed,
            marks: self.marks.clone(),
            jump_law: JumpLaw::Lattice,
            brownian_increments: Vec::with_capacity(n_paths * n * d),
            jump_events: Vec::with_capacity(n_paths),
        };
        let mut states = PathStates {
            n_paths,
            steps: n,
            dim: d,
            n_marks: m,
            brownian: Vec::with_capacity(n_paths * (n + 1) * d),
            counts: Vec::with_capacity(n_paths * (n + 1) * m),
        };
        let mut all_nodes = Vec::with_capacity(n_paths * (n + 1));
        for (inc, events, nodes, b, counts) in rows {
            batch.brownian_increments.extend(inc);
            batch.jump_events.push(events);
            all_nodes.extend(nodes);
            states.brownian.extend(b);
            states.counts.extend(counts);
        }
        PathSample { batch, states, weights, nodes: Some(all_nodes), estimator }
    }
}

fn child_brownian(b: usize, signs: usize, radix_minus_one: usize, dim: usize) -> usize {
    // b encodes up-counts in radix `radix_minus_one`; the child uses radix + 1
    let (r_old, r_new) = (radix_minus_one, radix_minus_one + 1);
    let (mut b, mut out, mut place) = (b, 0usize, 1usize);
    for l in 0..dim {
        let up = b % r_old + (signs >> l & 1);
        b /= r_old;
        out += up * place;
        place *= r_new;
    }
    out
}
