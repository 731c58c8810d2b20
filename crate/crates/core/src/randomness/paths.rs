use serde::{Deserialize, Serialize};

use super::grid::{MarkSpace, TimeGrid};
use super::rng::{CounterRng, StreamTag};
use crate::error::{Error, Result};
use crate::par;

/// One realized jump: time in `(t_step, t_{step+1}]` and the index of its mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub step: usize,
    pub mark: usize,
}

/// Law of the jump part of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpLaw {
    /// Exact Poisson random measure with intensity `λ(de) dt`.
    Poisson,
    /// Scenario-lattice law: at most one jump per step, placed at the step's
    /// right endpoint, with `P(no jump) = exp(−Λ Δt)`.
    Lattice,
}

impl JumpLaw {
    /// Probability that a step contains a jump of mark `i`.
    pub fn step_jump_probability(self, marks: &MarkSpace, i: usize, dt: f64) -> f64 {
        let lambda = marks.intensities()[i];
        match self {
            JumpLaw::Poisson => -(-lambda * dt).exp_m1(),
            JumpLaw::Lattice => {
                let total = marks.total_intensity();
                lambda / total * -(-total * dt).exp_m1()
            }
        }
    }
}

/// Simulated Brownian increments plus marked jump events for `n_paths` paths.
///
/// Increments are stored row-major as `[path][step][dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub marks: MarkSpace,
    pub jump_law: JumpLaw,
    pub brownian_increments: Vec<f64>,
    pub jump_events: Vec<Vec<JumpEvent>>,
}

/// Brownian half of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPart {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub increments: Vec<f64>,
}

/// Jump half of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPart {
    pub grid: TimeGrid,
    pub marks: MarkSpace,
    pub n_paths: usize,
    pub seed: u64,
    pub events: Vec<Vec<JumpEvent>>,
}

pub fn simulate_brownian(grid: TimeGrid, dim: usize, n_paths: usize, seed: u64) -> Result<BrownianPart> {
    if dim == 0 || n_paths == 0 {
        return Err(Error::invalid("dimension and path count must be positive"));
    }
    let n = grid.steps;
    let sd = grid.dt().sqrt();
    let rng = CounterRng::new(seed, StreamTag::Brownian);
    let mut increments = vec![0.0; n_paths * n * dim];
    par::for_each_chunk(&mut increments, n * dim, |path, row| {
        for (step, cell) in row.chunks_mut(dim).enumerate() {
            rng.at(path as u64, step as u64).fill_normals(cell);
            cell.iter_mut().for_each(|x| *x *= sd);
        }
    });
    Ok(BrownianPart { grid, dim, n_paths, seed, increments })
}

pub fn simulate_poisson_measure(
    grid: TimeGrid,
    marks: &MarkSpace,
    n_paths: usize,
    seed: u64,
) -> Result<JumpPart> {
    if n_paths == 0 {
        return Err(Error::invalid("path count must be positive"));
    }
    let dt = grid.dt();
    let total = marks.total_intensity();
    let rng = CounterRng::new(seed, StreamTag::Jumps);
    let events = par::map_range(n_paths, |path| {
        let mut out = Vec::new();
        for step in 0..grid.steps {
            let mut draws = rng.at(path as u64, step as u64);
            let count = draws.poisson(total * dt);
            if count == 0 {
                continue;
            }
            let (t0, t1) = (grid.time(step), grid.time(step + 1));
            let start = out.len();
            for _ in 0..count {
                let time = (t0 + dt * draws.uniform_open0()).min(t1);
                let mark = draws.categorical(marks.intensities(), total);
                out.push(JumpEvent { time, step, mark });
            }
            out[start..].sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        out
    });
    Ok(JumpPart { grid, marks: marks.clone(), n_paths, seed, events })
}

impl PathBatch {
    /// Brownian motion and Poisson random measure from one seed.
    pub fn simulate(grid: TimeGrid, dim: usize, marks: &MarkSpace, n_paths: usize, seed: u64) -> Result<Self> {
        let b = simulate_brownian(grid, dim, n_paths, seed)?;
        let j = simulate_poisson_measure(grid, marks, n_paths, seed)?;
        Self::from_parts(b, j)
    }

    pub fn from_parts(b: BrownianPart, j: JumpPart) -> Result<Self> {
        if b.grid != j.grid || b.n_paths != j.n_paths {
            return Err(Error::invalid("Brownian and jump parts disagree on grid or path count"));
        }
        Ok(PathBatch {
            grid: b.grid,
            dim: b.dim,
            n_paths: b.n_paths,
            seed: b.seed,
            marks: j.marks,
            jump_law: JumpLaw::Poisson,
            brownian_increments: b.increments,
            jump_events: j.events,
        })
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * self.grid.steps + step) * self.dim;
        &self.brownian_increments[at..at + self.dim]
    }

    pub fn jump_count(&self, path: usize) -> usize {
        self.jump_events[path].len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Running Brownian value and per-mark jump counts at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStates {
    pub n_paths: usize,
    pub steps: usize,
    pub dim: usize,
    pub n_marks: usize,
    /// `[path][node][dim]`
    pub brownian: Vec<f64>,
    /// `[path][node][mark]`
    pub counts: Vec<u32>,
}

impl PathStates {
    pub fn from_batch(batch: &PathBatch) -> Self {
        let (n, d, m) = (batch.grid.steps, batch.dim, batch.marks.len());
        let mut brownian = vec![0.0; batch.n_paths * (n + 1) * d];
        par::for_each_chunk(&mut brownian, (n + 1) * d, |path, row| {
            for step in 0..n {
                let inc = batch.increment(path, step);
                for k in 0..d {
                    row[(step + 1) * d + k] = row[step * d + k] + inc[k];
                }
            }
        });
        let mut counts = vec![0u32; batch.n_paths * (n + 1) * m];
        par::for_each_chunk(&mut counts, (n + 1) * m, |path, row| {
            let mut events = batch.jump_events[path].iter().peekable();
            for step in 0..n {
                let (prev, next) = row.split_at_mut((step + 1) * m);
                next[..m].copy_from_slice(&prev[step * m..]);
                while let Some(e) = events.next_if(|e| e.step == step) {
                    next[e.mark] += 1;
                }
            }
        });
        PathStates { n_paths: batch.n_paths, steps: n, dim: d, n_marks: m, brownian, counts }
    }

    pub fn brownian(&self, path: usize, node: usize) -> &[f64] {
        let at = (path * (self.steps + 1) + node) * self.dim;
        &self.brownian[at..at + self.dim]
    }

    pub fn counts(&self, path: usize, node: usize) -> &[u32] {
        let at = (path * (self.steps + 1) + node) * self.n_marks;
        &self.counts[at..at + self.n_marks]
    }

    /// Whether path `path` has at least one jump of mark `mark` in step `step`.
    pub fn jumped(&self, path: usize, step: usize, mark: usize) -> bool {
        self.counts(path, step + 1)[mark] > self.counts(path, step)[mark]
    }
}

/// Which estimator a [`PathSample`] realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Independent simulated paths with uniform weights.
    Mc,
    /// Every lattice scenario, weighted by its exact probability.
    Tree,
}

/// A set of paths with weights, used to evaluate path functionals.
///
/// Lattice-derived samples also carry the lattice node visited at each
/// depth.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub batch: PathBatch,
    pub states: PathStates,
    pub weights: Option<Vec<f64>>,
    pub nodes: Option<Vec<u32>>,
    pub estimator: Estimator,
}

impl PathSample {
    pub fn from_batch(batch: PathBatch) -> Self {
        let states = PathStates::from_batch(&batch);
        PathSample { batch, states, weights: None, nodes: None, estimator: Estimator::Mc }
    }

    pub fn n_paths(&self) -> usize {
        self.batch.n_paths
    }

    pub fn grid(&self) -> TimeGrid {
        self.batch.grid
    }

    pub fn node(&self, path: usize, depth: usize) -> Option<usize> {
        self.nodes
            .as_ref()
            .map(|n| n[path * (self.batch.grid.steps + 1) + depth] as usize)
    }

    /// Expectation of per-path `values` under the sample's weights.
    pub fn mean(&self, values: &[f64]) -> f64 {
        weighted_mean(values, self.weights.as_deref())
    }

    /// Expectation plus its Monte Carlo standard error (zero for exact
    /// lattice enumeration).
    pub fn mean_se(&self, values: &[f64]) -> (f64, f64) {
        let m = self.mean(values);
        match self.estimator {
            Estimator::Tree => (m, 0.0),
            Estimator::Mc => {
                let n = values.len();
                if n < 2 {
                    return (m, f64::NAN);
                }
                let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (m, (var / n as f64).sqrt())
            }
        }
    }
}

/// Weighted average computed relative to the first value: exact for a
/// constant sample and exactly covariant under power-of-two scaling.
pub(crate) fn weighted_mean(values: &[f64], weights: Option<&[f64]>) -> f64 {
    let Some(&first) = values.first() else {
        return f64::NAN;
    };
    match weights {
        None => first + values.iter().map(|x| x - first).sum::<f64>() / values.len() as f64,
        Some(w) => {
            let total: f64 = w.iter().sum();
            first + values.iter().zip(w).map(|(x, w)| (x - first) * w).sum::<f64>() / total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_stats(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn brownian_is_bit_reproducible() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let a = simulate_brownian(g, 2, 50, 42).unwrap();
        let b = simulate_brownian(g, 2, 50, 42).unwrap();
        assert_eq!(a, b);
        // a path's increments do not depend on how many paths were requested
        let c = simulate_brownian(g, 2, 7, 42).unwrap();
        assert_eq!(&a.increments[..7 * 16], &c.increments[..]);
    }

    #[test]
    fn brownian_increment_moments() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let n = 100_000;
        let b = simulate_brownian(g, 1, n, 7).unwrap();
        let (mean, var) = sample_stats(&b.increments);
        assert!(mean.abs() < 4.0 * (g.dt() / n as f64).sqrt(), "mean {mean}");
        assert!((var - g.dt()).abs() < 0.05 * g.dt(), "var {var}");
    }

    #[test]
    fn poisson_counts_match_intensity() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let n = 100_000;
        let j = simulate_poisson_measure(g, &marks, n, 11).unwrap();
        let counts: Vec<f64> = j.events.iter().map(|e| e.len() as f64).collect();
        let (mean, var) = sample_stats(&counts);
        assert!((mean - 2.0).abs() < 4.0 * (2.0f64 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 2.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn mark_frequencies_follow_intensities() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let marks = MarkSpace::scalar(&[(1.0, 1.0), (-1.0, 3.0)]).unwrap();
        let j = simulate_poisson_measure(g, &marks, 100_000, 5).unwrap();
        let (mut all, mut second) = (0usize, 0usize);
        for e in j.events.iter().flatten() {
            all += 1;
            second += (e.mark == 1) as usize;
        }
        let frac = second as f64 / all as f64;
        assert!((frac - 0.75).abs() < 0.02 * 0.75, "fraction {frac}");
    }

    #[test]
    fn jump_times_are_ordered_and_in_range() {
        let g = TimeGrid::new(2.0, 5).unwrap();
        let marks = MarkSpace::scalar(&[(1.0, 3.0), (2.0, 1.5)]).unwrap();
        let j = simulate_poisson_measure(g, &marks, 2_000, 9).unwrap();
        for path in &j.events {
            for w in path.windows(2) {
                assert!(w[0].time < w[1].time);
            }
            for e in path {
                assert!(e.time > 0.0 && e.time <= 2.0);
                assert!(e.time > g.time(e.step) && e.time <= g.time(e.step + 1));
            }
        }
    }

    #[test]
    fn states_accumulate_increments_and_counts() {
        let g = TimeGrid::new(1.0, 6).unwrap();
        let marks = MarkSpace::scalar(&[(1.0, 2.0), (2.0, 1.0)]).unwrap();
        let batch = PathBatch::simulate(g, 2, &marks, 20, 3).unwrap();
        let s = PathStates::from_batch(&batch);
        for p in 0..20 {
            let mut acc = [0.0; 2];
            for j in 0..6 {
                let inc = batch.increment(p, j);
                acc[0] += inc[0];
                acc[1] += inc[1];
            }
            let end = s.brownian(p, 6);
            assert!((end[0] - acc[0]).abs() < 1e-12 && (end[1] - acc[1]).abs() < 1e-12);
            let total: u32 = s.counts(p, 6).iter().sum();
            assert_eq!(total as usize, batch.jump_count(p));
        }
    }

    #[test]
    fn json_round_trip() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let batch = PathBatch::simulate(g, 1, &marks, 4, 1).unwrap();
        let text = batch.to_json().unwrap();
        assert!(text.contains("\"brownian_increments\""));
        assert!(text.contains("\"jump_events\""));
        assert_eq!(PathBatch::from_json(&text).unwrap(), batch);
    }

    #[test]
    fn weighted_mean_of_constant_is_exact() {
        let xs = vec![0.1; 7];
        let w = vec![0.3, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1];
        assert_eq!(weighted_mean(&xs, Some(&w)), 0.1);
        assert_eq!(weighted_mean(&xs, None), 0.1);
    }
}
