//! Solution-space norms on sampled processes: `𝒮^p`, `ℳ^p`, the class-𝔻
//! norm over a finite stopping family, and uniform-integrability profiles.
//!
//! Estimates over lattice samples use exact node probabilities; Monte Carlo
//! samples are weighted uniformly. The class-𝔻 value is a supremum over a
//! finite family only, hence a lower bound for the true norm.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::randomness::{Estimator, PathSample, TimeGrid};

/// Values of a process along sampled paths, `[path][time][width]`.
///
/// Scalar processes (`Y`) have `width = 1` and `n_times = N + 1`; vector
/// integrands (`Z`) have `width = d` and `n_times = N`, the value at index `j`
/// being the one used on `(t_j, t_{j+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSample {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub n_times: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub estimator: Estimator,
    pub seed: Option<u64>,
}

impl ProcessSample {
    pub fn new(grid: TimeGrid, n_paths: usize, n_times: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_paths * n_times * width {
            return Err(Error::invalid(format!(
                "process sample has {} values, expected {n_paths} x {n_times} x {width}",
                values.len()
            )));
        }
        if n_times == 0 || n_times > grid.steps + 1 {
            return Err(Error::invalid(format!("{n_times} time points on a grid of {} steps", grid.steps)));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite process value at flat index {bad}")));
        }
        Ok(ProcessSample { grid, n_paths, n_times, width, values, weights: None, estimator: Estimator::Mc, seed: None })
    }

    /// Builds a sample from `f(path, time, out)` filling `width` values.
    pub fn from_fn(
        grid: TimeGrid,
        n_paths: usize,
        n_times: usize,
        width: usize,
        f: impl Fn(usize, usize, &mut [f64]) + Sync,
    ) -> Result<Self> {
        let mut values = vec![0.0; n_paths * n_times * width];
        crate::par::for_each_chunk(&mut values, n_times * width, |p, row| {
            for (j, out) in row.chunks_mut(width.max(1)).enumerate() {
                f(p, j, out);
            }
        });
        Self::new(grid, n_paths, n_times, width, values)
    }

    /// Takes weights, estimator kind and seed from the paths the values were
    /// computed on.
    pub fn on(mut self, sample: &PathSample) -> Result<Self> {
        if sample.n_paths() != self.n_paths {
            return Err(Error::invalid(format!(
                "process has {} paths, path sample has {}",
                self.n_paths,
                sample.n_paths()
            )));
        }
        self.weights = sample.weights.clone();
        self.estimator = sample.estimator;
        self.seed = Some(sample.batch.seed);
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_paths {
            return Err(Error::invalid("one weight per path required"));
        }
        self.weights = Some(weights);
        self.estimator = Estimator::Tree;
        Ok(self)
    }

    pub fn at(&self, path: usize, time: usize) -> &[f64] {
        let at = (path * self.n_times + time) * self.width;
        &self.values[at..at + self.width]
    }

    fn magnitude(&self, path: usize, time: usize) -> f64 {
        let v = self.at(path, time);
        if v.len() == 1 {
            v[0].abs()
        } else {
            v.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
    }

    /// Expectation of per-path quantities under this sample's weights.
    pub fn expect(&self, per_path: &[f64]) -> f64 {
        crate::randomness::weighted_mean(per_path, self.weights.as_deref())
    }

    /// Pointwise `self − other`, keeping this sample's weights.
    pub fn difference(&self, other: &ProcessSample) -> Result<Self> {
        if (self.n_paths, self.n_times, self.width) != (other.n_paths, other.n_times, other.width) {
            return Err(Error::invalid("process samples have different shapes"));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("norm index must be positive, got {p}")))
    }
}

fn pow(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

fn root(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x.sqrt()
    } else {
        x.powf(1.0 / p)
    }
}

/// `(𝔼 sup_t |Y_t|^p)^{1/p}`.
pub fn sp_norm(y: &ProcessSample, p: f64) -> Result<f64> {
    check_p(p)?;
    let per_path = crate::par::map_range(y.n_paths, |i| {
        let s = (0..y.n_times).map(|j| y.magnitude(i, j)).fold(0.0, f64::max);
        pow(s, p)
    });
    Ok(root(y.expect(&per_path), p))
}

/// `(𝔼 (∫|Z_s|² ds)^{p/2})^{1/p}` with the integral as a left-point sum.
pub fn mp_norm(z: &ProcessSample, p: f64) -> Result<f64> {
    check_p(p)?;
    let dt = z.grid.dt();
    let n = z.n_times.min(z.grid.steps);
    let per_path = crate::par::map_range(z.n_paths, |i| {
        let q: f64 = (0..n).map(|j| z.at(i, j).iter().map(|x| x * x).sum::<f64>() * dt).sum();
        pow(q.sqrt(), p)
    });
    Ok(root(z.expect(&per_path), p))
}

/// A non-anticipating stopping rule returning a time index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StoppingRule {
    /// Stop at a fixed time index.
    Deterministic { index: usize },
    /// First index with `|Y| ≥ level`, or the terminal index if none.
    FirstHit { level: f64 },
}

impl StoppingRule {
    pub fn stop(&self, y: &ProcessSample, path: usize) -> usize {
        let last = y.n_times - 1;
        match *self {
            StoppingRule::Deterministic { index } => index.min(last),
            StoppingRule::FirstHit { level } => (0..y.n_times).find(|&j| y.magnitude(path, j) >= level).unwrap_or(last),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingFamily {
    pub rules: Vec<StoppingRule>,
}

impl StoppingFamily {
    pub fn new(rules: Vec<StoppingRule>) -> Self {
        StoppingFamily { rules }
    }

    /// All deterministic grid times plus first hits of `|Y|` at the 50%, 90%
    /// and 99% quantiles of the terminal magnitude.
    pub fn default_for(y: &ProcessSample) -> Self {
        let mut rules: Vec<StoppingRule> = (0..y.n_times).map(|index| StoppingRule::Deterministic { index }).collect();
        let terminal: Vec<f64> = (0..y.n_paths).map(|i| y.magnitude(i, y.n_times - 1)).collect();
        for q in [0.5, 0.9, 0.99] {
            let level = weighted_quantile(&terminal, y.weights.as_deref(), q);
            if level > 0.0 && !rules.contains(&StoppingRule::FirstHit { level }) {
                rules.push(StoppingRule::FirstHit { level });
            }
        }
        StoppingFamily { rules }
    }

    fn check(&self) -> Result<()> {
        if self.rules.is_empty() {
            Err(Error::invalid("stopping family is empty"))
        } else {
            Ok(())
        }
    }
}

fn weighted_quantile(xs: &[f64], w: Option<&[f64]>, q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let total: f64 = idx.iter().map(|&i| weight(i)).sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weight(i);
        if acc >= q * total {
            return xs[i];
        }
    }
    xs[idx[idx.len() - 1]]
}

/// Class-𝔻 value `max_τ 𝔼|Y_τ|` over the family, with the maximizing rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassD {
    pub value: f64,
    pub rule: StoppingRule,
    /// Always true: the family is finite.
    pub lower_bound: bool,
}

pub fn class_d_norm(y: &ProcessSample, family: &StoppingFamily) -> Result<ClassD> {
    family.check()?;
    let mut best: Option<ClassD> = None;
    for rule in &family.rules {
        let per_path = crate::par::map_range(y.n_paths, |i| y.magnitude(i, rule.stop(y, i)));
        let value = y.expect(&per_path);
        if best.is_none_or(|b| value > b.value) {
            best = Some(ClassD { value, rule: *rule, lower_bound: true });
        }
    }
    Ok(best.expect("family is non-empty"))
}

/// `K ↦ max_τ 𝔼[|Y_τ| 1{|Y_τ| > K}]` over the family.
pub fn uniform_integrability_profile(
    y: &ProcessSample,
    family: &StoppingFamily,
    levels: &[f64],
) -> Result<Vec<(f64, f64)>> {
    family.check()?;
    let stopped: Vec<Vec<f64>> = family
        .rules
        .iter()
        .map(|rule| crate::par::map_range(y.n_paths, |i| y.magnitude(i, rule.stop(y, i))))
        .collect();
    Ok(levels
        .iter()
        .map(|&k| {
            let v = stopped
                .iter()
                .map(|s| {
                    let tail: Vec<f64> = s.iter().map(|&x| if x > k { x } else { 0.0 }).collect();
                    y.expect(&tail)
                })
                .fold(0.0, f64::max);
            (k, v)
        })
        .collect())
}

/// One norm evaluation as emitted in reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub norm: String,
    pub p: Option<f64>,
    pub value: f64,
    pub estimator: Estimator,
    pub n_paths: usize,
    pub seed: Option<u64>,
}

impl NormReport {
    pub fn new(norm: impl Into<String>, p: Option<f64>, value: f64, sample: &ProcessSample) -> Self {
        NormReport { norm: norm.into(), p, value, estimator: sample.estimator, n_paths: sample.n_paths, seed: sample.seed }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
