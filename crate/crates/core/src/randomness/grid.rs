use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization `0 = t_0 < t_1 < … < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

pub fn make_time_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("number of steps must be at least 1"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `t_j`; the last node is exactly the horizon.
    pub fn time(&self, j: usize) -> f64 {
        if j >= self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

/// Finite mark set `e_1, …, e_m` with jump intensities `λ_1, …, λ_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSpace {
    marks: Vec<Vec<f64>>,
    intensities: Vec<f64>,
}

impl MarkSpace {
    pub fn new(marks: Vec<Vec<f64>>, intensities: Vec<f64>) -> Result<Self> {
        if marks.is_empty() {
            return Err(Error::invalid("mark space needs at least one mark"));
        }
        if marks.len() != intensities.len() {
            return Err(Error::invalid(format!(
                "{} marks but {} intensities",
                marks.len(),
                intensities.len()
            )));
        }
        let width = marks[0].len();
        for (i, (e, &l)) in marks.iter().zip(&intensities).enumerate() {
            if e.is_empty() || e.len() != width {
                return Err(Error::invalid(format!("mark {i} has inconsistent dimension")));
            }
            if e.iter().any(|x| !x.is_finite()) || e.iter().all(|&x| x == 0.0) {
                return Err(Error::invalid(format!("mark {i} must be finite and non-zero")));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid(format!("intensity {i} must be positive, got {l}")));
            }
        }
        Ok(MarkSpace { marks, intensities })
    }

    /// Scalar marks `e_i ∈ ℝ∖{0}`.
    pub fn scalar(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|&(e, _)| vec![e]).collect(),
            pairs.iter().map(|&(_, l)| l).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn marks(&self) -> &[Vec<f64>] {
        &self.marks
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }

    /// Euclidean length `|e_i|`.
    pub fn mark_norm(&self, i: usize) -> f64 {
        self.marks[i].iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Sectional norm `(Σ_i |v_i|^p λ_i)^{1/p}` of a per-mark section.
    pub fn section_norm(&self, v: &[f64], p: f64) -> f64 {
        let s: f64 = v
            .iter()
            .zip(&self.intensities)
            .map(|(x, l)| x.abs().powf(p) * l)
            .sum();
        if p == 1.0 {
            s
        } else if p == 2.0 {
            s.sqrt()
        } else {
            s.powf(1.0 / p)
        }
    }
}
