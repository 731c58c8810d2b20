//! Empirical checks of the generator and data assumptions on sampled
//! arguments. These produce reports; they never fail hard.

use serde::Serialize;

use super::{BsdeProblem, DriverInput, GeneratorSpec, StateView};
use crate::randomness::{CounterRng, Draws, MarkSpace, PathSample, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudPoint {
    pub y: f64,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloudContext {
    pub t: f64,
    pub brownian: Vec<f64>,
    pub counts: Vec<u32>,
}

/// Argument points `(y, z, v)` evaluated under a few `(t, ω)` contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgumentCloud {
    pub contexts: Vec<CloudContext>,
    pub points: Vec<CloudPoint>,
    /// Extra pairs differing in a single coordinate.
    pub axis_pairs: Vec<(CloudPoint, CloudPoint)>,
}

impl ArgumentCloud {
    /// Half the coordinates uniform on `[−scale, scale]`, half log-uniform in
    /// magnitude on `[1e-3, scale]` with random sign.
    pub fn sample(dim: usize, n_marks: usize, horizon: f64, n_points: usize, scale: f64, seed: u64) -> Self {
        let rng = CounterRng::new(seed, StreamTag::Cloud);
        let top = scale.max(1e-3).log10();
        let coord = |d: &mut Draws, log: bool| {
            if log {
                let sign = if d.uniform() < 0.5 { -1.0 } else { 1.0 };
                sign * 10f64.powf(-3.0 + (top + 3.0) * d.uniform())
            } else {
                scale * (2.0 * d.uniform() - 1.0)
            }
        };
        let points: Vec<CloudPoint> = (0..n_points)
            .map(|i| {
                let mut d = rng.at(i as u64, 0);
                let log = i % 2 == 1;
                CloudPoint {
                    y: coord(&mut d, log),
                    z: (0..dim).map(|_| coord(&mut d, log)).collect(),
                    v: (0..n_marks).map(|_| coord(&mut d, log)).collect(),
                }
            })
            .collect();
        let contexts = (0..4)
            .map(|i| {
                let mut d = rng.at(i, 1);
                let t = horizon * d.uniform();
                let mut brownian = vec![0.0; dim];
                d.fill_normals(&mut brownian);
                brownian.iter_mut().for_each(|b| *b *= t.sqrt());
                CloudContext { t, brownian, counts: (0..n_marks).map(|_| d.poisson(1.0) as u32).collect() }
            })
            .collect();
        let mut axis_pairs = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let mut d = rng.at(i as u64, 2);
            for axis in 0..1 + dim + n_marks {
                let mut q = p.clone();
                let shift = coord(&mut d, true);
                match axis {
                    0 => q.y += shift,
                    a if a <= dim => q.z[a - 1] += shift,
                    a => q.v[a - 1 - dim] += shift,
                }
                axis_pairs.push((p.clone(), q));
            }
        }
        ArgumentCloud { contexts, points, axis_pairs }
    }
}

fn eval(spec: &GeneratorSpec, marks: &MarkSpace, ctx: &CloudContext, y: f64, z: &[f64], v: &[f64]) -> f64 {
    let state = StateView { brownian: &ctx.brownian, counts: &ctx.counts };
    let v_norm = marks.section_norm(v, spec.p);
    spec.driver.eval(&DriverInput { t: ctx.t, state, y, z, v, v_norm })
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub declared: f64,
    pub measured: f64,
    pub pass: bool,
    /// Pair attaining the measured quotient.
    pub witness: Option<(CloudPoint, CloudPoint)>,
}

/// Largest `|Δf| / (|Δy| + |Δz| + ‖Δv‖)` over all pairs of cloud points
/// sharing a context; passes when it does not exceed the declared modulus.
pub fn check_lipschitz(spec: &GeneratorSpec, marks: &MarkSpace, cloud: &ArgumentCloud) -> LipschitzReport {
    let quotient = |a: &CloudPoint, b: &CloudPoint, fa: f64, fb: f64| {
        let dz: f64 = a.z.iter().zip(&b.z).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let dv: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
        let denom = (a.y - b.y).abs() + dz + marks.section_norm(&dv, spec.p);
        (denom > 0.0).then(|| (fa - fb).abs() / denom)
    };
    let mut best: (f64, Option<(CloudPoint, CloudPoint)>) = (0.0, None);
    let mut consider = |q: Option<f64>, a: &CloudPoint, b: &CloudPoint| {
        if let Some(q) = q {
            if q > best.0 || best.1.is_none() {
                best = (q, Some((a.clone(), b.clone())));
            }
        }
    };
    for ctx in &cloud.contexts {
        let vals: Vec<f64> = cloud.points.iter().map(|p| eval(spec, marks, ctx, p.y, &p.z, &p.v)).collect();
        for i in 0..cloud.points.len() {
            for j in i + 1..cloud.points.len() {
                let (a, b) = (&cloud.points[i], &cloud.points[j]);
                consider(quotient(a, b, vals[i], vals[j]), a, b);
            }
        }
        for (a, b) in &cloud.axis_pairs {
            let (fa, fb) = (eval(spec, marks, ctx, a.y, &a.z, &a.v), eval(spec, marks, ctx, b.y, &b.z, &b.v));
            consider(quotient(a, b, fa, fb), a, b);
        }
    }
    LipschitzReport {
        declared: spec.kappa,
        measured: best.0,
        pass: best.0 <= spec.kappa * (1.0 + 1e-9),
        witness: best.1,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    /// Largest `|f(y,z,v) − f(y,0,0)| / (γ (g + |y| + |z| + ‖v‖)^α)`.
    pub max_ratio: f64,
    pub pass: bool,
    pub witness: Option<CloudPoint>,
}

pub fn check_growth(spec: &GeneratorSpec, marks: &MarkSpace, cloud: &ArgumentCloud) -> GrowthReport {
    let mut best: (f64, Option<CloudPoint>) = (0.0, None);
    for ctx in &cloud.contexts {
        for p in &cloud.points {
            let zeros_z = vec![0.0; p.z.len()];
            let zeros_v = vec![0.0; p.v.len()];
            let num = (eval(spec, marks, ctx, p.y, &p.z, &p.v) - eval(spec, marks, ctx, p.y, &zeros_z, &zeros_v)).abs();
            let ratio = match spec.growth {
                _ if num == 0.0 => 0.0,
                None => f64::INFINITY,
                Some(g) => {
                    let zn = p.z.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let base = g.g + p.y.abs() + zn + marks.section_norm(&p.v, spec.p);
                    num / (g.gamma * base.powf(g.alpha))
                }
            };
            if ratio > best.0 {
                best = (ratio, Some(p.clone()));
            }
        }
    }
    GrowthReport { max_ratio: best.0, pass: best.0 <= 1.0 + 1e-9, witness: best.1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    /// `E|ξ|` and its standard error.
    pub terminal_abs_mean: f64,
    pub terminal_se: f64,
    /// `E ∫ |f(s,0,0,0)| ds` and its standard error.
    pub zero_section_mean: f64,
    pub zero_section_se: f64,
}

pub fn check_integrability(problem: &BsdeProblem, sample: &PathSample) -> IntegrabilityReport {
    let n = problem.grid.steps;
    let dt = problem.grid.dt();
    let st = &sample.states;
    let xi: Vec<f64> = (0..sample.n_paths())
        .map(|p| problem.terminal_value(StateView { brownian: st.brownian(p, n), counts: st.counts(p, n) }).abs())
        .collect();
    let f0: Vec<f64> = crate::par::map_range(sample.n_paths(), |p| {
        (0..n)
            .map(|j| {
                let s = StateView { brownian: st.brownian(p, j), counts: st.counts(p, j) };
                problem.driver_at_zero(problem.grid.time(j), s).abs() * dt
            })
            .sum()
    });
    let (a, a_se) = sample.mean_se(&xi);
    let (b, b_se) = sample.mean_se(&f0);
    IntegrabilityReport { terminal_abs_mean: a, terminal_se: a_se, zero_section_mean: b, zero_section_se: b_se }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::generators::{Affine, FnDriver, LipschitzSmooth};

    fn marks() -> MarkSpace {
        MarkSpace::scalar(&[(1.0, 2.0)]).unwrap()
    }

    fn cloud() -> ArgumentCloud {
        ArgumentCloud::sample(1, 1, 1.0, 200, 1e3, 5)
    }

    #[test]
    fn linear_generator_measures_its_slope() {
        let f = GeneratorSpec::from_driver(Arc::new(Affine { y: 2.0, ..Affine::default() }), &marks(), 2.0);
        let r = check_lipschitz(&f, &marks(), &cloud());
        assert!((r.measured - 2.0).abs() < 1e-9);
        assert!(r.pass);
        let r = check_lipschitz(&f.with_kappa(1.0), &marks(), &cloud());
        assert!(!r.pass);
        assert!(r.witness.is_some());
    }

    #[test]
    fn smooth_coupled_generator_is_one_lipschitz() {
        let f = LipschitzSmooth { sin_y: 1.0, z: vec![0.5], v_norm: 0.3, constant: 0.0 };
        let spec = GeneratorSpec::from_driver(Arc::new(f), &marks(), 2.0).with_kappa(1.0);
        let r = check_lipschitz(&spec, &marks(), &ArgumentCloud::sample(1, 1, 1.0, 300, 3.0, 9));
        assert!(r.pass, "measured {}", r.measured);
        assert!(r.measured > 0.9, "cloud should probe near-maximal slopes, got {}", r.measured);
    }

    #[test]
    fn zv_free_generator_passes_growth_with_zero_ratio() {
        let spec = GeneratorSpec::from_driver(Arc::new(Affine { y: 3.0, constant: 1.0, ..Affine::default() }), &marks(), 2.0);
        let r = check_growth(&spec, &marks(), &cloud());
        assert!(r.pass);
        assert_eq!(r.max_ratio, 0.0);
    }

    #[test]
    fn square_root_growth_passes() {
        let f = FnDriver::new("y+sqrt(1+|z|)-1", |x| x.y + (1.0 + x.z[0].abs()).sqrt() - 1.0);
        let spec = GeneratorSpec::from_driver(Arc::new(f), &marks(), 2.0).with_growth(1.0, 0.5, 1.0).unwrap();
        let r = check_growth(&spec, &marks(), &cloud());
        assert!(r.pass, "ratio {}", r.max_ratio);
    }

    #[test]
    fn quadratic_growth_fails() {
        let f = FnDriver::new("y+z^2", |x| x.y + x.z[0] * x.z[0]);
        for (gamma, alpha) in [(1.0, 0.5), (10.0, 0.9), (100.0, 0.99)] {
            let spec = GeneratorSpec::from_driver(Arc::new(f.clone()), &marks(), 2.0)
                .with_growth(gamma, alpha, 1.0)
                .unwrap();
            let r = check_growth(&spec, &marks(), &cloud());
            assert!(!r.pass);
            assert!(r.witness.unwrap().z[0].abs() > 10.0);
        }
    }
}
