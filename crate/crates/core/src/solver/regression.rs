//! Least-squares Monte Carlo: conditional expectations by projection onto
//! polynomials of the current state.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::solution::{Backend, Fields, Solution};
use super::{check_step_size, implicit_step, Frozen, InnerConfig};
use crate::error::{Error, Result};
use crate::generators::{BsdeProblem, StateView};
use crate::par;
use crate::randomness::{Estimator, JumpLaw, PathSample, PathStates};

/// What to do with basis columns that are numerically dependent on earlier
/// ones (after constant columns have been dropped).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    #[default]
    Prune,
    Reject,
}

/// Monomials of total degree at most `degree` in `(B^1, …, B^d, N^1, …, N^m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub degree: usize,
    #[serde(default)]
    pub rank_policy: RankPolicy,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig { degree: 2, rank_policy: RankPolicy::Prune }
    }
}

impl BasisConfig {
    pub fn new(degree: usize) -> Self {
        BasisConfig { degree, ..Self::default() }
    }

    /// Exponent vectors of the non-constant monomials.
    pub fn exponents(&self, vars: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; vars];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if pos == cur.len() {
                if cur.iter().any(|&e| e > 0) {
                    out.push(cur.clone());
                }
                return;
            }
            for e in 0..=left {
                cur[pos] = e;
                rec(pos + 1, left - e, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, self.degree as u32, &mut cur, &mut out);
        out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
        out
    }
}

const DEPENDENCE_TOL: f64 = 1e-9;

/// Orthonormal basis of the centred regressors, under the sample weights.
struct Projector {
    weights: Option<Vec<f64>>,
    sqrt_w: Option<Vec<f64>>,
    columns: Vec<Vec<f64>>,
}

impl Projector {
    fn new(raw: Vec<Vec<f64>>, weights: Option<&[f64]>, policy: RankPolicy, step: usize) -> Result<Self> {
        let sqrt_w: Option<Vec<f64>> = weights.map(|w| w.iter().map(|x| x.sqrt()).collect());
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (c, mut col) in raw.into_iter().enumerate() {
            let mean = crate::randomness::weighted_mean(&col, weights);
            col.iter_mut().for_each(|x| *x -= mean);
            if let Some(s) = &sqrt_w {
                col.iter_mut().zip(s).for_each(|(x, s)| *x *= s);
            }
            let norm0 = norm(&col);
            if norm0 == 0.0 || !norm0.is_finite() {
                continue;
            }
            for _ in 0..2 {
                for q in &columns {
                    let r = dot(q, &col);
                    col.iter_mut().zip(q).for_each(|(x, q)| *x -= r * q);
                }
            }
            let rest = norm(&col);
            if rest <= DEPENDENCE_TOL * norm0 {
                match policy {
                    RankPolicy::Prune => continue,
                    RankPolicy::Reject => {
                        return Err(Error::Conditioning {
                            step,
                            detail: format!("basis column {} is linearly dependent (relative residual {:.1e})", c + 1, rest / norm0),
                        })
                    }
                }
            }
            col.iter_mut().for_each(|x| *x /= rest);
            columns.push(col);
        }
        Ok(Projector { weights: weights.map(<[f64]>::to_vec), sqrt_w, columns })
    }

    /// Fitted values of `y`.
    fn project(&self, y: &[f64]) -> Vec<f64> {
        let mean = crate::randomness::weighted_mean(y, self.weights.as_deref());
        let mut r: Vec<f64> = y.iter().map(|x| x - mean).collect();
        if let Some(s) = &self.sqrt_w {
            r.iter_mut().zip(s).for_each(|(x, s)| *x *= s);
        }
        let mut fit = vec![0.0; y.len()];
        for q in &self.columns {
            let c = dot(q, &r);
            fit.iter_mut().zip(q).for_each(|(f, q)| *f += c * q);
        }
        if let Some(s) = &self.sqrt_w {
            fit.iter_mut().zip(s).for_each(|(f, s)| *f /= s);
        }
        fit.iter_mut().for_each(|f| *f += mean);
        fit
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Backward regression from grid index `k1` (per-path values `terminal`)
/// to `k0` on the paths of `sample`.
pub(crate) fn mc_backward(
    problem: &BsdeProblem,
    sample: &PathSample,
    basis: &BasisConfig,
    k0: usize,
    k1: usize,
    terminal: Vec<f64>,
    frozen: Option<Frozen<'_>>,
    inner: &InnerConfig,
) -> Result<Fields> {
    let (d, m) = (problem.dim, problem.marks.len());
    let np = sample.n_paths();
    let dt = problem.grid.dt();
    let st = &sample.states;
    let law = sample.batch.jump_law;
    let p_jump: Vec<f64> = (0..m).map(|i| law.step_jump_probability(&problem.marks, i, dt)).collect();
    let p_none = (-problem.marks.total_intensity() * dt).exp();
    let exps = basis.exponents(d + m);
    let weights = sample.weights.as_deref();
    let len = k1 - k0;
    let mut y = vec![Vec::new(); len + 1];
    let mut z = vec![Vec::new(); len];
    let mut v = vec![Vec::new(); len];
    let mut f = vec![Vec::new(); len];
    y[len] = terminal;
    for k in (k0..k1).rev() {
        let local = k - k0;
        let next = &y[local + 1];
        let raw: Vec<Vec<f64>> = exps
            .iter()
            .map(|e| {
                par::map_range(np, |p| {
                    let b = st.brownian(p, k);
                    let c = st.counts(p, k);
                    let mut x = 1.0;
                    for (l, &pw) in e.iter().enumerate() {
                        let base = if l < d { b[l] } else { c[l - d] as f64 };
                        x *= base.powi(pw as i32);
                    }
                    x
                })
            })
            .collect();
        let proj = Projector::new(raw, weights, basis.rank_policy, k)?;
        let e_next = proj.project(next);
        let z_fit: Vec<Vec<f64>> = (0..d)
            .map(|l| {
                let target: Vec<f64> =
                    (0..np).map(|p| (next[p] - e_next[p]) * sample.batch.increment(p, k)[l] / dt).collect();
                proj.project(&target)
            })
            .collect();
        let v_fit: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let target: Vec<f64> = (0..np)
                    .map(|p| (next[p] - e_next[p]) * jump_weight(law, st, p, k, i, &p_jump, p_none))
                    .collect();
                proj.project(&target)
            })
            .collect();
        let t = problem.grid.time(k);
        let rows = par::try_map_range(np, |p| {
            let zp: Vec<f64> = z_fit.iter().map(|c| c[p]).collect();
            let vp: Vec<f64> = v_fit.iter().map(|c| c[p]).collect();
            let state = StateView { brownian: st.brownian(p, k), counts: st.counts(p, k) };
            let (fz, fv): (&[f64], &[f64]) = match &frozen {
                Some(fr) => (&fr.z[local][p * d..(p + 1) * d], &fr.v[local][p * m..(p + 1) * m]),
                None => (&zp, &vp),
            };
            let (yp, fp) = implicit_step(e_next[p], dt, inner, k, |yy| problem.driver(t, state, yy, fz, fv))?;
            Ok::<_, Error>((yp, zp, vp, fp))
        })?;
        let mut yk = Vec::with_capacity(np);
        let mut zk = Vec::with_capacity(np * d);
        let mut vk = Vec::with_capacity(np * m);
        let mut fk = Vec::with_capacity(np);
        for (a, b, c, e) in rows {
            yk.push(a);
            zk.extend(b);
            vk.extend(c);
            fk.push(e);
        }
        y[local] = yk;
        z[local] = zk;
        v[local] = vk;
        f[local] = fk;
    }
    Ok(Fields { first: k0, y, z, v, f })
}

/// Weight `w` with `E[Y w | state] = E[Y | jump i] − E[Y | no jump]`.
///
/// Under the Poisson law the marks jump independently and the weight is
/// `(1_i − p_i) / (p_i (1 − p_i))`; on the lattice at most one mark jumps per
/// step and it is `1_i / p_i − 1_none / p_none`.
fn jump_weight(law: JumpLaw, st: &PathStates, p: usize, k: usize, i: usize, p_jump: &[f64], p_none: f64) -> f64 {
    let pi = p_jump[i];
    match law {
        JumpLaw::Poisson => {
            let ind = if st.jumped(p, k, i) { 1.0 } else { 0.0 };
            (ind - pi) / (pi * (1.0 - pi))
        }
        JumpLaw::Lattice => {
            if st.jumped(p, k, i) {
                1.0 / pi
            } else if (0..p_jump.len()).any(|j| st.jumped(p, k, j)) {
                0.0
            } else {
                -1.0 / p_none
            }
        }
    }
}

/// Terminal values `ξ` along the paths.
pub(crate) fn path_terminal(problem: &BsdeProblem, sample: &PathSample) -> Vec<f64> {
    let n = problem.grid.steps;
    par::map_range(sample.n_paths(), |p| {
        problem.terminal_value(StateView { brownian: sample.states.brownian(p, n), counts: sample.states.counts(p, n) })
    })
}

/// Standard error of `Y_0` from the pathwise cash flow `ξ + Σ_j f_j Δt`.
pub(crate) fn cash_flow_se(problem: &BsdeProblem, sample: &PathSample, fields: &Fields) -> f64 {
    if sample.estimator == Estimator::Tree {
        return 0.0;
    }
    let dt = problem.grid.dt();
    let xi = path_terminal(problem, sample);
    let flows: Vec<f64> = (0..sample.n_paths())
        .map(|p| xi[p] + fields.f.iter().map(|fk| fk[p] * dt).sum::<f64>())
        .collect();
    sample.mean_se(&flows).1
}

pub(crate) fn check_sample(problem: &BsdeProblem, sample: &PathSample) -> Result<()> {
    let b = &sample.batch;
    if b.grid != problem.grid || b.dim != problem.dim || b.marks != problem.marks {
        return Err(Error::invalid("path batch does not match the problem's grid, marks or dimension"));
    }
    Ok(())
}

pub(crate) fn paths_solution(problem: &BsdeProblem, sample: Arc<PathSample>, fields: Fields) -> Solution {
    let se = cash_flow_se(problem, &sample, &fields);
    Solution {
        fingerprint: problem.fingerprint(),
        grid: problem.grid,
        dim: problem.dim,
        marks: problem.marks.clone(),
        y0: sample.mean(&fields.y[0]),
        y0_se: se,
        backend: Backend::Paths(sample),
        fields,
    }
}

/// Regression solve on the given paths.
pub fn solve_mc_regression(problem: &BsdeProblem, sample: Arc<PathSample>, basis: &BasisConfig) -> Result<Solution> {
    solve_mc_regression_with(problem, sample, basis, &InnerConfig::default())
}

pub fn solve_mc_regression_with(
    problem: &BsdeProblem,
    sample: Arc<PathSample>,
    basis: &BasisConfig,
    inner: &InnerConfig,
) -> Result<Solution> {
    check_sample(problem, &sample)?;
    check_step_size(problem)?;
    let xi = path_terminal(problem, &sample);
    let fields = mc_backward(problem, &sample, basis, 0, problem.grid.steps, xi, None, inner)?;
    Ok(paths_solution(problem, sample, fields))
}
