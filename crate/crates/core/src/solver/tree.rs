//! Exact backward induction on the scenario lattice.

use std::sync::Arc;

use serde::Serialize;

use super::solution::{Backend, Fields, Solution};
use super::{check_step_size, implicit_step, Frozen, InnerConfig};
use crate::error::{Error, Result};
use crate::generators::{BsdeProblem, StateView};
use crate::par;
use crate::randomness::{build_scenario_tree, ScenarioTree};

/// Terminal values `ξ` at the lattice leaves.
pub(crate) fn leaf_values(problem: &BsdeProblem, tree: &ScenarioTree) -> Vec<f64> {
    let n = tree.depth();
    par::map_range(tree.n_nodes(n), |node| {
        let mut b = vec![0.0; tree.dim];
        tree.brownian_state(n, node, &mut b);
        problem.terminal_value(StateView { brownian: &b, counts: tree.counts(n, node) })
    })
}

/// Solves backward from depth `k1` (values `terminal`) to depth `k0`.
///
/// At each node, with children grouped by jump branch `j` (0 = none):
/// `A_j` is the average of the child values over sign patterns, `E[Y_next]
/// = A_0 + Σ_i p_i (A_i − A_0)`, `V_i = A_i − A_0`, and `Z` is the
/// increment projection `E[Y_next ΔB]/Δt`. Child values are centred on the
/// first child before averaging so that constants propagate exactly.
pub(crate) fn tree_backward(
    problem: &BsdeProblem,
    tree: &ScenarioTree,
    k0: usize,
    k1: usize,
    terminal: Vec<f64>,
    frozen: Option<Frozen<'_>>,
    inner: &InnerConfig,
) -> Result<Fields> {
    let (d, m) = (tree.dim, tree.marks.len());
    let dt = tree.grid.dt();
    let h = tree.step_size();
    let signs = 1usize << d;
    let probs = tree.branch_probabilities();
    let len = k1 - k0;
    let mut y = vec![Vec::new(); len + 1];
    let mut z = vec![Vec::new(); len];
    let mut v = vec![Vec::new(); len];
    let mut f = vec![Vec::new(); len];
    y[len] = terminal;
    for k in (k0..k1).rev() {
        let local = k - k0;
        let next = &y[local + 1];
        let t = tree.grid.time(k);
        let rows = par::try_map_range(tree.n_nodes(k), |node| {
            let mut b = vec![0.0; d];
            tree.brownian_state(k, node, &mut b);
            let counts = tree.counts(k, node);
            let reference = next[tree.child(k, node, 0, 0)];
            let mut a = vec![0.0; m + 1];
            let mut zb = vec![0.0; (m + 1) * d];
            for j in 0..=m {
                let mut sum = 0.0;
                for s in 0..signs {
                    let dy = next[tree.child(k, node, j, s)] - reference;
                    sum += dy;
                    for l in 0..d {
                        if s >> l & 1 == 1 {
                            zb[j * d + l] += dy;
                        } else {
                            zb[j * d + l] -= dy;
                        }
                    }
                }
                a[j] = reference + sum / signs as f64;
                for l in 0..d {
                    zb[j * d + l] /= signs as f64 * h;
                }
            }
            let mut e = a[0];
            let mut zn: Vec<f64> = zb[..d].to_vec();
            let mut vn = vec![0.0; m];
            for i in 1..=m {
                e += probs[i] * (a[i] - a[0]);
                vn[i - 1] = a[i] - a[0];
                for l in 0..d {
                    zn[l] += probs[i] * (zb[i * d + l] - zb[l]);
                }
            }
            let state = StateView { brownian: &b, counts };
            let (fz, fv): (&[f64], &[f64]) = match &frozen {
                Some(fr) => (&fr.z[local][node * d..(node + 1) * d], &fr.v[local][node * m..(node + 1) * m]),
                None => (&zn, &vn),
            };
            let (yn, fval) = implicit_step(e, dt, inner, k, |yy| problem.driver(t, state, yy, fz, fv))?;
            Ok::<_, Error>((yn, zn, vn, fval))
        })?;
        let mut yk = Vec::with_capacity(rows.len());
        let mut zk = Vec::with_capacity(rows.len() * d);
        let mut vk = Vec::with_capacity(rows.len() * m);
        let mut fk = Vec::with_capacity(rows.len());
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

/// Exact backward induction on `tree`, which must share the problem's grid,
/// marks and dimension.
pub fn solve_tree(problem: &BsdeProblem, tree: Arc<ScenarioTree>) -> Result<Solution> {
    solve_tree_with(problem, tree, &InnerConfig::default())
}

pub fn solve_tree_with(problem: &BsdeProblem, tree: Arc<ScenarioTree>, inner: &InnerConfig) -> Result<Solution> {
    check_tree(problem, &tree)?;
    check_step_size(problem)?;
    let leaves = leaf_values(problem, &tree);
    let fields = tree_backward(problem, &tree, 0, tree.depth(), leaves, None, inner)?;
    Ok(tree_solution(problem, tree, fields))
}

/// Builds the lattice for `problem` and solves on it.
pub fn solve_on_new_tree(problem: &BsdeProblem) -> Result<Solution> {
    let tree = build_scenario_tree(problem.grid, &problem.marks, problem.dim)?;
    solve_tree(problem, Arc::new(tree))
}

pub(crate) fn check_tree(problem: &BsdeProblem, tree: &ScenarioTree) -> Result<()> {
    if tree.grid != problem.grid || tree.dim != problem.dim || tree.marks != problem.marks {
        return Err(Error::invalid("scenario lattice does not match the problem's grid, marks or dimension"));
    }
    Ok(())
}

pub(crate) fn tree_solution(problem: &BsdeProblem, tree: Arc<ScenarioTree>, fields: Fields) -> Solution {
    Solution {
        fingerprint: problem.fingerprint(),
        grid: problem.grid,
        dim: problem.dim,
        marks: problem.marks.clone(),
        y0: fields.y[0][0],
        y0_se: 0.0,
        backend: Backend::Tree(tree),
        fields,
    }
}

/// Largest one-step residual `Y_{k+1} − Y_k + f Δt − Z·ΔB − Σ_i V_i (1_i − p_i)`
/// over all lattice edges, and the largest conditional mean of it over nodes.
///
/// The conditional mean vanishes by construction. The residual itself
/// vanishes only when the next-step values are additive across the
/// Brownian coordinates and the jump branch: the one-step lattice has
/// `2^d (1 + m)` outcomes but only `1 + d + m` hedging directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub conditional_max: f64,
    pub pointwise_max: f64,
}

pub fn martingale_residual(solution: &Solution) -> Result<ResidualReport> {
    let tree = solution.tree().ok_or_else(|| Error::invalid("martingale residual needs a lattice solution"))?;
    let (d, m) = (tree.dim, tree.marks.len());
    let dt = tree.grid.dt();
    let h = tree.step_size();
    let probs = tree.branch_probabilities();
    let fl = &solution.fields;
    let sign_prob = 0.5f64.powi(d as i32);
    let mut out = ResidualReport { conditional_max: 0.0, pointwise_max: 0.0 };
    for k in 0..tree.depth() {
        let per_node = par::map_range(tree.n_nodes(k), |node| {
            let (y, fv) = (fl.y[k][node], fl.f[k][node]);
            let z = &fl.z[k][node * d..(node + 1) * d];
            let v = &fl.v[k][node * m..(node + 1) * m];
            let comp: f64 = v.iter().zip(&probs[1..]).map(|(a, p)| a * p).sum();
            let (mut mean, mut worst) = (0.0f64, 0.0f64);
            for j in 0..=m {
                for s in 0..1usize << d {
                    let next = fl.y[k + 1][tree.child(k, node, j, s)];
                    let zdb: f64 = (0..d).map(|l| if s >> l & 1 == 1 { z[l] * h } else { -z[l] * h }).sum();
                    let jump = if j > 0 { v[j - 1] } else { 0.0 };
                    let r = next - y + fv * dt - zdb - (jump - comp);
                    mean += sign_prob * probs[j] * r;
                    worst = worst.max(r.abs());
                }
            }
            (mean.abs(), worst)
        });
        for (c, w) in per_node {
            out.conditional_max = out.conditional_max.max(c);
            out.pointwise_max = out.pointwise_max.max(w);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::generators::{
        Affine, BrownianFunctional, BrownianShape, Constant, FnTerminal, GeneratorSpec, JumpCountFunctional,
        SumTerminal, TerminalSpec,
    };
    use crate::randomness::{MarkSpace, TimeGrid};

    fn problem(t: f64, n: usize, d: usize, marks: MarkSpace, f: Affine, xi: TerminalSpec) -> BsdeProblem {
        let g = GeneratorSpec::from_driver(Arc::new(f), &marks, 2.0);
        BsdeProblem::new(TimeGrid::new(t, n).unwrap(), d, marks, g, xi).unwrap()
    }

    fn one_mark() -> MarkSpace {
        MarkSpace::scalar(&[(1.0, 2.0)]).unwrap()
    }

    #[test]
    fn constant_terminal_is_reproduced_exactly() {
        let p = problem(1.0, 6, 2, MarkSpace::scalar(&[(1.0, 2.0), (-1.0, 0.5)]).unwrap(), Affine::default(), TerminalSpec::new(Arc::new(Constant(0.3))));
        let s = solve_on_new_tree(&p).unwrap();
        assert!(s.fields.y.iter().flatten().all(|&y| y == 0.3));
        assert!(s.fields.z.iter().chain(&s.fields.v).flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn brownian_terminal_is_its_own_martingale() {
        let xi = TerminalSpec::new(Arc::new(BrownianFunctional::new(BrownianShape::Linear, 1.0)));
        let p = problem(1.0, 16, 1, one_mark(), Affine::default(), xi);
        let s = solve_on_new_tree(&p).unwrap();
        let tree = s.tree().unwrap();
        let mut b = [0.0];
        for k in 0..=16 {
            for node in 0..tree.n_nodes(k) {
                tree.brownian_state(k, node, &mut b);
                assert_eq!(s.fields.y[k][node], b[0]);
            }
        }
        assert!(s.fields.z.iter().flatten().all(|&z| z == 1.0));
        assert!(s.fields.v.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_growth_matches_exponential() {
        let f = Affine { y: 0.5, ..Affine::default() };
        let p = problem(1.0, 100, 1, one_mark(), f, TerminalSpec::new(Arc::new(Constant(1.0))));
        let y0 = solve_on_new_tree(&p).unwrap().y0;
        let exact = 0.5f64.exp();
        assert!((y0 - exact).abs() < 0.01 * exact);
        // implicit Euler on y' = -a y: Y_0 = (1 - aΔt)^{-N}
        assert!((y0 - (1.0 - 0.005f64).powi(-100)).abs() < 1e-10);
    }

    #[test]
    fn compensated_count_has_unit_jump_coefficient() {
        let marks = one_mark();
        let xi = TerminalSpec::new(Arc::new(JumpCountFunctional::compensated_total(marks.intensities(), 1.0)));
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let p = problem(1.0, n, 1, marks.clone(), Affine::default(), xi.clone());
            let s = solve_on_new_tree(&p).unwrap();
            assert!(s.fields.z.iter().flatten().all(|z| z.abs() < 1e-12));
            let err = s.fields.v.iter().flatten().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "V is exactly one on every node, got error {err}");
            errs.push(s.y0.abs());
        }
        // Y_0 = E[N_T] − ΛT on the lattice, biased by one-jump-per-step truncation
        assert!(errs[0] > 0.0);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "bias ratio {ratio}");
        }
    }

    #[test]
    fn zero_generator_gives_conditional_expectations() {
        let marks = MarkSpace::scalar(&[(1.0, 1.0), (2.0, 0.5)]).unwrap();
        let xi: Arc<dyn crate::generators::Terminal> = Arc::new(FnTerminal::new("mix", |s| {
            (s.brownian[0] * 1.3).sin() + s.brownian[0].powi(2) * s.counts[1] as f64 + s.counts[0] as f64
        }));
        let p = problem(1.0, 3, 1, marks, Affine::default(), TerminalSpec::new(xi));
        let s = solve_on_new_tree(&p).unwrap();
        let tree = s.tree().unwrap();
        let paths = tree.enumerate_paths(1 << 20).unwrap();
        let w = paths.weights.as_ref().unwrap();
        let xi_path: Vec<f64> = (0..paths.n_paths())
            .map(|q| p.terminal_value(StateView { brownian: paths.states.brownian(q, 3), counts: paths.states.counts(q, 3) }))
            .collect();
        for k in 0..=3 {
            for node in 0..tree.n_nodes(k) {
                let (mut num, mut den) = (0.0, 0.0);
                for q in 0..paths.n_paths() {
                    if paths.node(q, k) == Some(node) {
                        num += w[q] * xi_path[q];
                        den += w[q];
                    }
                }
                if den > 0.0 {
                    assert!((s.fields.y[k][node] - num / den).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doubling_steps_halves_the_error() {
        let f = Affine { y: 0.5, ..Affine::default() };
        let exact = 0.5f64.exp();
        let err = |n| {
            let p = problem(1.0, n, 1, one_mark(), f.clone(), TerminalSpec::new(Arc::new(Constant(1.0))));
            (solve_on_new_tree(&p).unwrap().y0 - exact).abs()
        };
        let ratio = err(50) / err(100);
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn residual_vanishes_in_conditional_mean() {
        let marks = MarkSpace::scalar(&[(1.0, 1.0), (-0.5, 2.0)]).unwrap();
        let f = Affine { y: 0.3, z: vec![0.2, -0.1], v_norm: 0.1, ..Affine::default() };
        let xi: Arc<dyn crate::generators::Terminal> =
            Arc::new(FnTerminal::new("cross", |s| (s.brownian[0] * s.brownian[1]).cos() * (1 + s.counts[0]) as f64));
        let p = problem(1.0, 5, 2, marks.clone(), f, TerminalSpec::new(xi));
        let r = martingale_residual(&solve_on_new_tree(&p).unwrap()).unwrap();
        assert!(r.conditional_max < 1e-13, "{r:?}");
        assert!(r.pointwise_max > 1e-3, "cross terms cannot be hedged on the lattice");

        let sep = TerminalSpec::new(Arc::new(SumTerminal(vec![
            Arc::new(BrownianFunctional::new(BrownianShape::Linear, 1.0)),
            Arc::new(JumpCountFunctional { coefficients: vec![1.0, -2.0], offset: 0.0 }),
        ])));
        let p = problem(1.0, 5, 2, marks, Affine::default(), sep);
        let r = martingale_residual(&solve_on_new_tree(&p).unwrap()).unwrap();
        assert!(r.pointwise_max < 1e-13, "{r:?}");
    }

    #[test]
    fn homogeneous_generator_scales_bit_exactly() {
        let marks = MarkSpace::scalar(&[(1.0, 1.5)]).unwrap();
        let f = Affine { y: 0.4, z: vec![0.3], v: vec![-0.2], v_norm: 0.1, ..Affine::default() };
        let xi: Arc<dyn crate::generators::Terminal> =
            Arc::new(FnTerminal::new("xi", |s| (s.brownian[0]).sin() + 0.5 * s.counts[0] as f64));
        let p = problem(1.0, 6, 1, marks, f, TerminalSpec::new(xi));
        let a = solve_on_new_tree(&p).unwrap();
        let b = solve_on_new_tree(&p.scaled(2.0).unwrap()).unwrap();
        for (x, y) in [(&a.fields.y, &b.fields.y), (&a.fields.z, &b.fields.z), (&a.fields.v, &b.fields.v)] {
            for (u, w) in x.iter().flatten().zip(y.iter().flatten()) {
                assert_eq!(2.0 * u, *w);
            }
        }
    }

    #[test]
    fn step_size_and_shape_are_checked() {
        let f = Affine { y: 20.0, ..Affine::default() };
        let p = problem(1.0, 10, 1, one_mark(), f, TerminalSpec::new(Arc::new(Constant(1.0))));
        assert!(matches!(solve_on_new_tree(&p), Err(Error::StepSize { .. })));
        let q = problem(1.0, 4, 1, one_mark(), Affine::default(), TerminalSpec::new(Arc::new(Constant(1.0))));
        let other = build_scenario_tree(TimeGrid::new(1.0, 5).unwrap(), &one_mark(), 1).unwrap();
        assert!(solve_tree(&q, Arc::new(other)).is_err());
    }
}
