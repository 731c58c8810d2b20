//! Pathwise stochastic integrals against the driving noise.
//!
//! With finitely many jumps per path the compensated Poisson integral is a
//! finite sum: the integral of a predictable field `V` is the sum of `V` over the realized jumps minus the
//! compensator `Σ_j Σ_i V_j(e_i) λ_i Δt`. Integrands are read at the left
//! endpoint of each step; a jump in `(t_j, t_{j+1}]` uses the step-`j` value.
//! Between jumps the compensator is spread linearly over each step; the
//! running integral moves discontinuously only at jump events.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::norms::ProcessSample;
use crate::par;
use crate::randomness::{MarkSpace, PathBatch, TimeGrid};

/// A predictable integrand `V_s(e)` on a finite mark set, `[path][step][mark]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    pub grid: TimeGrid,
    pub marks: MarkSpace,
    pub n_paths: usize,
    pub values: Vec<f64>,
}

impl RandomField {
    pub fn new(grid: TimeGrid, marks: MarkSpace, n_paths: usize, values: Vec<f64>) -> Result<Self> {
        let m = marks.len();
        if values.len() != n_paths * grid.steps * m {
            return Err(Error::invalid(format!(
                "field has {} values, expected {n_paths} x {} x {m}",
                values.len(),
                grid.steps
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        Ok(RandomField { grid, marks, n_paths, values })
    }

    /// Builds `V` from `f(path, step, mark)`.
    pub fn from_fn(
        grid: TimeGrid,
        marks: &MarkSpace,
        n_paths: usize,
        f: impl Fn(usize, usize, usize) -> f64 + Sync,
    ) -> Result<Self> {
        let (n, m) = (grid.steps, marks.len());
        let mut values = vec![0.0; n_paths * n * m];
        par::for_each_chunk(&mut values, (n * m).max(1), |p, row| {
            for (k, v) in row.iter_mut().enumerate() {
                *v = f(p, k / m, k % m);
            }
        });
        Self::new(grid, marks.clone(), n_paths, values)
    }

    pub fn constant(grid: TimeGrid, marks: &MarkSpace, n_paths: usize, c: f64) -> Result<Self> {
        Self::from_fn(grid, marks, n_paths, |_, _, _| c)
    }

    pub fn at(&self, path: usize, step: usize) -> &[f64] {
        let m = self.marks.len();
        let at = (path * self.grid.steps + step) * m;
        &self.values[at..at + m]
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &RandomField, b: f64) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::invalid("fields have different shapes"));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self::new(self.grid, self.marks.clone(), self.n_paths, values)
    }

    fn check_against(&self, batch: &PathBatch) -> Result<()> {
        if self.grid != batch.grid || self.marks != batch.marks || self.n_paths != batch.n_paths {
            return Err(Error::invalid("field grid, marks or path count do not match the batch"));
        }
        Ok(())
    }
}

/// The running integral at one jump event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpRecord {
    pub time: f64,
    pub step: usize,
    pub mark: usize,
    pub before: f64,
    pub after: f64,
}

/// Running values at grid nodes, quadratic variation at grid nodes, and the
/// running value on both sides of every jump.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralResult {
    pub running: ProcessSample,
    pub quadratic_variation: ProcessSample,
    pub jumps: Vec<Vec<JumpRecord>>,
}

impl IntegralResult {
    pub fn terminal(&self, path: usize) -> f64 {
        self.running.at(path, self.running.n_times - 1)[0]
    }

    pub fn terminal_qv(&self, path: usize) -> f64 {
        self.quadratic_variation.at(path, self.quadratic_variation.n_times - 1)[0]
    }

    /// `{"terminal": [...], "quadratic_variation": [...]}`.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export {
            terminal: Vec<f64>,
            quadratic_variation: Vec<f64>,
        }
        let n = self.running.n_paths;
        Ok(serde_json::to_string(&Export {
            terminal: (0..n).map(|p| self.terminal(p)).collect(),
            quadratic_variation: (0..n).map(|p| self.terminal_qv(p)).collect(),
        })?)
    }
}

/// Running `Σ_{k<j} Z_k · ΔB_k` at every grid node; `z` is `[path][step][dim]`.
pub fn brownian_integral(z: &[f64], batch: &PathBatch) -> Result<ProcessSample> {
    let (n, d) = (batch.grid.steps, batch.dim);
    if z.len() != batch.n_paths * n * d {
        return Err(Error::invalid(format!(
            "integrand has {} values, expected {} x {n} x {d}",
            z.len(),
            batch.n_paths
        )));
    }
    ProcessSample::from_fn(batch.grid, batch.n_paths, n + 1, 1, |p, j, out| {
        out[0] = (0..j)
            .map(|k| {
                let zk = &z[(p * n + k) * d..(p * n + k + 1) * d];
                zk.iter().zip(batch.increment(p, k)).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum();
    })
}

/// Compensated integral `∫∫ V dμ̃` with its quadratic variation.
pub fn poisson_integral_compensated(v: &RandomField, batch: &PathBatch) -> Result<IntegralResult> {
    v.check_against(batch)?;
    let (n, dt) = (batch.grid.steps, batch.grid.dt());
    let lambda = batch.marks.intensities();
    let per_path = par::map_range(batch.n_paths, |p| {
        let mut running = Vec::with_capacity(n + 1);
        let mut qv = Vec::with_capacity(n + 1);
        let mut jumps = Vec::new();
        let (mut m, mut q) = (0.0, 0.0);
        running.push(m);
        qv.push(q);
        let mut events = batch.jump_events[p].iter().peekable();
        for j in 0..n {
            let vj = v.at(p, j);
            let comp: f64 = vj.iter().zip(lambda).map(|(x, l)| x * l * dt).sum();
            let t0 = batch.grid.time(j);
            let mut jumped = 0.0;
            while let Some(e) = events.next_if(|e| e.step == j) {
                let before = m + jumped - comp * ((e.time - t0) / dt).min(1.0);
                jumped += vj[e.mark];
                q += vj[e.mark] * vj[e.mark];
                jumps.push(JumpRecord { time: e.time, step: j, mark: e.mark, before, after: before + vj[e.mark] });
            }
            m = m + jumped - comp;
            running.push(m);
            qv.push(q);
        }
        (running, qv, jumps)
    });
    let mut running = Vec::with_capacity(batch.n_paths * (n + 1));
    let mut qv = Vec::with_capacity(batch.n_paths * (n + 1));
    let mut jumps = Vec::with_capacity(batch.n_paths);
    for (r, q, js) in per_path {
        running.extend(r);
        qv.extend(q);
        jumps.push(js);
    }
    Ok(IntegralResult {
        running: ProcessSample::new(batch.grid, batch.n_paths, n + 1, 1, running)?,
        quadratic_variation: ProcessSample::new(batch.grid, batch.n_paths, n + 1, 1, qv)?,
        jumps,
    })
}

/// Running `[M,M]_t = Σ_{jumps ≤ t} |V|²` at every grid node.
pub fn quadratic_variation(v: &RandomField, batch: &PathBatch) -> Result<ProcessSample> {
    Ok(poisson_integral_compensated(v, batch)?.quadratic_variation)
}

/// First jump at which the recorded jump of the running integral differs
/// from the integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpViolation {
    pub path: usize,
    pub jump: usize,
    pub time: f64,
    pub expected: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpIdentityReport {
    pub pass: bool,
    pub per_path: Vec<bool>,
    pub first_violation: Option<JumpViolation>,
}

/// Checks `ΔM_τ = V_{step(τ)}(e_i)` at every jump, and that the recorded
/// jumps reproduce the terminal quadratic variation.
///
/// The comparison allows a few units in the last place of the operands,
/// which is the rounding of `after − before` itself.
pub fn jump_identity_check(v: &RandomField, result: &IntegralResult, batch: &PathBatch) -> JumpIdentityReport {
    let n = batch.grid.steps;
    let ulps = |x: f64| 4.0 * f64::EPSILON * x;
    let mut first = None;
    let per_path: Vec<bool> = (0..batch.n_paths)
        .map(|p| {
            let records = result.jumps.get(p).map(Vec::as_slice).unwrap_or(&[]);
            if records.len() != batch.jump_events.get(p).map_or(0, Vec::len) {
                first.get_or_insert(JumpViolation { path: p, jump: records.len(), time: f64::NAN, expected: f64::NAN, observed: f64::NAN });
                return false;
            }
            let mut ok = true;
            for (k, r) in records.iter().enumerate() {
                let expected = v.at(p, r.step)[r.mark];
                let observed = r.after - r.before;
                let scale = r.after.abs().max(r.before.abs()).max(expected.abs());
                if ok && (observed - expected).abs() > ulps(scale) {
                    ok = false;
                    first.get_or_insert(JumpViolation { path: p, jump: k, time: r.time, expected, observed });
                }
            }
            let qv_sum: f64 = records.iter().map(|r| (r.after - r.before).powi(2)).sum();
            let qv_end = result.quadratic_variation.at(p, n)[0];
            if (qv_sum - qv_end).abs() > 1e-9 * qv_end.abs().max(1.0) && ok {
                ok = false;
                first.get_or_insert(JumpViolation { path: p, jump: records.len(), time: batch.grid.horizon, expected: qv_end, observed: qv_sum });
            }
            ok
        })
        .collect();
    JumpIdentityReport { pass: per_path.iter().all(|&b| b), per_path, first_violation: first }
}

/// `(𝔼 Σ_j Σ_i |V_j(e_i)|^p λ_i Δt)^{1/p}`. The sectional norm used inside
/// generators is [`MarkSpace::section_norm`].
pub fn lp_field_norm(v: &RandomField, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("field norm index must be >= 1, got {p}")));
    }
    let dt = v.grid.dt();
    let lambda = v.marks.intensities();
    let per_path = par::map_range(v.n_paths, |path| {
        (0..v.grid.steps)
            .map(|j| v.at(path, j).iter().zip(lambda).map(|(x, l)| x.abs().powf(p) * l * dt).sum::<f64>())
            .sum::<f64>()
    });
    let mean = crate::randomness::weighted_mean(&per_path, None);
    Ok(if mean == 0.0 { 0.0 } else { mean.powf(1.0 / p) })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::randomness::{simulate_brownian, simulate_poisson_measure, JumpEvent, JumpLaw};

    fn batch(steps: usize, marks: &MarkSpace, n: usize, seed: u64) -> PathBatch {
        PathBatch::simulate(TimeGrid::new(1.0, steps).unwrap(), 1, marks, n, seed).unwrap()
    }

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    #[test]
    fn brownian_integral_examples() {
        let marks = MarkSpace::scalar(&[(1.0, 1.0)]).unwrap();
        let b = batch(10, &marks, 20, 1);
        let zero = brownian_integral(&vec![0.0; 200], &b).unwrap();
        assert!(zero.values.iter().all(|&x| x == 0.0));
        let one = brownian_integral(&vec![1.0; 200], &b).unwrap();
        let states = crate::randomness::PathStates::from_batch(&b);
        for p in 0..20 {
            for j in 0..=10 {
                assert!((one.at(p, j)[0] - states.brownian(p, j)[0]).abs() < 1e-14);
            }
        }
        assert!(brownian_integral(&[1.0; 3], &b).is_err());
    }

    #[test]
    fn brownian_integral_is_centred() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let n = 100_000;
        let bm = simulate_brownian(g, 1, n, 3).unwrap();
        let jumps = simulate_poisson_measure(g, &MarkSpace::scalar(&[(1.0, 1.0)]).unwrap(), n, 3).unwrap();
        let b = PathBatch::from_parts(bm, jumps).unwrap();
        let m = brownian_integral(&vec![1.0; n * 4], &b).unwrap();
        let terminal: Vec<f64> = (0..n).map(|p| m.at(p, 4)[0]).collect();
        assert!(mean_sd(&terminal).0.abs() < 4.0 * (1.0 / n as f64).sqrt());
    }

    #[test]
    fn compensated_unit_integral_is_count_minus_compensator() {
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let b = batch(10, &marks, 50, 4);
        let v = RandomField::constant(b.grid, &marks, 50, 1.0).unwrap();
        let r = poisson_integral_compensated(&v, &b).unwrap();
        for p in 0..50 {
            let expected = b.jump_count(p) as f64 - 2.0;
            assert!((r.terminal(p) - expected).abs() < 1e-12);
            assert_eq!(r.terminal_qv(p), b.jump_count(p) as f64);
            assert_eq!(r.running.at(p, 0)[0], 0.0);
        }
        let zero = RandomField::constant(b.grid, &marks, 50, 0.0).unwrap();
        let r0 = poisson_integral_compensated(&zero, &b).unwrap();
        assert!(r0.running.values.iter().chain(&r0.quadratic_variation.values).all(|&x| x == 0.0));
    }

    #[test]
    fn compensated_integral_is_centred() {
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let n = 100_000;
        let b = batch(5, &marks, n, 6);
        let v = RandomField::constant(b.grid, &marks, n, 1.0).unwrap();
        let r = poisson_integral_compensated(&v, &b).unwrap();
        let terminal: Vec<f64> = (0..n).map(|p| r.terminal(p)).collect();
        assert!(mean_sd(&terminal).0.abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn bounded_predictable_integrand_is_centred() {
        let marks = MarkSpace::scalar(&[(1.0, 1.5), (-2.0, 0.5)]).unwrap();
        let n = 100_000;
        let b = batch(8, &marks, n, 10);
        let states = crate::randomness::PathStates::from_batch(&b);
        // depends on the state at the left endpoint only
        let v = RandomField::from_fn(b.grid, &marks, n, |p, j, i| {
            (states.brownian(p, j)[0] + i as f64).cos() + states.counts(p, j)[0].min(2) as f64
        })
        .unwrap();
        let r = poisson_integral_compensated(&v, &b).unwrap();
        let terminal: Vec<f64> = (0..n).map(|p| r.terminal(p)).collect();
        let (m, sd) = mean_sd(&terminal);
        assert!(m.abs() < 4.0 * sd / (n as f64).sqrt(), "mean {m} sd {sd}");
    }

    #[test]
    fn isometry_for_deterministic_integrand() {
        let marks = MarkSpace::scalar(&[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        let n = 100_000;
        let b = batch(10, &marks, n, 12);
        let v = RandomField::from_fn(b.grid, &marks, n, |_, j, i| 1.0 + 0.1 * j as f64 - 0.5 * i as f64).unwrap();
        let r = poisson_integral_compensated(&v, &b).unwrap();
        let terminal: Vec<f64> = (0..n).map(|p| r.terminal(p)).collect();
        let var = mean_sd(&terminal).1.powi(2);
        let target = lp_field_norm(&v, 2.0).unwrap().powi(2);
        assert!((var - target).abs() < 0.05 * target, "var {var} vs {target}");
    }

    #[test]
    fn quadratic_variation_of_two_marked_jumps() {
        let marks = MarkSpace::scalar(&[(1.0, 1.0), (2.0, 1.0)]).unwrap();
        let g = TimeGrid::new(1.0, 2).unwrap();
        let mut b = batch(2, &marks, 1, 0);
        b.jump_events = vec![vec![
            JumpEvent { time: 0.2, step: 0, mark: 0 },
            JumpEvent { time: 0.7, step: 1, mark: 1 },
        ]];
        b.jump_law = JumpLaw::Poisson;
        let v = RandomField::from_fn(g, &marks, 1, |_, _, i| if i == 0 { 2.0 } else { -3.0 }).unwrap();
        let qv = quadratic_variation(&v, &b).unwrap();
        assert_eq!(qv.at(0, 2)[0], 13.0);
        assert_eq!(qv.at(0, 1)[0], 4.0);
        let c = RandomField::constant(g, &marks, 1, 1.5).unwrap();
        assert_eq!(quadratic_variation(&c, &b).unwrap().at(0, 2)[0], 2.25 * 2.0);
    }

    #[test]
    fn jump_identity_detects_tampering() {
        let marks = MarkSpace::scalar(&[(1.0, 2.0), (-0.5, 1.0)]).unwrap();
        let b = batch(6, &marks, 200, 7);
        let v = RandomField::from_fn(b.grid, &marks, 200, |_, _, i| marks.mark_norm(i)).unwrap();
        let mut r = poisson_integral_compensated(&v, &b).unwrap();
        assert!(jump_identity_check(&v, &r, &b).pass);
        let unit = RandomField::constant(b.grid, &marks, 200, 1.0).unwrap();
        let ru = poisson_integral_compensated(&unit, &b).unwrap();
        assert!(jump_identity_check(&unit, &ru, &b).pass);
        let (p, k) = r.jumps.iter().enumerate().find_map(|(p, js)| (!js.is_empty()).then_some((p, 0))).unwrap();
        r.jumps[p][k].after += 1e-6;
        let report = jump_identity_check(&v, &r, &b);
        assert!(!report.pass);
        let at = report.first_violation.unwrap();
        assert_eq!((at.path, at.jump), (p, k));
        assert!(!report.per_path[p]);
    }

    #[test]
    fn lp_field_norm_examples() {
        let m1 = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let g1 = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(lp_field_norm(&RandomField::constant(g1, &m1, 3, 0.0).unwrap(), 1.0).unwrap(), 0.0);
        assert!((lp_field_norm(&RandomField::constant(g1, &m1, 3, 1.0).unwrap(), 1.0).unwrap() - 2.0).abs() < 1e-14);
        let m2 = MarkSpace::scalar(&[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        let g2 = TimeGrid::new(2.0, 5).unwrap();
        let v = RandomField::constant(g2, &m2, 2, 1.0).unwrap();
        assert!((lp_field_norm(&v, 2.0).unwrap() - 8f64.sqrt()).abs() < 1e-14);
        assert!(lp_field_norm(&v, 0.5).is_err());
        assert!((m2.section_norm(&[1.0, 1.0], 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let b = batch(4, &marks, 5, 1);
        let v = RandomField::constant(b.grid, &marks, 6, 1.0).unwrap();
        assert!(poisson_integral_compensated(&v, &b).is_err());
        let other = MarkSpace::scalar(&[(1.0, 3.0)]).unwrap();
        let w = RandomField::constant(b.grid, &other, 5, 1.0).unwrap();
        assert!(poisson_integral_compensated(&w, &b).is_err());
    }

    #[test]
    fn json_export() {
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let b = batch(4, &marks, 3, 1);
        let v = RandomField::constant(b.grid, &marks, 3, 1.0).unwrap();
        let r = poisson_integral_compensated(&v, &b).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["terminal"].as_array().unwrap().len(), 3);
        assert_eq!(json["quadratic_variation"][0], b.jump_count(0) as f64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn integral_is_linear(seed in 0u64..1000, a in -4i32..4, c in -4i32..4) {
            let marks = MarkSpace::scalar(&[(1.0, 2.0), (3.0, 1.0)]).unwrap();
            let b = batch(5, &marks, 20, seed);
            // dyadic integrands and coefficients keep every operation exact
            let v = RandomField::from_fn(b.grid, &marks, 20, |p, j, i| ((p + 3 * j + i) % 7) as f64 * 0.25).unwrap();
            let w = RandomField::from_fn(b.grid, &marks, 20, |p, j, i| ((p * j + i) % 5) as f64 - 2.0).unwrap();
            let (a, c) = (a as f64 * 0.5, c as f64);
            let lhs = poisson_integral_compensated(&v.combine(a, &w, c).unwrap(), &b).unwrap();
            let rv = poisson_integral_compensated(&v, &b).unwrap();
            let rw = poisson_integral_compensated(&w, &b).unwrap();
            for p in 0..20 {
                for j in 0..=5 {
                    let x = lhs.running.at(p, j)[0];
                    let y = a * rv.running.at(p, j)[0] + c * rw.running.at(p, j)[0];
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
                }
            }
        }

        #[test]
        fn quadratic_variation_is_non_decreasing(seed in 0u64..1000) {
            let marks = MarkSpace::scalar(&[(1.0, 3.0)]).unwrap();
            let b = batch(6, &marks, 10, seed);
            let v = RandomField::from_fn(b.grid, &marks, 10, |p, j, _| (p as f64 - j as f64).sin()).unwrap();
            let qv = quadratic_variation(&v, &b).unwrap();
            for p in 0..10 {
                for j in 0..6 {
                    prop_assert!(qv.at(p, j + 1)[0] >= qv.at(p, j)[0]);
                }
            }
            let r = poisson_integral_compensated(&v, &b).unwrap();
            prop_assert!(jump_identity_check(&v, &r, &b).pass);
        }
    }
}
