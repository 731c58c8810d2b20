use serde::Serialize;

use super::picard::PicardTrace;
use crate::error::{Error, Result};
use crate::randomness::TimeGrid;

const MAX_INTERVALS: usize = 1 << 20;

/// Contraction bound `κ · c · |I|^{1−q/2}` claimed for one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalCertificate {
    pub start: f64,
    pub end: f64,
    pub q: f64,
    pub kappa: f64,
    pub c_emp: f64,
    pub bound: f64,
}

/// Equal-length partition `0 = s_0 < … < s_K = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubdivisionPlan {
    pub breakpoints: Vec<f64>,
    pub certificates: Vec<IntervalCertificate>,
    pub safety: f64,
}

impl SubdivisionPlan {
    /// The whole horizon as one interval, without a certificate.
    pub fn single(horizon: f64) -> Self {
        SubdivisionPlan { breakpoints: vec![0.0, horizon], certificates: Vec::new(), safety: f64::NAN }
    }

    pub fn intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Breakpoints rounded to the nearest grid index; repeated indices are
    /// merged, and `0` and `N` are always present.
    pub fn grid_indices(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        let end = *self.breakpoints.last().ok_or_else(|| Error::invalid("empty subdivision"))?;
        if (end - grid.horizon).abs() > 1e-9 * grid.horizon.max(1.0) {
            return Err(Error::invalid(format!("subdivision ends at {end}, horizon is {}", grid.horizon)));
        }
        let mut out = vec![0];
        for &s in &self.breakpoints[1..self.breakpoints.len() - 1] {
            let k = ((s / grid.dt()).round() as usize).min(grid.steps);
            if k > *out.last().unwrap() && k < grid.steps {
                out.push(k);
            }
        }
        out.push(grid.steps);
        Ok(out)
    }
}

/// Smallest `K` with `κ · c_emp · (T/K)^{1−q/2} ≤ safety`, for `q ∈ (1, 2)`.
pub fn subdivide_horizon(horizon: f64, kappa: f64, q: f64, c_emp: f64, safety: f64) -> Result<SubdivisionPlan> {
    if !(horizon > 0.0) || !(kappa >= 0.0) || !(c_emp >= 0.0) {
        return Err(Error::invalid(format!("need T > 0, kappa >= 0, c >= 0; got ({horizon}, {kappa}, {c_emp})")));
    }
    if !(q > 1.0 && q < 2.0) {
        return Err(Error::invalid(format!("subdivision needs q in (1, 2), got {q}")));
    }
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::invalid(format!("safety factor must lie in (0, 1), got {safety}")));
    }
    let e = 1.0 - q / 2.0;
    let bound = |k: usize| kappa * c_emp * (horizon / k as f64).powf(e);
    let mut k = if bound(1) <= safety {
        1
    } else {
        let len = (safety / (kappa * c_emp)).powf(1.0 / e);
        let est = (horizon / len).ceil();
        if !(est <= MAX_INTERVALS as f64) {
            return Err(Error::ResourceLimit { what: "subdivision", requested: est as u128, cap: MAX_INTERVALS as u128 });
        }
        (est as usize).max(1)
    };
    while k > 1 && bound(k - 1) <= safety {
        k -= 1;
    }
    while bound(k) > safety {
        k += 1;
    }
    let breakpoints: Vec<f64> = (0..=k).map(|i| if i == k { horizon } else { horizon * i as f64 / k as f64 }).collect();
    let certificates = breakpoints
        .windows(2)
        .map(|w| IntervalCertificate { start: w[0], end: w[1], q, kappa, c_emp, bound: bound(k) })
        .collect();
    Ok(SubdivisionPlan { breakpoints, certificates, safety })
}

/// `r_1 / (κ T^{1−q/2})` from the first recorded contraction ratio.
pub fn calibrate_constant(trace: &PicardTrace, kappa: f64, horizon: f64) -> Option<f64> {
    let r1 = trace.ratios.first().copied().flatten()?;
    if !(kappa > 0.0) {
        return None;
    }
    Some(r1 / (kappa * horizon.powf(1.0 - trace.q / 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_horizon_needs_no_split() {
        let plan = subdivide_horizon(1.0, 1.0, 1.5, 0.4, 0.9).unwrap();
        assert_eq!(plan.intervals(), 1);
        assert_eq!(plan.breakpoints, vec![0.0, 1.0]);
        assert!((plan.certificates[0].bound - 0.4).abs() < 1e-15);
    }

    #[test]
    fn long_horizon_count_is_minimal() {
        let plan = subdivide_horizon(10.0, 5.0, 1.5, 0.2, 0.45).unwrap();
        let k = plan.intervals();
        assert_eq!(k, 244);
        for c in &plan.certificates {
            assert!(c.bound <= 0.45);
        }
        let coarser = (10.0 / (k - 1) as f64).powf(0.25);
        assert!(coarser > 0.45);
    }

    #[test]
    fn quarter_power_example() {
        let plan = subdivide_horizon(4.0, 1.0, 1.5, 1.0, 0.5).unwrap();
        assert_eq!(plan.intervals(), 64);
        assert_eq!(plan.breakpoints[1], 0.0625);
    }

    #[test]
    fn counts_match_brute_force() {
        for &(t, kappa, q, c, s) in &[(10.0, 5.0, 1.5, 0.2, 0.5), (3.0, 2.0, 1.2, 0.7, 0.8), (50.0, 1.0, 1.9, 1.0, 0.9)] {
            let plan = subdivide_horizon(t, kappa, q, c, s).unwrap();
            let brute = (1..).find(|&k: &usize| kappa * c * (t / k as f64).powf(1.0 - q / 2.0) <= s).unwrap();
            assert_eq!(plan.intervals(), brute);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(subdivide_horizon(1.0, 1.0, 2.0, 1.0, 0.5).is_err());
        assert!(subdivide_horizon(1.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(subdivide_horizon(1.0, 1.0, 1.5, 1.0, 1.0).is_err());
        assert!(subdivide_horizon(0.0, 1.0, 1.5, 1.0, 0.5).is_err());
    }

    #[test]
    fn breakpoints_snap_to_grid() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let plan = SubdivisionPlan {
            breakpoints: vec![0.0, 0.04, 0.33, 0.34, 1.0],
            certificates: Vec::new(),
            safety: 0.5,
        };
        assert_eq!(plan.grid_indices(&grid).unwrap(), vec![0, 3, 10]);
        assert_eq!(SubdivisionPlan::single(1.0).grid_indices(&grid).unwrap(), vec![0, 10]);
        assert!(SubdivisionPlan::single(2.0).grid_indices(&grid).is_err());
    }

    #[test]
    fn calibration_inverts_the_bound() {
        let trace = PicardTrace {
            q: 1.5,
            start: 0.0,
            end: 16.0,
            distances: Vec::new(),
            totals: Vec::new(),
            ratios: vec![Some(4.0), Some(4.0)],
            iterations: 3,
            converged: false,
        };
        assert_eq!(calibrate_constant(&trace, 2.0, 16.0), Some(1.0));
        assert_eq!(calibrate_constant(&PicardTrace { ratios: vec![None], ..trace }, 2.0, 16.0), None);
    }
}
