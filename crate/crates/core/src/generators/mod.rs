//! Problem data `(ξ, f)`: generator and terminal forms, the truncation
//! ladder and empirical checks of the standing assumptions.

mod checks;
mod driver;
mod terminal;

use sha2::{Digest, Sha256};

pub use checks::{
    check_growth, check_integrability, check_lipschitz, ArgumentCloud, CloudPoint, GrowthReport,
    IntegrabilityReport, LipschitzReport,
};
pub use driver::{
    Affine, Driver, DriverInput, FnDriver, GeneratorSpec, Growth, LipschitzSmooth, ScaledDriver,
    TruncatedDriver, ZvCoupled,
};
pub use terminal::{
    BrownianFunctional, BrownianShape, Constant, FnTerminal, JumpCountFunctional, ScaledTerminal,
    SumTerminal, Terminal, TerminalSpec, TruncatedTerminal,
};

use crate::error::{Error, Result};
use crate::randomness::{MarkSpace, TimeGrid};

/// What a generator or terminal functional may observe about `ω`: the
/// current Brownian position and the per-mark jump counts so far.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub brownian: &'a [f64],
    pub counts: &'a [u32],
}

impl StateView<'_> {
    pub fn brownian_sum(&self) -> f64 {
        self.brownian.iter().sum()
    }

    pub fn jump_total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Symmetric clamp `max(−n, min(n, x))`.
pub fn q_n(x: f64, n: f64) -> f64 {
    x.clamp(-n, n)
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct BsdeProblem {
    pub grid: TimeGrid,
    pub dim: usize,
    pub marks: MarkSpace,
    pub generator: GeneratorSpec,
    pub terminal: TerminalSpec,
}

impl BsdeProblem {
    pub fn new(
        grid: TimeGrid,
        dim: usize,
        marks: MarkSpace,
        generator: GeneratorSpec,
        terminal: TerminalSpec,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("Brownian dimension must be positive"));
        }
        generator.driver.check_shape(dim, marks.len())?;
        terminal.func.check_shape(dim, marks.len())?;
        Ok(BsdeProblem { grid, dim, marks, generator, terminal })
    }

    pub fn kappa(&self) -> f64 {
        self.generator.kappa
    }

    /// `f(t, ω, y, z, v)` with `‖v‖` the sectional `ℒ^p` norm, `p` taken from
    /// the generator.
    pub fn driver(&self, t: f64, state: StateView<'_>, y: f64, z: &[f64], v: &[f64]) -> f64 {
        let v_norm = self.marks.section_norm(v, self.generator.p);
        self.generator.driver.eval(&DriverInput { t, state, y, z, v, v_norm })
    }

    /// `f(t, ω, 0, 0, 0)`.
    pub fn driver_at_zero(&self, t: f64, state: StateView<'_>) -> f64 {
        let z = vec![0.0; self.dim];
        let v = vec![0.0; self.marks.len()];
        self.generator.driver.eval(&DriverInput { t, state, y: 0.0, z: &z, v: &v, v_norm: 0.0 })
    }

    pub fn terminal_value(&self, state: StateView<'_>) -> f64 {
        self.terminal.func.value(state)
    }

    /// Same data on a different grid over the same horizon.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let mut p = self.clone();
        p.grid = TimeGrid::new(self.grid.horizon, steps)?;
        Ok(p)
    }

    /// `(cξ, f_c)` with `f_c(y, z, v) = c·f(y/c, z/c, v/c)`; for generators
    /// that are positively homogeneous in `(y, z, v)` this is `(cξ, cf)`, and
    /// the solution becomes `(cY, cZ, cV)`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("scale factor must be positive, got {c}")));
        }
        let mut p = self.clone();
        p.generator = self.generator.scaled(c);
        p.terminal = self.terminal.scaled(c);
        Ok(p)
    }

    /// Stable identifier of the problem data.
    pub fn fingerprint(&self) -> String {
        let text = format!(
            "T={:?};N={};d={};marks={:?};lambda={:?};f={};kappa={:?};p={:?};xi={}",
            self.grid.horizon,
            self.grid.steps,
            self.dim,
            self.marks.marks(),
            self.marks.intensities(),
            self.generator.driver.describe(),
            self.generator.kappa,
            self.generator.p,
            self.terminal.func.describe(),
        );
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

/// `(q_n(ξ), f − f(·,0,0,0) + q_n(f(·,0,0,0)))`.
///
/// The truncated problem has bounded terminal data and a bounded zero
/// section, and its increments in `(y, z, v)` are those of `f`.
pub fn truncate_problem(problem: &BsdeProblem, n: f64) -> Result<BsdeProblem> {
    if !(n > 0.0) {
        return Err(Error::invalid(format!("truncation level must be positive, got {n}")));
    }
    let mut p = problem.clone();
    p.generator = problem.generator.truncated(n);
    p.terminal = problem.terminal.truncated(n);
    Ok(p)
}
