use std::fmt;
use std::sync::Arc;

use super::{q_n, StateView};
use crate::error::{Error, Result};

/// Terminal condition `ξ` as a function of the terminal state.
pub trait Terminal: Send + Sync + fmt::Debug {
    fn value(&self, state: StateView<'_>) -> f64;

    fn describe(&self) -> String;

    fn check_shape(&self, _dim: usize, _n_marks: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Terminal for Constant {
    fn value(&self, _: StateView<'_>) -> f64 {
        self.0
    }

    fn describe(&self) -> String {
        format!("constant({:?})", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BrownianShape {
    Linear,
    Square,
    Exp,
    Abs,
    Sin,
    Call { strike: f64 },
}

/// `amplitude · φ(scale · Σ_k B_T^k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianFunctional {
    pub shape: BrownianShape,
    pub amplitude: f64,
    pub scale: f64,
}

impl BrownianFunctional {
    pub fn new(shape: BrownianShape, amplitude: f64) -> Self {
        BrownianFunctional { shape, amplitude, scale: 1.0 }
    }
}

impl Terminal for BrownianFunctional {
    fn value(&self, state: StateView<'_>) -> f64 {
        let x = self.scale * state.brownian_sum();
        let phi = match self.shape {
            BrownianShape::Linear => x,
            BrownianShape::Square => x * x,
            BrownianShape::Exp => x.exp(),
            BrownianShape::Abs => x.abs(),
            BrownianShape::Sin => x.sin(),
            BrownianShape::Call { strike } => (x - strike).max(0.0),
        };
        self.amplitude * phi
    }

    fn describe(&self) -> String {
        format!("brownian{self:?}")
    }
}

/// `Σ_i c_i N_T^i + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpCountFunctional {
    pub coefficients: Vec<f64>,
    pub offset: f64,
}

impl JumpCountFunctional {
    /// `N_T − Λ T`: the compensated total jump count.
    pub fn compensated_total(intensities: &[f64], horizon: f64) -> Self {
        JumpCountFunctional {
            coefficients: vec![1.0; intensities.len()],
            offset: -intensities.iter().sum::<f64>() * horizon,
        }
    }
}

impl Terminal for JumpCountFunctional {
    fn value(&self, state: StateView<'_>) -> f64 {
        self.offset
            + self
                .coefficients
                .iter()
                .zip(state.counts)
                .map(|(c, &n)| c * n as f64)
                .sum::<f64>()
    }

    fn describe(&self) -> String {
        format!("jump-count{self:?}")
    }

    fn check_shape(&self, _: usize, n_marks: usize) -> Result<()> {
        if self.coefficients.len() != n_marks {
            return Err(Error::invalid(format!(
                "jump-count functional has {} coefficients for {n_marks} marks",
                self.coefficients.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SumTerminal(pub Vec<Arc<dyn Terminal>>);

impl Terminal for SumTerminal {
    fn value(&self, state: StateView<'_>) -> f64 {
        self.0.iter().map(|t| t.value(state)).sum()
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|t| t.describe()).collect();
        format!("sum[{}]", parts.join(","))
    }

    fn check_shape(&self, dim: usize, n_marks: usize) -> Result<()> {
        self.0.iter().try_for_each(|t| t.check_shape(dim, n_marks))
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedTerminal {
    pub inner: Arc<dyn Terminal>,
    pub level: f64,
}

impl Terminal for TruncatedTerminal {
    fn value(&self, state: StateView<'_>) -> f64 {
        q_n(self.inner.value(state), self.level)
    }

    fn describe(&self) -> String {
        format!("truncated({}, {:?})", self.inner.describe(), self.level)
    }

    fn check_shape(&self, dim: usize, n_marks: usize) -> Result<()> {
        self.inner.check_shape(dim, n_marks)
    }
}

#[derive(Debug, Clone)]
pub struct ScaledTerminal {
    pub inner: Arc<dyn Terminal>,
    pub factor: f64,
}

impl Terminal for ScaledTerminal {
    fn value(&self, state: StateView<'_>) -> f64 {
        self.factor * self.inner.value(state)
    }

    fn describe(&self) -> String {
        format!("scaled({}, {:?})", self.inner.describe(), self.factor)
    }

    fn check_shape(&self, dim: usize, n_marks: usize) -> Result<()> {
        self.inner.check_shape(dim, n_marks)
    }
}

type TerminalFn = dyn Fn(StateView<'_>) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct FnTerminal {
    name: String,
    f: Arc<TerminalFn>,
}

impl FnTerminal {
    pub fn new(name: impl Into<String>, f: impl Fn(StateView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        FnTerminal { name: name.into(), f: Arc::new(f) }
    }
}

impl fmt::Debug for FnTerminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnTerminal({})", self.name)
    }
}

impl Terminal for FnTerminal {
    fn value(&self, state: StateView<'_>) -> f64 {
        (self.f)(state)
    }

    fn describe(&self) -> String {
        format!("fn:{}", self.name)
    }
}

/// Terminal condition with its integrability tag.
#[derive(Debug, Clone)]
pub struct TerminalSpec {
    pub func: Arc<dyn Terminal>,
    pub p: f64,
}

impl TerminalSpec {
    pub fn new(func: Arc<dyn Terminal>) -> Self {
        TerminalSpec { func, p: 1.0 }
    }

    pub(crate) fn truncated(&self, level: f64) -> Self {
        TerminalSpec { func: Arc::new(TruncatedTerminal { inner: self.func.clone(), level }), p: 2.0 }
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        TerminalSpec { func: Arc::new(ScaledTerminal { inner: self.func.clone(), factor }), p: self.p }
    }
}
