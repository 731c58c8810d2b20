use std::fmt;
use std::sync::Arc;

use super::{q_n, StateView};
use crate::error::{Error, Result};
use crate::randomness::MarkSpace;

/// Arguments of one generator evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DriverInput<'a> {
    pub t: f64,
    pub state: StateView<'a>,
    pub y: f64,
    pub z: &'a [f64],
    pub v: &'a [f64],
    /// Sectional norm of `v`, precomputed by the caller.
    pub v_norm: f64,
}

/// A generator `f(t, ω, y, z, v)`. Implementations must be pure.
pub trait Driver: Send + Sync + fmt::Debug {
    fn eval(&self, x: &DriverInput<'_>) -> f64;

    fn describe(&self) -> String;

    fn depends_on_zv(&self) -> bool {
        true
    }

    /// Lipschitz modulus in `(y, z, v)` for the sum norm
    /// `|Δy| + |Δz| + ‖Δv‖`, when known in closed form.
    fn lipschitz_bound(&self, _intensities: &[f64], _p: f64) -> Option<f64> {
        None
    }

    fn check_shape(&self, _dim: usize, _n_marks: usize) -> Result<()> {
        Ok(())
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Dual of the weighted ℓ^p norm (Σ |v_i|^p λ_i)^{1/p}.
fn weighted_dual_norm(c: &[f64], intensities: &[f64], p: f64) -> f64 {
    if c.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    if p <= 1.0 {
        return c.iter().zip(intensities).map(|(c, l)| c.abs() / l).fold(0.0, f64::max);
    }
    let q = p / (p - 1.0);
    c.iter()
        .zip(intensities)
        .map(|(c, l)| (c.abs() * l.powf(-1.0 / p)).powf(q))
        .sum::<f64>()
        .powf(1.0 / q)
}

fn shape_ok(name: &str, len: usize, want: usize) -> Result<()> {
    if len == 0 || len == want {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} has {len} coefficients, expected {want}")))
    }
}

/// `f = a·y + b·z + Σ c_i v_i + c_n·‖v‖ + k + k_B·ΣB_t + k_N·N_t`.
///
/// Empty coefficient vectors mean zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub y: f64,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub v_norm: f64,
    pub constant: f64,
    pub brownian: f64,
    pub jumps: f64,
}

impl Driver for Affine {
    fn eval(&self, x: &DriverInput<'_>) -> f64 {
        self.y * x.y
            + dot(&self.z, x.z)
            + dot(&self.v, x.v)
            + self.v_norm * x.v_norm
            + self.constant
            + self.brownian * x.state.brownian_sum()
            + self.jumps * x.state.jump_total() as f64
    }

    fn describe(&self) -> String {
        format!("affine{self:?}")
    }

    fn depends_on_zv(&self) -> bool {
        self.z.iter().chain(&self.v).any(|&c| c != 0.0) || self.v_norm != 0.0
    }

    fn lipschitz_bound(&self, intensities: &[f64], p: f64) -> Option<f64> {
        let kv = weighted_dual_norm(&self.v, intensities, p) + self.v_norm.abs();
        Some(self.y.abs().max(norm2(&self.z)).max(kv))
    }

    fn check_shape(&self, dim: usize, n_marks: usize) -> Result<()> {
        shape_ok("affine z", self.z.len(), dim)?;
        shape_ok("affine v", self.v.len(), n_marks)
    }
}

/// `f = a·sin(y) + b·z + c·‖v‖ + k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LipschitzSmooth {
    pub sin_y: f64,
    pub z: Vec<f64>,
    pub v_norm: f64,
    pub constant: f64,
}

impl Driver for LipschitzSmooth {
    fn eval(&self, x: &DriverInput<'_>) -> f64 {
        self.sin_y * x.y.sin() + dot(&self.z, x.z) + self.v_norm * x.v_norm + self.constant
    }

    fn describe(&self) -> String {
        format!("lipschitz-smooth{self:?}")
    }

    fn depends_on_zv(&self) -> bool {
        self.z.iter().any(|&c| c != 0.0) || self.v_norm != 0.0
    }

    fn lipschitz_bound(&self, _: &[f64], _: f64) -> Option<f64> {
        Some(self.sin_y.abs().max(norm2(&self.z)).max(self.v_norm.abs()))
    }

    fn check_shape(&self, dim: usize, _: usize) -> Result<()> {
        shape_ok("lipschitz-smooth z", self.z.len(), dim)
    }
}

/// `f = a·y + κ_z·|z| + κ_v·‖v‖ + k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZvCoupled {
    pub y: f64,
    pub z_abs: f64,
    pub v_norm: f64,
    pub constant: f64,
}

impl Driver for ZvCoupled {
    fn eval(&self, x: &DriverInput<'_>) -> f64 {
        self.y * x.y + self.z_abs * norm2(x.z) + self.v_norm * x.v_norm + self.constant
    }

    fn describe(&self) -> String {
        format!("zv-coupled{self:?}")
    }

    fn depends_on_zv(&self) -> bool {
        self.z_abs != 0.0 || self.v_norm != 0.0
    }

    fn lipschitz_bound(&self, _: &[f64], _: f64) -> Option<f64> {
        Some(self.y.abs().max(self.z_abs.abs()).max(self.v_norm.abs()))
    }
}

/// `f(t,y,z,v) − f(t,0,0,0) + q_n(f(t,0,0,0))`.
#[derive(Debug, Clone)]
pub struct TruncatedDriver {
    pub inner: Arc<dyn Driver>,
    pub level: f64,
}

impl Driver for TruncatedDriver {
    fn eval(&self, x: &DriverInput<'_>) -> f64 {
        let zeros_z = vec![0.0; x.z.len()];
        let zeros_v = vec![0.0; x.v.len()];
        let at_zero = self.inner.eval(&DriverInput { y: 0.0, z: &zeros_z, v: &zeros_v, v_norm: 0.0, ..*x });
        let full = self.inner.eval(x);
        let clamped = q_n(at_zero, self.level);
        if clamped == at_zero {
            full
        } else {
            full - at_zero + clamped
        }
    }

    fn describe(&self) -> String {
        format!("truncated({}, {:?})", self.inner.describe(), self.level)
    }

    fn depends_on_zv(&self) -> bool {
        self.inner.depends_on_zv()
    }

    fn lipschitz_bound(&self, intensities: &[f64], p: f64) -> Option<f64> {
        self.inner.lipschitz_bound(intensities, p)
    }

    fn check_shape(&self, dim: usize, n_marks: usize) -> Result<()> {
        self.inner.check_shape(dim, n_marks)
    }
}

/// `c·f(t, y/c, z/c, v/c)`.
#[derive(Debug, Clone)]
pub struct ScaledDriver {
    pub inner: Arc<dyn Driver>,
    pub factor: f64,
}

impl Driver for ScaledDriver {
    fn eval(&self, x: &DriverInput<'_>) -> f64 {
        let c = self.factor;
        let z: Vec<f64> = x.z.iter().map(|a| a / c).collect();
        let v: Vec<f64> = x.v.iter().map(|a| a / c).collect();
        c * self.inner.eval(&DriverInput { y: x.y / c, z: &z, v: &v, v_norm: x.v_norm / c, ..*x })
    }

    fn describe(&self) -> String {
        format!("scaled({}, {:?})", self.inner.describe(), self.factor)
    }

    fn depends_on_zv(&self) -> bool {
        self.inner.depends_on_zv()
    }

    fn lipschitz_bound(&self, intensities: &[f64], p: f64) -> Option<f64> {
        self.inner.lipschitz_bound(intensities, p)
    }

    fn check_shape(&self, dim: usize, n_marks: usize) -> Result<()> {
        self.inner.check_shape(dim, n_marks)
    }
}

type DriverFn = dyn Fn(&DriverInput<'_>) -> f64 + Send + Sync;

/// Generator given by a closure.
#[derive(Clone)]
pub struct FnDriver {
    name: String,
    depends_on_zv: bool,
    f: Arc<DriverFn>,
}

impl FnDriver {
    pub fn new(name: impl Into<String>, f: impl Fn(&DriverInput<'_>) -> f64 + Send + Sync + 'static) -> Self {
        FnDriver { name: name.into(), depends_on_zv: true, f: Arc::new(f) }
    }

    /// Marks the closure as independent of `(z, v)`.
    pub fn without_zv(mut self) -> Self {
        self.depends_on_zv = false;
        self
    }
}

impl fmt::Debug for FnDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnDriver({})", self.name)
    }
}

impl Driver for FnDriver {
    fn eval(&self, x: &DriverInput<'_>) -> f64 {
        (self.f)(x)
    }

    fn describe(&self) -> String {
        format!("fn:{}", self.name)
    }

    fn depends_on_zv(&self) -> bool {
        self.depends_on_zv
    }
}

/// Sublinear growth constants `(γ, α, g)` bounding
/// `|f(t,y,z,v) − f(t,y,0,0)| ≤ γ (g + |y| + |z| + ‖v‖)^α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Growth {
    pub gamma: f64,
    pub alpha: f64,
    pub g: f64,
}

/// A generator with its declared constants.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub driver: Arc<dyn Driver>,
    /// Declared Lipschitz modulus.
    pub kappa: f64,
    pub growth: Option<Growth>,
    /// Integrability index; also the exponent of the sectional norm of `v`.
    pub p: f64,
}

impl GeneratorSpec {
    /// Uses the driver's closed-form Lipschitz bound as the declared modulus
    /// (zero when unknown; set it with [`GeneratorSpec::with_kappa`]).
    pub fn from_driver(driver: Arc<dyn Driver>, marks: &MarkSpace, p: f64) -> Self {
        let kappa = driver.lipschitz_bound(marks.intensities(), p).unwrap_or(0.0);
        GeneratorSpec { driver, kappa, growth: None, p }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_growth(mut self, gamma: f64, alpha: f64, g: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !(alpha > 0.0 && alpha < 1.0) || !(g >= 0.0) {
            return Err(Error::invalid(format!(
                "growth needs gamma >= 0, alpha in (0,1), g >= 0; got ({gamma}, {alpha}, {g})"
            )));
        }
        self.growth = Some(Growth { gamma, alpha, g });
        Ok(self)
    }

    pub fn depends_on_zv(&self) -> bool {
        self.driver.depends_on_zv()
    }

    /// Upper bound `ψ_r ≤ κ r` on `sup_{|y|≤r} |f(t,y,0,0) − f(t,0,0,0)|`.
    pub fn psi_bound(&self, r: f64) -> f64 {
        self.kappa * r
    }

    pub(crate) fn truncated(&self, level: f64) -> Self {
        GeneratorSpec { driver: Arc::new(TruncatedDriver { inner: self.driver.clone(), level }), ..self.clone() }
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        GeneratorSpec { driver: Arc::new(ScaledDriver { inner: self.driver.clone(), factor }), ..self.clone() }
    }
}
