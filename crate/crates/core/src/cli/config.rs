use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{
    Affine, BrownianFunctional, BrownianShape, BsdeProblem, Constant, Driver, GeneratorSpec, JumpCountFunctional,
    LipschitzSmooth, SumTerminal, Terminal, TerminalSpec, ZvCoupled,
};
use crate::randomness::{MarkSpace, TimeGrid};
use crate::solver::{BasisConfig, Initialization, PicardConfig, RankPolicy, SolveMethod, ViewConfig};

pub const CONFIG_SCHEMA: &str = "bsdej/run-config/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Verify,
    Ladder,
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdivide: Option<SubdivideSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSection>,
    #[serde(default)]
    pub view: ViewSection,
    /// Where reports go; never embedded in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub marks: Vec<MarkConfig>,
    pub generator: GeneratorConfig,
    pub terminal: TerminalConfig,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Declared Lipschitz modulus; the generator's own bound when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthConfig>,
}

fn default_dim() -> usize {
    1
}

fn default_p() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkConfig {
    pub value: Vec<f64>,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// `a·y + b·z + Σ c_i v_i + c_n·‖v‖ + k + k_B·ΣB + k_N·N`.
    Affine {
        #[serde(default)]
        y: f64,
        #[serde(default)]
        z: Vec<f64>,
        #[serde(default)]
        v: Vec<f64>,
        #[serde(default)]
        v_norm: f64,
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        brownian: f64,
        #[serde(default)]
        jumps: f64,
    },
    /// `a·sin(y) + b·z + c·‖v‖ + k`.
    LipschitzSmooth {
        #[serde(default)]
        sin_y: f64,
        #[serde(default)]
        z: Vec<f64>,
        #[serde(default)]
        v_norm: f64,
        #[serde(default)]
        constant: f64,
    },
    /// `a·y + κ_z·|z| + κ_v·‖v‖ + k`.
    ZvCoupled {
        #[serde(default)]
        y: f64,
        #[serde(default)]
        z_abs: f64,
        #[serde(default)]
        v_norm: f64,
        #[serde(default)]
        constant: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeConfig {
    Linear,
    Square,
    Exp,
    Abs,
    Sin,
    Call,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalConfig {
    Constant {
        value: f64,
    },
    /// `amplitude · φ(scale · ΣB_T)`.
    Brownian {
        shape: ShapeConfig,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strike: Option<f64>,
    },
    /// `Σ c_i N_T^i + offset`.
    JumpCount {
        coefficients: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `N_T − ΛT`.
    CompensatedJumps,
    Sum {
        terms: Vec<TerminalConfig>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    Tree,
    Mc {
        n_paths: usize,
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default)]
        rank_policy: RankPolicy,
    },
}

fn default_degree() -> usize {
    2
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig::Tree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default = "default_init")]
    pub init: Initialization,
    #[serde(default = "default_run")]
    pub divergence_run: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    60
}

fn default_init() -> Initialization {
    Initialization::Zero
}

fn default_run() -> usize {
    3
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection {
            tol: default_tol(),
            max_iter: default_max_iter(),
            q: None,
            init: default_init(),
            divergence_run: default_run(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubdivideSection {
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Constant of the contraction bound; calibrated from a pilot run when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_emp: Option<f64>,
}

fn default_safety() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
    /// Estimate exponent; the generator's `p` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default = "yes")]
    pub uniqueness: bool,
}

fn default_ceiling() -> f64 {
    crate::estimates::DEFAULT_CEILING
}

fn yes() -> bool {
    true
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { ceiling: default_ceiling(), p: None, uniqueness: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub levels: Vec<f64>,
    #[serde(default = "default_ladder_tol")]
    pub tol: f64,
}

fn default_ladder_tol() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    #[serde(default = "default_suite_steps")]
    pub steps: usize,
    /// Recorded largest implied constant; the run fails if it regresses by
    /// more than 10%.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

fn default_suite_steps() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSection {
    #[serde(default = "default_enumerate")]
    pub enumerate_limit: usize,
    #[serde(default = "default_sample_paths")]
    pub sample_paths: usize,
}

fn default_enumerate() -> usize {
    ViewConfig::default().enumerate_limit
}

fn default_sample_paths() -> usize {
    ViewConfig::default().sample_paths
}

impl Default for ViewSection {
    fn default() -> Self {
        ViewSection { enumerate_limit: default_enumerate(), sample_paths: default_sample_paths() }
    }
}

/// Line of the first occurrence of `"key"` in the config text.
fn locate(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn field_error(text: &str, path: &str, msg: impl std::fmt::Display) -> Error {
    let key = path.rsplit('.').next().unwrap_or(path);
    let key = key.split('[').next().unwrap_or(key);
    match locate(text, key) {
        Some(line) => Error::Config(format!("line {line}: field `{path}`: {msg}")),
        None => Error::Config(format!("field `{path}`: {msg}")),
    }
}

impl RunConfig {
    /// Parses and validates a config. A report may be given instead: its
    /// embedded config is used.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let config: RunConfig = if let Some(embedded) = value.get("body").and_then(|b| b.get("config")) {
            serde_json::from_value(embedded.clone()).map_err(|e| Error::Config(format!("embedded config: {e}")))?
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        config.validate(text)?;
        Ok(config)
    }

    /// Field-level checks run before any computation.
    pub fn validate(&self, text: &str) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(field_error(text, "schema", format!("expected \"{CONFIG_SCHEMA}\", got \"{}\"", self.schema)));
        }
        match (&self.problem, self.command, &self.suite) {
            (None, Command::Verify, Some(_)) => {}
            (None, _, _) => return Err(Error::Config("field `problem` is required".into())),
            (Some(p), _, _) => p.validate(text)?,
        }
        if let MethodConfig::Mc { n_paths, .. } = self.method {
            if n_paths < 2 {
                return Err(field_error(text, "method.n_paths", format!("need at least 2 paths, got {n_paths}")));
            }
        }
        if let Some(p) = &self.picard {
            if !(p.tol > 0.0) {
                return Err(field_error(text, "picard.tol", format!("must be positive, got {}", p.tol)));
            }
            if p.max_iter == 0 {
                return Err(field_error(text, "picard.max_iter", "must be at least 1"));
            }
            if let Some(q) = p.q {
                if !(q > 1.0 && q <= 2.0) {
                    return Err(field_error(text, "picard.q", format!("must lie in (1, 2], got {q}")));
                }
            }
        }
        if let Some(s) = &self.subdivide {
            if !(s.safety > 0.0 && s.safety < 1.0) {
                return Err(field_error(text, "subdivide.safety", format!("must lie in (0, 1), got {}", s.safety)));
            }
            if s.c_emp.is_some_and(|c| !(c > 0.0)) {
                return Err(field_error(text, "subdivide.c_emp", "must be positive"));
            }
        }
        if let Some(v) = &self.verify {
            if !(v.ceiling > 0.0) {
                return Err(field_error(text, "verify.ceiling", format!("must be positive, got {}", v.ceiling)));
            }
            if v.p.is_some_and(|p| !(p > 1.0)) {
                return Err(field_error(text, "verify.p", "must exceed 1"));
            }
        }
        match (&self.ladder, self.command) {
            (None, Command::Ladder) => return Err(Error::Config("field `ladder` is required for the ladder command".into())),
            (Some(l), _) => {
                if l.levels.is_empty() {
                    return Err(field_error(text, "ladder.levels", "must not be empty"));
                }
                if l.levels.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
                    return Err(field_error(text, "ladder.levels", "levels must be positive"));
                }
                if l.levels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(field_error(text, "ladder.levels", format!("must be strictly increasing, got {:?}", l.levels)));
                }
            }
            _ => {}
        }
        if let Some(s) = &self.suite {
            if s.steps == 0 {
                return Err(field_error(text, "suite.steps", "must be at least 1"));
            }
        }
        if self.view.sample_paths == 0 {
            return Err(field_error(text, "view.sample_paths", "must be at least 1"));
        }
        Ok(())
    }

    pub fn solve_method(&self) -> SolveMethod {
        match self.method {
            MethodConfig::Tree => SolveMethod::Tree,
            MethodConfig::Mc { n_paths, degree, rank_policy } => {
                SolveMethod::Mc { n_paths, seed: self.seed, basis: BasisConfig { degree, rank_policy } }
            }
        }
    }

    pub fn view_config(&self) -> ViewConfig {
        ViewConfig { enumerate_limit: self.view.enumerate_limit, sample_paths: self.view.sample_paths, seed: self.seed }
    }

    pub fn picard_config(&self) -> PicardConfig {
        let s = self.picard.unwrap_or_default();
        PicardConfig {
            tol: s.tol,
            max_iter: s.max_iter,
            q: s.q,
            init: s.init,
            divergence_run: s.divergence_run,
            view: self.view_config(),
            ..PicardConfig::default()
        }
    }

    /// The config as embedded in reports: defaults filled in, no output
    /// location.
    pub fn resolved(&self) -> RunConfig {
        RunConfig { output_dir: None, ..self.clone() }
    }

    pub fn problem(&self) -> Result<BsdeProblem> {
        self.problem.as_ref().ok_or_else(|| Error::Config("field `problem` is required".into()))?.build()
    }
}

impl ProblemConfig {
    fn validate(&self, text: &str) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(field_error(text, "problem.horizon", format!("must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(field_error(text, "problem.steps", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(field_error(text, "problem.dim", "must be at least 1"));
        }
        if self.marks.is_empty() {
            return Err(field_error(text, "problem.marks", "at least one mark is required"));
        }
        for (i, m) in self.marks.iter().enumerate() {
            if !(m.intensity > 0.0 && m.intensity.is_finite()) {
                return Err(field_error(text, &format!("problem.marks[{i}].intensity"), format!("must be positive, got {}", m.intensity)));
            }
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(field_error(text, "problem.p", format!("must exceed 1, got {}", self.p)));
        }
        if self.kappa.is_some_and(|k| !(k >= 0.0)) {
            return Err(field_error(text, "problem.kappa", "must be non-negative"));
        }
        if let Some(g) = self.growth {
            if !(g.alpha > 0.0 && g.alpha < 1.0) {
                return Err(field_error(text, "problem.growth.alpha", format!("must lie in (0, 1), got {}", g.alpha)));
            }
        }
        self.build().map(|_| ()).map_err(|e| Error::Config(format!("field `problem`: {e}")))
    }

    pub fn build(&self) -> Result<BsdeProblem> {
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        let marks = MarkSpace::new(
            self.marks.iter().map(|m| m.value.clone()).collect(),
            self.marks.iter().map(|m| m.intensity).collect(),
        )?;
        let mut generator = GeneratorSpec::from_driver(self.generator.driver(), &marks, self.p);
        if let Some(k) = self.kappa {
            generator = generator.with_kappa(k);
        }
        if let Some(g) = self.growth {
            generator = generator.with_growth(g.gamma, g.alpha, g.g)?;
        }
        let terminal = TerminalSpec::new(self.terminal.build(&marks, self.horizon)?);
        BsdeProblem::new(grid, self.dim, marks, generator, terminal)
    }
}

impl GeneratorConfig {
    pub fn driver(&self) -> Arc<dyn Driver> {
        match self.clone() {
            GeneratorConfig::Affine { y, z, v, v_norm, constant, brownian, jumps } => {
                Arc::new(Affine { y, z, v, v_norm, constant, brownian, jumps })
            }
            GeneratorConfig::LipschitzSmooth { sin_y, z, v_norm, constant } => {
                Arc::new(LipschitzSmooth { sin_y, z, v_norm, constant })
            }
            GeneratorConfig::ZvCoupled { y, z_abs, v_norm, constant } => Arc::new(ZvCoupled { y, z_abs, v_norm, constant }),
        }
    }
}

impl TerminalConfig {
    pub fn build(&self, marks: &MarkSpace, horizon: f64) -> Result<Arc<dyn Terminal>> {
        Ok(match self {
            TerminalConfig::Constant { value } => Arc::new(Constant(*value)),
            TerminalConfig::Brownian { shape, amplitude, scale, strike } => {
                let shape = match (shape, strike) {
                    (ShapeConfig::Call, Some(k)) => BrownianShape::Call { strike: *k },
                    (ShapeConfig::Call, None) => return Err(Error::Config("terminal shape `call` needs `strike`".into())),
                    (_, Some(_)) => return Err(Error::Config("`strike` only applies to shape `call`".into())),
                    (ShapeConfig::Linear, None) => BrownianShape::Linear,
                    (ShapeConfig::Square, None) => BrownianShape::Square,
                    (ShapeConfig::Exp, None) => BrownianShape::Exp,
                    (ShapeConfig::Abs, None) => BrownianShape::Abs,
                    (ShapeConfig::Sin, None) => BrownianShape::Sin,
                };
                Arc::new(BrownianFunctional { shape, amplitude: *amplitude, scale: *scale })
            }
            TerminalConfig::JumpCount { coefficients, offset } => {
                Arc::new(JumpCountFunctional { coefficients: coefficients.clone(), offset: *offset })
            }
            TerminalConfig::CompensatedJumps => {
                Arc::new(JumpCountFunctional::compensated_total(marks.intensities(), horizon))
            }
            TerminalConfig::Sum { terms } => {
                Arc::new(SumTerminal(terms.iter().map(|t| t.build(marks, horizon)).collect::<Result<_>>()?))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{
  "schema": "bsdej/run-config/v1",
  "command": "solve",
  "problem": {
    "horizon": 1.0,
    "steps": 4,
    "marks": [{"value": [1.0], "intensity": 1.0}],
    "generator": {"form": "affine", "y": 0.5},
    "terminal": {"form": "constant", "value": 2.0}
  }
}"#;

    #[test]
    fn parses_and_builds() {
        let c = RunConfig::parse(BASIC).unwrap();
        assert_eq!(c.command, Command::Solve);
        assert_eq!(c.method, MethodConfig::Tree);
        let p = c.problem().unwrap();
        assert_eq!(p.kappa(), 0.5);
        assert_eq!(p.grid.steps, 4);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::parse(BASIC).unwrap();
        let text = serde_json::to_string_pretty(&c.resolved()).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c.resolved());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = BASIC.replace("\"steps\": 4,", "\"steps\": 4, \"stpes\": 3,");
        let e = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("stpes") && e.contains("line 6"), "{e}");
    }

    #[test]
    fn negative_horizon_names_field_and_line() {
        let bad = BASIC.replace("\"horizon\": 1.0", "\"horizon\": -1.0");
        let e = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("problem.horizon") && e.contains("line 5"), "{e}");
    }

    #[test]
    fn ladder_levels_must_increase() {
        let bad = BASIC.replace("\"command\": \"solve\"", "\"command\": \"ladder\", \"ladder\": {\"levels\": [2.0, 1.0]}");
        let e = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("ladder.levels"), "{e}");
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let bad = BASIC.replace("run-config/v1", "run-config/v0");
        assert!(RunConfig::parse(&bad).unwrap_err().to_string().contains("schema"));
    }

    #[test]
    fn terminal_forms_build() {
        let marks = MarkSpace::scalar(&[(1.0, 2.0)]).unwrap();
        let t = TerminalConfig::Sum {
            terms: vec![
                TerminalConfig::CompensatedJumps,
                TerminalConfig::Brownian { shape: ShapeConfig::Call, amplitude: 1.0, scale: 1.0, strike: Some(0.5) },
            ],
        };
        let f = t.build(&marks, 1.0).unwrap();
        let v = f.value(crate::generators::StateView { brownian: &[1.5], counts: &[3] });
        assert_eq!(v, 3.0 - 2.0 + 1.0);
        let bad = TerminalConfig::Brownian { shape: ShapeConfig::Call, amplitude: 1.0, scale: 1.0, strike: None };
        assert!(bad.build(&marks, 1.0).is_err());
    }
}
