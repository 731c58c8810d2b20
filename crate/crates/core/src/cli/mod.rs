//! Config-driven runs: one JSON config in, one JSON report (plus CSV tables)
//! out.
//!
//! A report is `{"header": …, "body": …}`. The header carries the
//! timestamp and output location; the body embeds the resolved config and
//! is byte-identical across reruns of that config.

mod config;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{
    Command, GeneratorConfig, GrowthConfig, LadderSection, MarkConfig, MethodConfig, PicardSection, ProblemConfig,
    RunConfig, ShapeConfig, SubdivideSection, SuiteSection, TerminalConfig, VerifySection, ViewSection, CONFIG_SCHEMA,
};

use crate::error::{Error, Result};
use crate::estimates::{
    append_jsonl, ci_suite, uniqueness_experiment, verify_full_estimate, verify_zv_estimate, EstimateConfig,
    EstimateReport, Perturbation, SuiteConfig, SuiteSummary, UniquenessReport,
};
use crate::generators::BsdeProblem;
use crate::solver::{
    calibrate_constant, chained_solve, picard_solve, solve, truncation_ladder_solve, BasisConfig, Initialization,
    LadderReport, PicardTrace, Solution, SolveMethod, SubdivisionPlan,
};

pub const REPORT_SCHEMA: &str = "bsdej/report/v1";
/// Default output directory when neither `--out` nor the config sets one.
pub const OUT_DIR_ENV: &str = "BSDEJ_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitCode {
    Success = 0,
    InputError = 1,
    Divergence = 2,
    VerificationFailed = 3,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: ExitCode,
    pub message: String,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Header {
    schema: &'static str,
    tool: &'static str,
    version: &'static str,
    timestamp_unix: u64,
    output_dir: String,
}

#[derive(Debug, Serialize)]
struct Body<'a, R: Serialize> {
    command: Command,
    config: &'a RunConfig,
    status: &'a str,
    exit_code: i32,
    results: R,
}

#[derive(Debug, Serialize)]
struct Report<'a, R: Serialize> {
    header: Header,
    body: Body<'a, R>,
}

/// Reads the config, applies overrides and runs it.
pub fn run(inv: &Invocation) -> Outcome {
    let text = match std::fs::read_to_string(&inv.config) {
        Ok(t) => t,
        Err(e) => return failure(Error::Config(format!("{}: {e}", inv.config.display()))),
    };
    let mut config = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return failure(e),
    };
    if let Some(seed) = inv.seed {
        config.seed = seed;
    }
    let out = inv
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bsdej-out"));
    run_config(&config, &out).unwrap_or_else(failure)
}

fn failure(e: Error) -> Outcome {
    Outcome { code: ExitCode::InputError, message: format!("error: {e}"), files: Vec::new() }
}

/// Runs a parsed config, writing into `out`.
pub fn run_config(config: &RunConfig, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out)?;
    let mut w = Writer { out: out.to_path_buf(), files: Vec::new(), config: config.resolved() };
    let (code, message) = match config.command {
        Command::Solve => cmd_solve(config, &mut w)?,
        Command::Verify => cmd_verify(config, &mut w)?,
        Command::Ladder => cmd_ladder(config, &mut w)?,
    };
    Ok(Outcome { code, message, files: w.files })
}

struct Writer {
    out: PathBuf,
    files: Vec<PathBuf>,
    config: RunConfig,
}

impl Writer {
    fn report<R: Serialize>(&mut self, status: &str, code: ExitCode, results: R) -> Result<()> {
        let report = Report {
            header: Header {
                schema: REPORT_SCHEMA,
                tool: "bsdej",
                version: env!("CARGO_PKG_VERSION"),
                timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                output_dir: self.out.display().to_string(),
            },
            body: Body { command: self.config.command, config: &self.config, status, exit_code: code.code(), results },
        };
        let name = match self.config.command {
            Command::Solve => "solve-report.json",
            Command::Verify => "verify-report.json",
            Command::Ladder => "ladder-report.json",
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }
}

/// The part of a report that must be reproducible: everything from the
/// `"body"` key on.
pub fn report_body(text: &str) -> Option<&str> {
    text.find("\"body\":").map(|i| &text[i..])
}

#[derive(Debug, Serialize)]
struct DivergenceInfo {
    message: String,
    interval_length: f64,
    ratios: Vec<f64>,
    trace: PicardTrace,
}

#[derive(Debug, Serialize)]
struct SolveResults {
    fingerprint: String,
    method: &'static str,
    representation: Option<&'static str>,
    y0: Option<f64>,
    y0_se: Option<f64>,
    pilot: Option<PicardTrace>,
    plan: Option<SubdivisionPlan>,
    traces: Vec<PicardTrace>,
    divergence: Option<DivergenceInfo>,
}

fn traces_csv(traces: &[PicardTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["interval", "start", "end", "iteration", "y", "z", "v", "total", "ratio"])?;
    for (i, t) in traces.iter().enumerate() {
        for (n, d) in t.distances.iter().enumerate() {
            let ratio = n.checked_sub(1).and_then(|r| t.ratios.get(r).copied().flatten());
            w.write_record([
                i.to_string(),
                t.start.to_string(),
                t.end.to_string(),
                n.to_string(),
                d.y.to_string(),
                d.z.to_string(),
                d.v.to_string(),
                t.totals[n].to_string(),
                ratio.map_or(String::new(), |r| r.to_string()),
            ])?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::invalid(e.to_string()))
}

enum Solved {
    Done { solution: Solution, pilot: Option<PicardTrace>, plan: Option<SubdivisionPlan>, traces: Vec<PicardTrace> },
    Diverged { info: DivergenceInfo, pilot: Option<PicardTrace> },
}

impl Solved {
    fn converged(&self) -> bool {
        match self {
            Solved::Done { traces, .. } => traces.iter().all(|t| t.converged),
            Solved::Diverged { .. } => false,
        }
    }
}

fn divergence(e: Error) -> std::result::Result<DivergenceInfo, Error> {
    if !matches!(e.root(), Error::Divergence { .. }) {
        return Err(e);
    }
    let message = e.to_string();
    let mut cur = e;
    loop {
        match cur {
            Error::Interval { source, .. } => cur = *source,
            Error::Divergence { interval_length, ratios, trace } => {
                return Ok(DivergenceInfo { message, interval_length, ratios, trace: *trace })
            }
            other => return Err(other),
        }
    }
}

/// Direct solve, Picard, or pilot + subdivision + chained Picard, as
/// configured.
fn configured_solve(config: &RunConfig, problem: &BsdeProblem, method: &SolveMethod) -> Result<Solved> {
    let cfg = config.picard_config();
    if let Some(sub) = config.subdivide {
        let (pilot, c) = match sub.c_emp {
            Some(c) => (None, c),
            None => {
                let trace = match picard_solve(problem, method, &cfg) {
                    Ok((_, t)) => t,
                    Err(e) => divergence(e)?.trace,
                };
                let c = calibrate_constant(&trace, problem.kappa(), problem.grid.horizon).ok_or_else(|| {
                    Error::Config("subdivision: the pilot run recorded no contraction ratio; set `subdivide.c_emp`".into())
                })?;
                (Some(trace), c)
            }
        };
        let q = cfg.q.unwrap_or_else(|| crate::solver::picard_q(&problem.generator));
        let plan = crate::solver::subdivide_horizon(problem.grid.horizon, problem.kappa(), q, c, sub.safety)?;
        return match chained_solve(problem, &plan, method, &cfg) {
            Ok(ch) => Ok(Solved::Done { solution: ch.solution, pilot, plan: Some(plan), traces: ch.traces }),
            Err(e) => Ok(Solved::Diverged { info: divergence(e)?, pilot }),
        };
    }
    if config.picard.is_some() {
        return match picard_solve(problem, method, &cfg) {
            Ok((solution, trace)) => Ok(Solved::Done { solution, pilot: None, plan: None, traces: vec![trace] }),
            Err(e) => Ok(Solved::Diverged { info: divergence(e)?, pilot: None }),
        };
    }
    Ok(Solved::Done { solution: solve(problem, method)?, pilot: None, plan: None, traces: Vec::new() })
}

/// Solves the configured problem. Exit 0 on convergence, 2 when Picard
/// diverges or stops short of its tolerance.
fn cmd_solve(config: &RunConfig, w: &mut Writer) -> Result<(ExitCode, String)> {
    let problem = config.problem()?;
    let method = config.solve_method();
    let solved = configured_solve(config, &problem, &method)?;
    let converged = solved.converged();
    let mut results = SolveResults {
        fingerprint: problem.fingerprint(),
        method: method.name(),
        representation: None,
        y0: None,
        y0_se: None,
        pilot: None,
        plan: None,
        traces: Vec::new(),
        divergence: None,
    };
    let (code, status, message) = match solved {
        Solved::Done { solution, pilot, plan, traces } => {
            results.representation = Some(solution.representation());
            results.y0 = Some(solution.y0);
            results.y0_se = Some(solution.y0_se);
            results.pilot = pilot;
            results.plan = plan;
            results.traces = traces;
            if converged {
                (ExitCode::Success, "converged", format!("Y0 = {} (se {})", solution.y0, solution.y0_se))
            } else {
                (ExitCode::Divergence, "not-converged", "Picard iteration stopped before reaching its tolerance".into())
            }
        }
        Solved::Diverged { info, pilot } => {
            let msg = info.message.clone();
            results.traces = vec![info.trace.clone()];
            results.pilot = pilot;
            results.divergence = Some(info);
            (ExitCode::Divergence, "diverged", msg)
        }
    };
    let mut all: Vec<PicardTrace> = results.pilot.iter().cloned().collect();
    all.extend(results.traces.iter().cloned());
    if !all.is_empty() {
        w.write("picard-trace.csv", &traces_csv(&all)?)?;
    }
    w.report(status, code, &results)?;
    Ok((code, message))
}

#[derive(Debug, Serialize)]
struct VerifyResults {
    y0: Option<f64>,
    y0_se: Option<f64>,
    zv: Option<EstimateReport>,
    full: Option<EstimateReport>,
    uniqueness: Option<UniquenessReport>,
    suite: Option<SuiteSummary>,
    baseline_ok: Option<bool>,
    pass: bool,
}

fn cmd_verify(config: &RunConfig, w: &mut Writer) -> Result<(ExitCode, String)> {
    let section = config.verify.unwrap_or_default();
    let est = EstimateConfig { ceiling: section.ceiling, view: config.view_config() };
    let mut results =
        VerifyResults { y0: None, y0_se: None, zv: None, full: None, uniqueness: None, suite: None, baseline_ok: None, pass: true };
    let log = w.out.join("estimates.jsonl");
    if config.problem.is_some() {
        let problem = config.problem()?;
        let method = config.solve_method();
        let solution = match configured_solve(config, &problem, &method)? {
            Solved::Done { solution, .. } => solution,
            Solved::Diverged { info, .. } => {
                let msg = info.message.clone();
                w.write("picard-trace.csv", &traces_csv(std::slice::from_ref(&info.trace))?)?;
                w.report("diverged", ExitCode::Divergence, &SolveResults {
                    fingerprint: problem.fingerprint(),
                    method: method.name(),
                    representation: None,
                    y0: None,
                    y0_se: None,
                    pilot: None,
                    plan: None,
                    traces: Vec::new(),
                    divergence: Some(info),
                })?;
                return Ok((ExitCode::Divergence, msg));
            }
        };
        let p = section.p.unwrap_or(problem.generator.p);
        let zv = verify_zv_estimate(&solution, &problem, p, &est)?;
        let full = verify_full_estimate(&solution, &problem, p, &est)?;
        append_jsonl(&log, &zv)?;
        append_jsonl(&log, &full)?;
        results.pass &= zv.pass && full.pass;
        results.y0 = Some(solution.y0);
        results.y0_se = Some(solution.y0_se);
        results.zv = Some(zv);
        results.full = Some(full);
        if section.uniqueness {
            let mut perts = vec![Perturbation::init(Initialization::Zero), Perturbation::init(Initialization::perturbed())];
            if let SolveMethod::Mc { basis, .. } = method {
                perts.push(Perturbation { init: Initialization::Zero, basis: Some(BasisConfig { degree: basis.degree + 1, ..basis }) });
            }
            let u = uniqueness_experiment(&problem, &method, &perts, &config.picard_config())?;
            append_jsonl(&log, &u)?;
            results.pass &= u.pass;
            results.uniqueness = Some(u);
        }
    }
    if let Some(s) = config.suite {
        let summary = ci_suite(&SuiteConfig { steps: s.steps, ceiling: section.ceiling })?;
        w.write("suite.csv", &summary.to_csv()?)?;
        for row in &summary.rows {
            append_jsonl(&log, row)?;
        }
        results.pass &= summary.pass;
        if let Some(b) = s.baseline {
            let ok = summary.within_baseline(b);
            results.pass &= ok;
            results.baseline_ok = Some(ok);
        }
        results.suite = Some(summary);
    }
    if log.exists() && !w.files.contains(&log) {
        w.files.push(log);
    }
    let (code, status) = if results.pass {
        (ExitCode::Success, "pass")
    } else {
        (ExitCode::VerificationFailed, "fail")
    };
    w.report(status, code, &results)?;
    Ok((code, format!("verification {status}")))
}

#[derive(Debug, Serialize)]
struct LadderResults {
    report: LadderReport,
    monotone: bool,
    all_within_bound: bool,
}

fn cmd_ladder(config: &RunConfig, w: &mut Writer) -> Result<(ExitCode, String)> {
    let problem = config.problem()?;
    let section = config.ladder.clone().ok_or_else(|| Error::Config("field `ladder` is required".into()))?;
    let (report, _) =
        truncation_ladder_solve(&problem, &section.levels, &config.solve_method(), section.tol, &config.view_config())?;
    let mut levels = csv::Writer::from_writer(Vec::new());
    for l in &report.levels {
        levels.serialize(l)?;
    }
    let mut pairs = csv::Writer::from_writer(Vec::new());
    for p in &report.pairs {
        pairs.serialize(p)?;
    }
    let text = |w: csv::Writer<Vec<u8>>| -> Result<String> {
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::invalid(e.to_string()))
    };
    w.write("ladder-levels.csv", &text(levels)?)?;
    w.write("ladder-pairs.csv", &text(pairs)?)?;
    let monotone = report.levels.windows(2).all(|l| l[0].y0 <= l[1].y0) || report.levels.windows(2).all(|l| l[0].y0 >= l[1].y0);
    let all_within_bound = report.pairs.iter().all(|p| p.within_bound);
    let last = report.levels.last().map(|l| l.y0).unwrap_or(f64::NAN);
    let (code, status) = if all_within_bound {
        (ExitCode::Success, "pass")
    } else {
        (ExitCode::VerificationFailed, "bound-violated")
    };
    w.report(status, code, &LadderResults { report, monotone, all_within_bound })?;
    Ok((code, format!("ladder {status}; Y0 at the top level = {last}")))
}
