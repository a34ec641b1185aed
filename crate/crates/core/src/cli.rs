//! Batch experiment runner behind the `ipds` binary.
//!
//! `ipds run|scaling|audit [config.json] [overrides]`. A config file is a
//! single JSON object ([`ExperimentConfig`]); `--zoo <family>` may replace it
//! for quick runs. Exit codes: 0 success, 1 bound-check failure, 2 config
//! error, 3 solver failure.

use crate::constrained::{self, ConsMode, ConsReference, ConstrainedProgram, FeasibilityReport};
use crate::gap::{AnalyticInner, GapEvaluator};
use crate::ipds::{self, GapTarget, HpConfig, RunMode, RunOptions, RunTrace, Schedule};
use crate::problem::{OracleCounter, SaddleProblem};
use crate::zoo::{self, ExactInner, Family, QpParams, ZooInstance};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BOUND: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error at line {line}, column {column}: {msg}")]
    ConfigAt { line: usize, column: usize, msg: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigAt { .. } => EXIT_CONFIG,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }

    fn from_json(e: serde_json::Error) -> Self {
        CliError::ConfigAt { line: e.line(), column: e.column(), msg: e.to_string() }
    }
}

/// Where the problem comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    Zoo(ZooSpec),
    /// Path to a saddle problem in the JSON problem schema.
    Json(PathBuf),
    /// Path to a constrained program.
    Constrained(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooSpec {
    pub family: Family,
    /// Defaults to the base seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dim_x: Option<usize>,
    #[serde(default)]
    pub dim_lambda: Option<usize>,
    /// Components (quadratic families) or constraints (`qcqp`).
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub active_fraction: Option<f64>,
    #[serde(default)]
    pub params: Option<QpParams>,
}

impl ZooSpec {
    pub fn family(family: Family) -> Self {
        ZooSpec { family, seed: None, dim_x: None, dim_lambda: None, n: None, active_fraction: None, params: None }
    }

    pub fn build(&self, base_seed: u64) -> Result<ZooInstance, zoo::ZooError> {
        let seed = self.seed.unwrap_or(base_seed);
        let prm = self.params.unwrap_or_default();
        let dx = self.dim_x.unwrap_or(4);
        let dl = self.dim_lambda.unwrap_or(3);
        match self.family {
            Family::BilinearQp => zoo::make_bilinear_qp_with(dx, dl, self.n.unwrap_or(1), seed, &prm),
            Family::FiniteSumQp => zoo::make_bilinear_qp_with(dx, dl, self.n.unwrap_or(50).max(2), seed, &prm),
            Family::NonbilinearEntropy => zoo::make_nonbilinear_entropy_with(dx, dl, self.n.unwrap_or(1), seed, &prm),
            Family::Qcqp => {
                zoo::make_qcqp(self.dim_x.unwrap_or(3), self.n.unwrap_or(20), seed, self.active_fraction.unwrap_or(0.5))
            }
        }
    }
}

pub const MAX_SEEDS: u64 = 1_000_000;

/// Explicit list or an inclusive range `"a..b"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range(String),
}

impl SeedSpec {
    pub fn resolve(&self) -> Result<Vec<u64>, CliError> {
        match self {
            SeedSpec::List(v) => Ok(v.clone()),
            SeedSpec::Range(s) => parse_seed_range(s),
        }
    }
}

pub fn parse_seed_range(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("seed range {s:?} must look like a..b with a <= b"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    if b - a >= MAX_SEEDS {
        return Err(CliError::Config(format!("seed range {s:?} exceeds {MAX_SEEDS} seeds")));
    }
    Ok((a..=b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    #[serde(default = "default_modes")]
    pub modes: Vec<RunMode>,
    pub eps: Vec<f64>,
    /// Base seed; also the default seed list.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<SeedSpec>,
    /// Fixed outer iteration count; the theoretical count when absent.
    #[serde(default)]
    pub k: Option<u64>,
    /// Stop once the duality gap upper bound reaches this value.
    #[serde(default)]
    pub stop_gap: Option<f64>,
    /// Defaults to `Duality` on bounded Λ, `Smoothed` otherwise.
    #[serde(default)]
    pub target: Option<GapTarget>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub count_gap_oracles: bool,
    #[serde(default)]
    pub hp_delta: Option<f64>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_modes() -> Vec<RunMode> {
    vec![RunMode::Det]
}

fn default_out() -> PathBuf {
    PathBuf::from("ipds_out")
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        let c: ExperimentConfig = serde_json::from_str(s).map_err(CliError::from_json)?;
        c.validate()?;
        Ok(c)
    }

    pub fn quick(source: ProblemSource) -> Self {
        ExperimentConfig {
            problem: source,
            modes: default_modes(),
            eps: vec![1e-2],
            seed: 0,
            seeds: None,
            k: None,
            stop_gap: None,
            target: None,
            output_dir: default_out(),
            count_gap_oracles: false,
            hp_delta: None,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.modes.is_empty() || self.eps.is_empty() {
            return Err(CliError::Config("mode and eps grids must be nonempty".into()));
        }
        if self.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(CliError::Config("eps values must be positive and finite".into()));
        }
        if self.seed_list()?.is_empty() {
            return Err(CliError::Config("seed list must be nonempty".into()));
        }
        if let Some(d) = self.hp_delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(CliError::Config("hp_delta must lie in (0, 1)".into()));
            }
        }
        if self.modes.contains(&RunMode::RandHp) && self.hp_delta.is_none() {
            return Err(CliError::Config("mode rand_hp needs hp_delta".into()));
        }
        if self.k == Some(0) {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Result<Vec<u64>, CliError> {
        match &self.seeds {
            Some(s) => s.resolve(),
            None => Ok(vec![self.seed]),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ipds", about = "Inexact primal-dual smoothing experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the (eps, mode, seed) grid and check the convergence bounds.
    Run(Overrides),
    /// Fit oracle-call scaling against eps (needs at least 4 eps values).
    Scaling(Overrides),
    /// Audit smoothness constants and reference solutions.
    Audit(Overrides),
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// Experiment config; optional when --zoo is given.
    pub config: Option<PathBuf>,
    /// Comma-separated eps grid.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Base seed (overrides IPDS_SEED and the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed list as an inclusive range `a..b`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated modes: det, rand, rand_hp.
    #[arg(long, value_delimiter = ',')]
    pub mode: Option<Vec<String>>,
    #[arg(long)]
    pub hp_delta: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Zoo family used in place of the config's problem.
    #[arg(long)]
    pub zoo: Option<String>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Charge gap evaluations to the oracle counters.
    #[arg(long)]
    pub count_gap_oracles: bool,
}

/// Config after file loading, env var and flag overrides.
pub fn resolve_config(o: &Overrides, env_seed: Option<&str>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&o.config, &o.zoo) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut c: ExperimentConfig = serde_json::from_str(&text).map_err(CliError::from_json)?;
            let base = path.parent().unwrap_or(Path::new("."));
            match &mut c.problem {
                ProblemSource::Json(p) | ProblemSource::Constrained(p) if p.is_relative() => *p = base.join(&*p),
                _ => {}
            }
            c
        }
        (None, Some(_)) => ExperimentConfig::quick(ProblemSource::Zoo(ZooSpec::family(Family::BilinearQp))),
        (None, None) => return Err(CliError::Config("give a config file or --zoo <family>".into())),
    };
    if let Some(fam) = &o.zoo {
        let family = Family::parse(fam).ok_or_else(|| CliError::Config(format!("unknown zoo family {fam:?}")))?;
        cfg.problem = ProblemSource::Zoo(ZooSpec::family(family));
    }
    if let Some(s) = env_seed {
        cfg.seed = s.trim().parse().map_err(|_| CliError::Config(format!("IPDS_SEED={s:?} is not a u64")))?;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(r) = &o.seeds {
        cfg.seeds = Some(SeedSpec::Range(r.clone()));
    }
    if let Some(e) = &o.eps {
        cfg.eps = e.clone();
    }
    if let Some(ms) = &o.mode {
        cfg.modes = ms
            .iter()
            .map(|m| match m.as_str() {
                "det" => Ok(RunMode::Det),
                "rand" => Ok(RunMode::Rand),
                "rand_hp" => Ok(RunMode::RandHp),
                other => Err(CliError::Config(format!("unknown mode {other:?}"))),
            })
            .collect::<Result<_, _>>()?;
    }
    if o.hp_delta.is_some() {
        cfg.hp_delta = o.hp_delta;
        if o.mode.is_none() && cfg.modes == default_modes() {
            cfg.modes = vec![RunMode::RandHp];
        }
    }
    if o.jobs.is_some() {
        cfg.jobs = o.jobs;
    }
    if o.k.is_some() {
        cfg.k = o.k;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    cfg.count_gap_oracles |= o.count_gap_oracles;
    cfg.validate()?;
    Ok(cfg)
}

/// A loaded problem with whatever reference data is available.
pub enum Loaded {
    Saddle { p: SaddleProblem, analytic: Option<Arc<dyn AnalyticInner>>, zoo: Option<Box<ZooInstance>> },
    Constrained { cp: ConstrainedProgram, reference: ConsReference, zoo: Option<Box<ZooInstance>> },
}

pub fn load_problem(cfg: &ExperimentConfig) -> Result<Loaded, CliError> {
    match &cfg.problem {
        ProblemSource::Zoo(spec) => {
            let inst = spec.build(cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(cp) = inst.constrained.clone() {
                let reference = ConsReference {
                    f_star: Some(inst.reference.f_star),
                    lambda_star: Some(inst.reference.lambda_star.clone()),
                };
                Ok(Loaded::Constrained { cp, reference, zoo: Some(Box::new(inst)) })
            } else {
                Ok(Loaded::Saddle { p: inst.problem.clone(), analytic: Some(inst.analytic()), zoo: Some(Box::new(inst)) })
            }
        }
        ProblemSource::Json(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let p = SaddleProblem::from_json(&text).map_err(|e| match e {
                crate::problem::ProblemError::Parse { line, column, msg } => CliError::ConfigAt { line, column, msg },
                other => CliError::Config(other.to_string()),
            })?;
            let analytic = ExactInner::new(&p).map(|i| Arc::new(i) as Arc<dyn AnalyticInner>);
            Ok(Loaded::Saddle { p, analytic, zoo: None })
        }
        ProblemSource::Constrained(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let cp: ConstrainedProgram = serde_json::from_str(&text).map_err(CliError::from_json)?;
            Ok(Loaded::Constrained { cp, reference: ConsReference::default(), zoo: None })
        }
    }
}

/// One (eps, mode, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub eps: f64,
    pub mode: RunMode,
    /// `None` for deterministic runs.
    pub seed: Option<u64>,
    pub k: u64,
    pub primal_calls: u64,
    pub dual_calls: u64,
    pub target: GapTarget,
    /// Upper end of the final target gap (or of the objective gap for
    /// constrained programs).
    pub metric: Option<f64>,
    pub bound: f64,
    /// Pass/fail for deterministic cells; `None` when judged per group.
    pub pass: Option<bool>,
    pub final_gap: Option<f64>,
    pub final_sgap: Option<f64>,
    pub trace_hash: String,
    pub trace_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<FeasibilityReport>,
}

/// Verdict over the seeds of one randomized (eps, mode) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupVerdict {
    pub eps: f64,
    pub mode: RunMode,
    pub seeds: usize,
    /// `rand`: Monte-Carlo mean and standard error against the bound.
    pub mean: Option<f64>,
    pub std_err: Option<f64>,
    pub bound: f64,
    /// `rand_hp`: fraction of seeds meeting `eps`, against `1 − δ − 2σ`.
    pub success_fraction: Option<f64>,
    pub required_fraction: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub problem_hash: String,
    pub cells: Vec<CellResult>,
    pub groups: Vec<GroupVerdict>,
    pub all_pass: bool,
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn eps_tag(eps: f64) -> String {
    format!("{eps:e}")
}

struct CellOutput {
    result: CellResult,
    trace: RunTrace,
}

/// Problem-level data shared by all cells of one eps.
struct SaddleSetup {
    schedule: Schedule,
    target: GapTarget,
    initial: f64,
    k: u64,
}

fn saddle_setup(
    p: &SaddleProblem,
    analytic: &Option<Arc<dyn AnalyticInner>>,
    cfg: &ExperimentConfig,
    eps: f64,
) -> Result<SaddleSetup, CliError> {
    let schedule = Schedule::new(p.l_d(), eps);
    let target = cfg.target.unwrap_or(if p.dual_geom.set().bounded() { GapTarget::Duality } else { GapTarget::Smoothed });
    if target == GapTarget::Duality && !p.dual_geom.set().bounded() {
        return Err(CliError::Config("the duality-gap target needs a bounded dual set".into()));
    }
    let ev = evaluator(analytic, false);
    let (x0, l0) = (p.primal_geom.anchor(), p.dual_geom.anchor());
    let nul = OracleCounter::new();
    let initial = match target {
        GapTarget::Duality => ev.duality_gap(p, &x0, &l0, &nul).map_err(solver_err)?.hi,
        GapTarget::Smoothed => ev.smoothed_gap(p, &x0, &l0, schedule.rho0, &nul).map_err(solver_err)?.hi,
    };
    let k = match cfg.k {
        Some(k) => k,
        None => ipds::k_for_target(p, eps, target, initial).map_err(solver_err)?,
    };
    Ok(SaddleSetup { schedule, target, initial, k })
}

fn evaluator(analytic: &Option<Arc<dyn AnalyticInner>>, count: bool) -> GapEvaluator {
    let mut ev = match analytic {
        Some(a) => GapEvaluator::analytic(a.clone()),
        None => GapEvaluator::certified(),
    };
    ev.count_oracles = count;
    ev
}

fn saddle_bound(p: &SaddleProblem, setup: &SaddleSetup, k: u64, eps: f64) -> f64 {
    match setup.target {
        GapTarget::Duality => {
            let b = p.dual_geom.dgf_sup_abs().as_f64();
            ipds::duality_gap_bound(k, eps, p.l_d(), b, setup.initial)
        }
        GapTarget::Smoothed => ipds::smoothed_gap_bound(k, eps, setup.initial),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_saddle_cell(
    p: &SaddleProblem,
    analytic: &Option<Arc<dyn AnalyticInner>>,
    cfg: &ExperimentConfig,
    setup: &SaddleSetup,
    eps: f64,
    mode: RunMode,
    seed: u64,
) -> Result<CellOutput, CliError> {
    let opts = RunOptions {
        k: setup.k,
        stop_gap: cfg.stop_gap,
        evaluator: Some(evaluator(analytic, cfg.count_gap_oracles)),
        analytic: analytic.clone(),
        ..RunOptions::default()
    };
    let (x0, l0) = (p.primal_geom.anchor(), p.dual_geom.anchor());
    let ctr = OracleCounter::new();
    let trace = match mode {
        RunMode::Det => ipds::run_deterministic(p, &setup.schedule, (&x0, &l0), &opts, &ctr),
        RunMode::Rand => ipds::run_randomized(p, &setup.schedule, (&x0, &l0), &opts, seed, None, &ctr),
        RunMode::RandHp => {
            let hp = HpConfig { delta: cfg.hp_delta.unwrap_or(0.2), k_fixed: setup.k };
            ipds::run_randomized(p, &setup.schedule, (&x0, &l0), &opts, seed, Some(hp), &ctr)
        }
    }
    .map_err(solver_err)?;
    let last = trace.last();
    let k = trace.iterations();
    let (final_gap, final_sgap) = (last.gap.map(|g| g.hi), last.sgap.map(|g| g.hi));
    let metric = match setup.target {
        GapTarget::Duality => final_gap,
        GapTarget::Smoothed => final_sgap,
    };
    let bound = saddle_bound(p, setup, k, eps);
    let pass = (mode == RunMode::Det).then(|| metric.is_some_and(|m| m <= bound));
    Ok(CellOutput {
        result: CellResult {
            eps,
            mode,
            seed: (mode != RunMode::Det).then_some(seed),
            k,
            primal_calls: ctr.primal(),
            dual_calls: ctr.dual(),
            target: setup.target,
            metric,
            bound,
            pass,
            final_gap,
            final_sgap,
            trace_hash: trace.hash(),
            trace_file: None,
            feasibility: None,
        },
        trace,
    })
}

fn run_constrained_cell(
    cp: &ConstrainedProgram,
    reference: &ConsReference,
    cfg: &ExperimentConfig,
    eps: f64,
    mode: RunMode,
    seed: u64,
) -> Result<CellOutput, CliError> {
    let cmode = match mode {
        RunMode::Det => ConsMode::Det,
        RunMode::Rand => ConsMode::Rand { seed },
        RunMode::RandHp => ConsMode::RandHp { seed, delta: cfg.hp_delta.unwrap_or(0.2) },
    };
    let ctr = OracleCounter::new();
    let (_, report, trace) = constrained::solve_constrained(cp, eps, cmode, cfg.k, reference, &ctr).map_err(solver_err)?;
    let last = trace.last();
    let pass = (mode == RunMode::Det).then(|| report.passes());
    Ok(CellOutput {
        result: CellResult {
            eps,
            mode,
            seed: (mode != RunMode::Det).then_some(seed),
            k: trace.iterations(),
            primal_calls: ctr.primal(),
            dual_calls: ctr.dual(),
            target: GapTarget::Smoothed,
            metric: report.objective_gap,
            bound: report.objective_gap_bound,
            pass,
            final_gap: last.gap.map(|g| g.hi),
            final_sgap: last.sgap.map(|g| g.hi),
            trace_hash: trace.hash(),
            trace_file: None,
            feasibility: Some(report),
        },
        trace,
    })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::Solver(format!("worker pool: {e}")))
}

fn cells_for(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<(f64, RunMode, u64)> {
    let mut cells = Vec::new();
    for &eps in &cfg.eps {
        for &mode in &cfg.modes {
            if mode == RunMode::Det {
                cells.push((eps, mode, cfg.seed));
            } else {
                cells.extend(seeds.iter().map(|s| (eps, mode, *s)));
            }
        }
    }
    cells
}

/// Executes every grid cell on the worker pool; results keep grid order.
fn execute(cfg: &ExperimentConfig, loaded: &Loaded) -> Result<(String, Vec<CellOutput>), CliError> {
    use rayon::prelude::*;
    let seeds = cfg.seed_list()?;
    let cells = cells_for(cfg, &seeds);
    let pool = pool(cfg.jobs)?;
    match loaded {
        Loaded::Saddle { p, analytic, .. } => {
            let setups: Vec<(f64, SaddleSetup)> =
                cfg.eps.iter().map(|&e| saddle_setup(p, analytic, cfg, e).map(|s| (e, s))).collect::<Result<_, _>>()?;
            let setup_for = |eps: f64| &setups.iter().find(|(e, _)| *e == eps).expect("setup per eps").1;
            let out = pool.install(|| {
                cells
                    .par_iter()
                    .map(|&(eps, mode, seed)| run_saddle_cell(p, analytic, cfg, setup_for(eps), eps, mode, seed))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            Ok((ipds::problem_hash(p), out))
        }
        Loaded::Constrained { cp, reference, .. } => {
            let hash = constrained::build_lagrangian(cp).map(|p| ipds::problem_hash(&p)).map_err(solver_err)?;
            let out = pool.install(|| {
                cells
                    .par_iter()
                    .map(|&(eps, mode, seed)| run_constrained_cell(cp, reference, cfg, eps, mode, seed))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            Ok((hash, out))
        }
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Required success fraction `1 − δ − 2√(δ(1−δ)/N)`.
pub fn hp_required_fraction(delta: f64, n: usize) -> f64 {
    1.0 - delta - 2.0 * (delta * (1.0 - delta) / n as f64).sqrt()
}

fn group_verdicts(cfg: &ExperimentConfig, cells: &[CellResult]) -> Vec<GroupVerdict> {
    let mut out = Vec::new();
    for &eps in &cfg.eps {
        for &mode in cfg.modes.iter().filter(|m| **m != RunMode::Det) {
            let group: Vec<&CellResult> = cells.iter().filter(|c| c.eps == eps && c.mode == mode).collect();
            if group.is_empty() {
                continue;
            }
            let bound = group.iter().map(|c| c.bound).fold(f64::INFINITY, f64::min);
            let constrained = group[0].feasibility.is_some();
            let v = match mode {
                RunMode::Rand => {
                    let vals: Vec<f64> = group.iter().map(|c| c.metric.unwrap_or(f64::INFINITY)).collect();
                    let (mean, se) = mean_se(&vals);
                    let viol_ok = !constrained || {
                        let r0 = group[0].feasibility.as_ref().expect("constrained cell");
                        (0..r0.violations.len()).all(|i| {
                            let vi: Vec<f64> =
                                group.iter().map(|c| c.feasibility.as_ref().expect("constrained").violations[i]).collect();
                            let (m, s) = mean_se(&vi);
                            !r0.lambda_star_aware || m <= r0.violation_bounds[i] + 3.0 * s
                        })
                    };
                    GroupVerdict {
                        eps,
                        mode,
                        seeds: group.len(),
                        mean: Some(mean),
                        std_err: Some(se),
                        bound,
                        success_fraction: None,
                        required_fraction: None,
                        pass: (group[0].metric.is_none() && constrained || mean <= bound + 3.0 * se) && viol_ok,
                    }
                }
                _ => {
                    let delta = cfg.hp_delta.unwrap_or(0.2);
                    let ok = group
                        .iter()
                        .filter(|c| match &c.feasibility {
                            Some(r) => r.passes(),
                            None => c.metric.is_some_and(|m| m <= eps),
                        })
                        .count();
                    let frac = ok as f64 / group.len() as f64;
                    let req = hp_required_fraction(delta, group.len());
                    GroupVerdict {
                        eps,
                        mode,
                        seeds: group.len(),
                        mean: None,
                        std_err: None,
                        bound: eps,
                        success_fraction: Some(frac),
                        required_fraction: Some(req),
                        pass: frac >= req,
                    }
                }
            };
            out.push(v);
        }
    }
    out
}

/// `ipds run`: writes one trace CSV per cell and `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(RunSummary, i32), CliError> {
    let loaded = load_problem(cfg)?;
    let (problem_hash, outs) = execute(cfg, &loaded)?;
    let trace_dir = cfg.output_dir.join("traces");
    std::fs::create_dir_all(&trace_dir)?;
    let mut cells = Vec::with_capacity(outs.len());
    for o in outs {
        let mut r = o.result;
        let name = match r.seed {
            Some(s) => format!("{}_eps{}_seed{s}.csv", r.mode.as_str(), eps_tag(r.eps)),
            None => format!("{}_eps{}.csv", r.mode.as_str(), eps_tag(r.eps)),
        };
        std::fs::write(trace_dir.join(&name), o.trace.to_csv())?;
        r.trace_file = Some(format!("traces/{name}"));
        cells.push(r);
    }
    let groups = group_verdicts(cfg, &cells);
    let all_pass = cells.iter().all(|c| c.pass != Some(false)) && groups.iter().all(|g| g.pass);
    let summary = RunSummary { config: cfg.clone(), problem_hash, cells, groups, all_pass };
    std::fs::write(
        cfg.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok((summary, if all_pass { EXIT_OK } else { EXIT_BOUND }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub eps: f64,
    pub mode: RunMode,
    /// Mean over seeds for randomized modes.
    pub primal_calls: f64,
    pub dual_calls: f64,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub mode: RunMode,
    pub primal_slope: f64,
    pub dual_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub fits: Vec<ScalingFit>,
}

/// Least-squares slope of `ln y` against `ln eps`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = pts.iter().map(|(e, y)| (e.ln(), y.ln())).collect();
    constrained::least_squares_line(&logs).1
}

/// `ipds scaling`: writes `scaling.csv`, `scaling.dat` and `scaling_fit.json`.
pub fn cmd_scaling(cfg: &ExperimentConfig) -> Result<(ScalingReport, i32), CliError> {
    let mut distinct = cfg.eps.clone();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(CliError::Config("scaling needs at least 4 distinct eps values".into()));
    }
    let loaded = load_problem(cfg)?;
    let (_, outs) = execute(cfg, &loaded)?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &mode in &cfg.modes {
        let mut pts_p = Vec::new();
        let mut pts_d = Vec::new();
        for &eps in &distinct {
            let g: Vec<&CellResult> = outs.iter().map(|o| &o.result).filter(|c| c.eps == eps && c.mode == mode).collect();
            let n = g.len() as f64;
            let row = ScalingRow {
                eps,
                mode,
                primal_calls: g.iter().map(|c| c.primal_calls as f64).sum::<f64>() / n,
                dual_calls: g.iter().map(|c| c.dual_calls as f64).sum::<f64>() / n,
                k: g.iter().map(|c| c.k as f64).sum::<f64>() / n,
            };
            pts_p.push((eps, row.primal_calls.max(1.0)));
            pts_d.push((eps, row.dual_calls.max(1.0)));
            rows.push(row);
        }
        fits.push(ScalingFit { mode, primal_slope: loglog_slope(&pts_p), dual_slope: loglog_slope(&pts_d) });
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut csv = String::from("eps,mode,primal_calls,dual_calls,K\n");
    for r in &rows {
        csv.push_str(&format!("{:e},{},{},{},{}\n", r.eps, r.mode.as_str(), r.primal_calls, r.dual_calls, r.k));
    }
    std::fs::write(cfg.output_dir.join("scaling.csv"), csv)?;
    let mut dat = String::new();
    for (i, &mode) in cfg.modes.iter().enumerate() {
        if i > 0 {
            dat.push_str("\n\n");
        }
        let fit = &fits[i];
        dat.push_str(&format!(
            "# mode {} primal_slope {} dual_slope {}\n# eps primal_calls dual_calls K\n",
            mode.as_str(),
            fit.primal_slope,
            fit.dual_slope
        ));
        for r in rows.iter().filter(|r| r.mode == mode) {
            dat.push_str(&format!("{:e} {} {} {}\n", r.eps, r.primal_calls, r.dual_calls, r.k));
        }
    }
    std::fs::write(cfg.output_dir.join("scaling.dat"), dat)?;
    let report = ScalingReport { rows, fits };
    std::fs::write(
        cfg.output_dir.join("scaling_fit.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok((report, EXIT_OK))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub smoothness: Option<crate::problem::SmoothnessAudit>,
    pub smoothness_error: Option<String>,
    pub derived: Option<crate::problem::DerivedConstants>,
    pub reference: Option<zoo::Reference>,
    pub lipschitz: Option<zoo::LipschitzAudit>,
    /// Largest relative distance of analytic `ψᴰ` outside the certified
    /// interval on sampled points, with the allowed rounding slack.
    pub certified_disagreement: Option<f64>,
    pub certified_tol: Option<f64>,
    pub constants: Option<constrained::ConstantsReport>,
    pub pass: bool,
}

/// `ipds audit`: smoothness constants, reference audits and analytic vs
/// certified agreement; writes `audit.json`.
pub fn cmd_audit(cfg: &ExperimentConfig) -> Result<(AuditReport, i32), CliError> {
    let loaded = load_problem(cfg)?;
    let mut rep = AuditReport {
        smoothness: None,
        smoothness_error: None,
        derived: None,
        reference: None,
        lipschitz: None,
        certified_disagreement: None,
        certified_tol: None,
        constants: None,
        pass: true,
    };
    let (p, zoo_inst) = match &loaded {
        Loaded::Saddle { p, zoo, .. } => (p.clone(), zoo.as_deref()),
        Loaded::Constrained { cp, zoo, .. } => {
            let c = constrained::compute_constants(cp).map_err(solver_err)?;
            rep.constants = Some(c);
            (constrained::build_lagrangian(cp).map_err(solver_err)?, zoo.as_deref())
        }
    };
    match p.audit_constants(cfg.seed, 1000) {
        Ok(a) => rep.smoothness = Some(a),
        Err(e) => {
            rep.smoothness_error = Some(e.to_string());
            rep.pass = false;
        }
    }
    rep.derived = Some(p.derived_constants());
    if let Some(inst) = zoo_inst {
        rep.reference = Some(inst.reference.clone());
        rep.pass &= inst.reference.audit.saddle_violation <= zoo::AUDIT_TOL;
        if inst.constrained.is_none() {
            let la = zoo::lipschitz_audit(inst, cfg.seed, 1000);
            rep.pass &= la.passes(1e-9);
            rep.lipschitz = Some(la);
            let (dis, tol) = certified_agreement(inst, cfg.seed, 20).map_err(solver_err)?;
            rep.pass &= dis <= tol;
            rep.certified_disagreement = Some(dis);
            rep.certified_tol = Some(tol);
        }
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("audit.json"), serde_json::to_string_pretty(&rep).expect("audit serializes"))?;
    Ok((rep.clone(), if rep.pass { EXIT_OK } else { EXIT_BOUND }))
}

/// Relative slack for floating-point rounding in interval containment.
pub const CERTIFIED_ROUNDING: f64 = 1e-12;

/// Largest relative distance of the analytic `ψᴰ(λ)` outside the certified
/// interval at sampled λ, with the allowed rounding slack.
pub fn certified_agreement(inst: &ZooInstance, seed: u64, samples: usize) -> Result<(f64, f64), crate::gap::GapError> {
    use rand::SeedableRng;
    let p = &inst.problem;
    let an = inst.evaluator();
    let ce = GapEvaluator::certified();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xce47);
    let nul = OracleCounter::new();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let l = p.dual_geom.sample(&mut rng);
        let a = an.psi_dual(p, &l, &nul)?;
        let c = ce.psi_dual(p, &l, &nul)?;
        let v = a.mid();
        worst = worst.max((c.lo - v).max(v - c.hi).max(0.0) / (1.0 + v.abs()));
    }
    Ok((worst, CERTIFIED_ROUNDING))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = String>, env_seed: Option<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (o, which) = match &cli.command {
        Command::Run(o) => (o, 0),
        Command::Scaling(o) => (o, 1),
        Command::Audit(o) => (o, 2),
    };
    let result = resolve_config(o, env_seed.as_deref()).and_then(|cfg| match which {
        0 => cmd_run(&cfg).map(|(s, code)| {
            for c in &s.cells {
                println!(
                    "{} eps={:e} seed={:?} K={} primal={} dual={} metric={:?} bound={:e} pass={:?}",
                    c.mode.as_str(),
                    c.eps,
                    c.seed,
                    c.k,
                    c.primal_calls,
                    c.dual_calls,
                    c.metric,
                    c.bound,
                    c.pass
                );
            }
            for g in &s.groups {
                println!("group {} eps={:e} seeds={} pass={}", g.mode.as_str(), g.eps, g.seeds, g.pass);
            }
            code
        }),
        1 => cmd_scaling(&cfg).map(|(r, code)| {
            for f in &r.fits {
                println!("{} primal_slope={:.4} dual_slope={:.4}", f.mode.as_str(), f.primal_slope, f.dual_slope);
            }
            code
        }),
        _ => cmd_audit(&cfg).map(|(r, code)| {
            println!("audit pass={}", r.pass);
            code
        }),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ipds: {e}");
            e.exit_code()
        }
    }
}
