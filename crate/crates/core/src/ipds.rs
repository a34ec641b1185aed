//! Outer loops of inexact primal-dual smoothing: the deterministic and
//! randomized frameworks, their schedule, iteration counts and run traces.
//!
//! One iteration from `(xᵏ, λᵏ, ρ_k)`:
//! 1. `λ̃ = λ̃_{ρ_k,η_k}(xᵏ)`
//! 2. `λ̂ᵏ = τ_kλᵏ + (1−τ_k)λ̃`
//! 3. `x̃ = x̃_{γ_k}(λ̂ᵏ)`
//! 4. `xᵏ⁺¹ = τ_kxᵏ + (1−τ_k)x̃`
//! 5. `ρ_{k+1} = τ_kρ_k`
//! 6. `λ̃′ = λ̃_{ρ_{k+1},η_k}(xᵏ⁺¹)`
//! 7. `λᵏ⁺¹ = τ_kλᵏ + (1−τ_k)λ̃′`
//!
//! The output is the last iterate.

use crate::gap::{self, AnalyticInner, GapError, GapEvaluator, Interval, SubSolver};
use crate::linalg::lerp;
use crate::problem::{OracleCounter, SaddleProblem};
use crate::subsolver::{SolveCertificate, SolverOptions};
use crate::tol;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpdsError {
    #[error("sub-problem solve failed: {0}")]
    SubsolverFailure(#[from] GapError),
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("the dual set is unbounded, so B_omega is infinite")]
    UnboundedDualSet,
    #[error("invalid run configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub rho0: f64,
    pub eps_target: f64,
    /// Forces `η_k = 0` (closed-form dual step).
    pub eta_override_zero: bool,
    /// Forces `γ_k = η_k = 0`; needs analytic inner solutions.
    pub exact_inner: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub tau: f64,
    pub gamma: f64,
    pub eta: f64,
    pub rho: f64,
}

impl Schedule {
    /// Default schedule with `ρ₀ = 8L_D`.
    pub fn new(l_d: f64, eps: f64) -> Self {
        Schedule { rho0: 8.0 * l_d, eps_target: eps, eta_override_zero: false, exact_inner: false }
    }

    pub fn validate(&self) -> Result<(), IpdsError> {
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return Err(IpdsError::Invalid(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if !(self.eps_target.is_finite() && self.eps_target > 0.0) {
            return Err(IpdsError::Invalid(format!("eps must be positive, got {}", self.eps_target)));
        }
        Ok(())
    }

    /// `ρ_k = 2ρ₀/((k+1)(k+2))`.
    pub fn rho_at(&self, k: u64) -> f64 {
        let k = k as f64;
        2.0 * self.rho0 / ((k + 1.0) * (k + 2.0))
    }
}

/// `(τ_k, γ_k, η_k, ρ_k)` in closed form.
pub fn schedule_at(s: &Schedule, k: u64) -> StepParams {
    let kf = k as f64;
    let acc = s.eps_target / (4.0 * (kf + 3.0));
    StepParams {
        tau: (kf + 1.0) / (kf + 3.0),
        gamma: if s.exact_inner { 0.0 } else { acc },
        eta: if s.exact_inner || s.eta_override_zero { 0.0 } else { acc },
        rho: s.rho_at(k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpConfig {
    pub delta: f64,
    pub k_fixed: u64,
}

impl HpConfig {
    /// Factor `δ/(3K)` applied to every sub-problem accuracy.
    pub fn accuracy_factor(&self) -> f64 {
        self.delta / (3.0 * self.k_fixed as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapTarget {
    /// `Δ(x^K, λ^K) ≤ ε`; needs a bounded dual set.
    Duality,
    /// `Δ_{ρ_K}(x^K, λ^K) ≤ ε`.
    Smoothed,
}

/// `K_det = ⌈2√(16L_D·B_{ω,Λ} + Δ₀)/√ε⌉ + 1`.
pub fn k_det(l_d: f64, b_omega: f64, eps: f64, initial_gap_upper: f64) -> u64 {
    let v = 2.0 * (16.0 * l_d * b_omega + initial_gap_upper.max(0.0)).sqrt() / eps.sqrt();
    ceil_robust(v) as u64 + 1
}

/// `K′_det = 2⌈√(max(Δ_{ρ₀}, 0)/ε)⌉ + 1`.
pub fn k_prime_det(eps: f64, initial_sgap_upper: f64) -> u64 {
    2 * ceil_robust((initial_sgap_upper.max(0.0) / eps).sqrt()) as u64 + 1
}

fn ceil_robust(x: f64) -> f64 {
    (x - 1e-12 * x.abs().max(1.0)).ceil().max(0.0)
}

/// Iteration count for the chosen target, using the caller's upper bound on
/// the initial (smoothed) gap.
pub fn k_for_target(p: &SaddleProblem, eps: f64, target: GapTarget, initial_gap_upper: f64) -> Result<u64, IpdsError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(IpdsError::Invalid("eps must be positive".into()));
    }
    match target {
        GapTarget::Duality => {
            let b = p.dual_geom.dgf_sup_abs().finite().ok_or(IpdsError::UnboundedDualSet)?;
            Ok(k_det(p.l_d(), b, eps, initial_gap_upper))
        }
        GapTarget::Smoothed => Ok(k_prime_det(eps, initial_gap_upper)),
    }
}

/// `B′_Δ = 2[Δ_{ρ₀}]₊/((K+1)(K+2)) + ε/2`.
pub fn smoothed_gap_bound(k: u64, eps: f64, initial_sgap_upper: f64) -> f64 {
    let kf = k as f64;
    2.0 * initial_sgap_upper.max(0.0) / ((kf + 1.0) * (kf + 2.0)) + eps / 2.0
}

/// `B_Δ = (32L_D·B_{ω,Λ} + 2Δ₀)/((K+1)(K+2)) + ε/2`.
pub fn duality_gap_bound(k: u64, eps: f64, l_d: f64, b_omega: f64, initial_gap_upper: f64) -> f64 {
    let kf = k as f64;
    (32.0 * l_d * b_omega + 2.0 * initial_gap_upper) / ((kf + 1.0) * (kf + 2.0)) + eps / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Det,
    Rand,
    RandHp,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Det => "det",
            RunMode::Rand => "rand",
            RunMode::RandHp => "rand_hp",
        }
    }
}

#[derive(Clone)]
pub struct RunOptions {
    pub k: u64,
    /// Stop early once the measured duality gap upper bound is at most this.
    pub stop_gap: Option<f64>,
    /// Evaluates gaps at every iterate when set.
    pub evaluator: Option<GapEvaluator>,
    pub solver: SolverOptions,
    /// Needed when the schedule asks for exact inner solves.
    pub analytic: Option<Arc<dyn AnalyticInner>>,
    /// Wall-clock times are excluded from the CSV body and hash regardless.
    pub record_wall_ms: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { k: 1, stop_gap: None, evaluator: None, solver: SolverOptions::default(), analytic: None, record_wall_ms: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: u64,
    pub rho_k: f64,
    /// Schedule values used by the step from iterate k to k+1.
    pub tau_k: f64,
    pub gamma_k: f64,
    pub eta_k: f64,
    pub x_k: Vec<f64>,
    pub lambda_k: Vec<f64>,
    /// `λ̂` of the step that produced this iterate; empty at k = 0.
    pub lambda_hat: Vec<f64>,
    /// Primal sub-problem smoothness of that step; absent at k = 0.
    pub primal_l_prime: Option<f64>,
    pub gap: Option<Interval>,
    pub sgap: Option<Interval>,
    /// Cumulative algorithm oracle calls.
    pub primal_calls: u64,
    pub dual_calls: u64,
    pub certificates: Vec<Option<SolveCertificate>>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: Option<u64>,
    pub mode: RunMode,
    pub problem_hash: String,
    pub schedule: Schedule,
    pub hp: Option<HpConfig>,
    pub k_requested: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<IterRecord>,
}

const CSV_COLUMNS: &str =
    "k,rho_k,tau_k,gamma_k,eta_k,gap_lo,gap_hi,sgap_lo,sgap_hi,primal_calls,dual_calls,primal_l_prime,x_k,lambda_k";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

fn opt_bound(i: &Option<Interval>, hi: bool) -> String {
    match i {
        Some(v) => format!("{:e}", if hi { v.hi } else { v.lo }),
        None => String::new(),
    }
}

impl RunTrace {
    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("traces hold the initial record")
    }

    pub fn final_x(&self) -> &[f64] {
        &self.last().x_k
    }

    pub fn final_lambda(&self) -> &[f64] {
        &self.last().lambda_k
    }

    pub fn iterations(&self) -> u64 {
        self.last().k
    }

    /// CSV rows without metadata; deterministic for a fixed configuration.
    pub fn csv_body(&self) -> String {
        let mut s = String::from(CSV_COLUMNS);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.rho_k,
                r.tau_k,
                r.gamma_k,
                r.eta_k,
                opt_bound(&r.gap, false),
                opt_bound(&r.gap, true),
                opt_bound(&r.sgap, false),
                opt_bound(&r.sgap, true),
                r.primal_calls,
                r.dual_calls,
                r.primal_l_prime.map_or(String::new(), |v| format!("{v:e}")),
                join(&r.x_k),
                join(&r.lambda_k)
            );
        }
        s
    }

    /// Full CSV with run metadata as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let _ = writeln!(s, "# mode={}", h.mode.as_str());
        let _ = writeln!(s, "# seed={}", h.seed.map_or("none".to_string(), |v| v.to_string()));
        let _ = writeln!(s, "# problem_hash={}", h.problem_hash);
        let _ = writeln!(s, "# rho0={:e} eps={:e}", h.schedule.rho0, h.schedule.eps_target);
        let _ = writeln!(s, "# wall_ms_total={:.3}", self.records.iter().map(|r| r.wall_ms).sum::<f64>());
        s.push_str(&self.csv_body());
        s
    }

    /// SHA-256 of the CSV body.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.csv_body().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces serialize")
    }
}

/// SHA-256 of the problem's JSON form.
pub fn problem_hash(p: &SaddleProblem) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(p).expect("problems serialize")))
}

/// Seed of the sub-solve at outer iteration `k` and stage `0..3`.
pub fn stream_seed(seed: u64, k: u64, stage: u8) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(k.to_le_bytes());
    h.update([stage]);
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn run_deterministic(
    p: &SaddleProblem,
    s: &Schedule,
    start: (&[f64], &[f64]),
    opts: &RunOptions,
    ctr: &OracleCounter,
) -> Result<RunTrace, IpdsError> {
    run(p, s, start, opts, RunMode::Det, None, None, ctr)
}

/// Randomized loop; with `hp` every accuracy is scaled by `δ/(3K)` and the
/// iteration count is `hp.k_fixed`.
pub fn run_randomized(
    p: &SaddleProblem,
    s: &Schedule,
    start: (&[f64], &[f64]),
    opts: &RunOptions,
    seed: u64,
    hp: Option<HpConfig>,
    ctr: &OracleCounter,
) -> Result<RunTrace, IpdsError> {
    let mode = if hp.is_some() { RunMode::RandHp } else { RunMode::Rand };
    run(p, s, start, opts, mode, Some(seed), hp, ctr)
}

#[allow(clippy::too_many_arguments)]
fn run(
    p: &SaddleProblem,
    s: &Schedule,
    (x0, l0): (&[f64], &[f64]),
    opts: &RunOptions,
    mode: RunMode,
    seed: Option<u64>,
    hp: Option<HpConfig>,
    ctr: &OracleCounter,
) -> Result<RunTrace, IpdsError> {
    s.validate()?;
    if x0.len() != p.dim_x() || !p.primal_geom.contains(x0, tol::ORACLE_DOMAIN) {
        return Err(IpdsError::InfeasibleStart("x0 is outside the primal set".into()));
    }
    if l0.len() != p.dim_lambda() || !p.dual_geom.contains(l0, tol::ORACLE_DOMAIN) {
        return Err(IpdsError::InfeasibleStart("lambda0 is outside the dual set".into()));
    }
    if let Some(h) = &hp {
        if !(h.delta > 0.0 && h.delta < 1.0) || h.k_fixed == 0 {
            return Err(IpdsError::Invalid("hp mode needs delta in (0,1) and k_fixed >= 1".into()));
        }
    }
    if s.exact_inner && opts.analytic.is_none() {
        return Err(IpdsError::SubsolverFailure(GapError::ExactSolveUnavailable));
    }
    let k_total = hp.map_or(opts.k, |h| h.k_fixed);
    let factor = hp.map_or(1.0, |h| h.accuracy_factor());
    let analytic = opts.analytic.as_deref();
    let eval = |x: &[f64], l: &[f64], rho: f64| -> Result<(Option<Interval>, Option<Interval>), IpdsError> {
        match &opts.evaluator {
            None => Ok((None, None)),
            Some(ev) => {
                let sg = ev.smoothed_gap(p, x, l, rho, ctr)?;
                let g = if p.dual_geom.set().bounded() || ev.analytic_inner().is_some() {
                    Some(ev.duality_gap(p, x, l, ctr)?)
                } else {
                    None
                };
                Ok((g, Some(sg)))
            }
        }
    };
    let solver_for = |k: u64, stage: u8| match seed {
        Some(sd) if mode != RunMode::Det => SubSolver::Randomized { seed: stream_seed(sd, k, stage) },
        _ => SubSolver::Deterministic,
    };
    let randomized = mode != RunMode::Det;
    let x_anchor = p.primal_geom.anchor();
    let l_anchor = p.dual_geom.anchor();

    let mut x = x0.to_vec();
    let mut lam = l0.to_vec();
    let mut warm_dual = l0.to_vec();
    let mut records = Vec::with_capacity(k_total as usize + 1);
    let t0 = Instant::now();
    let sp0 = schedule_at(s, 0);
    let (g0, sg0) = eval(&x, &lam, sp0.rho)?;
    records.push(IterRecord {
        k: 0,
        rho_k: sp0.rho,
        tau_k: sp0.tau,
        gamma_k: sp0.gamma * factor,
        eta_k: sp0.eta * factor,
        x_k: x.clone(),
        lambda_k: lam.clone(),
        lambda_hat: Vec::new(),
        primal_l_prime: None,
        gap: g0,
        sgap: sg0,
        primal_calls: ctr.primal(),
        dual_calls: ctr.dual(),
        certificates: Vec::new(),
        wall_ms: if opts.record_wall_ms { t0.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
    });
    for k in 0..k_total {
        if let (Some(thr), Some(g)) = (opts.stop_gap, records.last().and_then(|r| r.gap)) {
            if g.hi <= thr {
                break;
            }
        }
        let t = Instant::now();
        let sp = schedule_at(s, k);
        let rho_next = s.rho_at(k + 1);
        let (gamma, eta) = (sp.gamma * factor, sp.eta * factor);
        let dual_start = if randomized { &l_anchor } else { &warm_dual };
        let d1 = gap::solve_dual_sub(p, &x, sp.rho, eta, solver_for(k, 0), dual_start, ctr, &opts.solver, analytic)?;
        let lam_hat = lerp(sp.tau, &lam, &d1.point);
        let primal_start = if randomized { &x_anchor } else { &x };
        let ps = gap::solve_primal_sub(p, &lam_hat, gamma, solver_for(k, 1), primal_start, ctr, &opts.solver, analytic)?;
        let x_next = lerp(sp.tau, &x, &ps.point);
        let dual_start = if randomized { &l_anchor } else { &d1.point };
        let d2 = gap::solve_dual_sub(p, &x_next, rho_next, eta, solver_for(k, 2), dual_start, ctr, &opts.solver, analytic)?;
        let lam_next = lerp(sp.tau, &lam, &d2.point);
        warm_dual = d2.point;
        x = x_next;
        lam = lam_next;
        let spn = schedule_at(s, k + 1);
        let (g, sg) = eval(&x, &lam, rho_next)?;
        records.push(IterRecord {
            k: k + 1,
            rho_k: rho_next,
            tau_k: spn.tau,
            gamma_k: spn.gamma * factor,
            eta_k: spn.eta * factor,
            x_k: x.clone(),
            lambda_k: lam.clone(),
            lambda_hat: lam_hat,
            primal_l_prime: Some(ps.l_prime),
            gap: g,
            sgap: sg,
            primal_calls: ctr.primal(),
            dual_calls: ctr.dual(),
            certificates: vec![d1.certificate, ps.certificate, d2.certificate],
            wall_ms: if opts.record_wall_ms { t.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        });
    }
    Ok(RunTrace {
        header: TraceHeader { seed, mode, problem_hash: problem_hash(p), schedule: s.clone(), hp, k_requested: k_total },
        records,
    })
}
