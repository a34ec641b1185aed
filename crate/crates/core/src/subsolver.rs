//! Certified inexact solvers for `min_U Ψ(u) = φ₁(u) + p(u) + s·ϖ(u)`.
//!
//! `apg_solve` is the accelerated method with fixed step `1/L′` run for the
//! a-priori budget of `apg_budget`; it evaluates `∇φ₁` twice per iteration
//! except on the last. `rand_solve` is proximal SVRG (epoch length m, step
//! `1/(3L′)`, snapshot component gradients stored) stopped at `rand_budget`
//! iterations times a power-of-two multiplier.

use crate::geometry::{DgfKind, Geometry, GeometryError, ProxFn};
use crate::linalg::{axpy, dot, sub};
use crate::problem::OracleCounter;
use crate::tol;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubsolverError {
    #[error("accuracy must be positive and finite, got {0}")]
    NonPositiveAccuracy(f64),
    #[error("iteration budget {needed} exceeds the cap {cap}")]
    BudgetOverflow { needed: f64, cap: u64 },
    #[error("the budget needs a bounded set")]
    UnboundedSet,
    #[error("invalid sub-problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Smooth finite-sum part `φ₁ = (1/m) Σ φᵢ` behind a counting oracle.
pub trait SmoothPart: Sync {
    fn dim(&self) -> usize;
    fn m(&self) -> usize;
    fn value(&self, u: &[f64]) -> f64;
    /// `∇φ₁(u)`, plus every `∇φᵢ(u)` when `keep` is set. Charges `full_cost`.
    fn full_grad(&self, u: &[f64], ctr: &OracleCounter, keep: bool) -> (Vec<f64>, Option<Vec<Vec<f64>>>);
    /// `∇φᵢ(u)`. Charges `component_cost`.
    fn component_grad(&self, i: usize, u: &[f64], ctr: &OracleCounter) -> Vec<f64>;
    fn full_cost(&self) -> u64;
    fn component_cost(&self) -> u64;
}

/// Where the strong convexity `μ′` lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrongConvexity {
    /// `φ₁` is μ′-strongly convex relative to ϖ; μ′ϖ is moved into the prox.
    Smooth,
    /// The prox part carries `s·ϖ` with `s = μ′`.
    Prox,
}

pub struct CompositeProblem<'a> {
    pub geom: &'a Geometry,
    pub smooth: &'a dyn SmoothPart,
    pub prox: &'a ProxFn,
    /// Explicit DGF weight `s` inside the objective.
    pub dgf_weight: f64,
    pub mu_prime: f64,
    pub l_prime: f64,
    pub convexity: StrongConvexity,
}

impl CompositeProblem<'_> {
    /// Ψ(u), evaluated without oracle charges.
    pub fn objective(&self, u: &[f64]) -> f64 {
        let w = if self.dgf_weight == 0.0 { 0.0 } else { self.dgf_weight * self.geom.dgf_value_unchecked(u) };
        self.smooth.value(u) + self.prox.value(u) + w
    }

    pub fn kappa_prime(&self) -> f64 {
        self.l_prime / self.mu_prime
    }

    fn validate(&self) -> Result<(), SubsolverError> {
        if !(self.mu_prime > 0.0 && self.mu_prime.is_finite()) {
            return Err(SubsolverError::Invalid("mu' must be positive".into()));
        }
        if !(self.l_prime >= 0.0 && self.l_prime.is_finite()) {
            return Err(SubsolverError::Invalid("L' must be finite and nonnegative".into()));
        }
        if self.convexity == StrongConvexity::Smooth && self.geom.dgf_kind() != DgfKind::HalfSquaredEuclidean {
            return Err(SubsolverError::Invalid("strong convexity in the smooth part needs the Euclidean DGF".into()));
        }
        if self.smooth.dim() != self.geom.dim() {
            return Err(SubsolverError::Invalid("smooth part and geometry dimensions differ".into()));
        }
        Ok(())
    }

    /// Weight σ of ϖ in the prox after folding.
    fn sigma(&self) -> f64 {
        match self.convexity {
            StrongConvexity::Smooth => self.dgf_weight + self.mu_prime,
            StrongConvexity::Prox => self.dgf_weight,
        }
    }

    fn fold(&self) -> f64 {
        match self.convexity {
            StrongConvexity::Smooth => self.mu_prime,
            StrongConvexity::Prox => 0.0,
        }
    }

    /// Squared size term used by the deterministic budget: `D²` for the
    /// Euclidean DGF, `max(D², 2 R(u0))` otherwise.
    pub fn budget_diameter_sq(&self, start: &[f64]) -> Result<f64, SubsolverError> {
        let d = self.geom.diameter().finite().ok_or(SubsolverError::UnboundedSet)?;
        Ok(match self.geom.dgf_kind() {
            DgfKind::HalfSquaredEuclidean => d * d,
            DgfKind::NegativeEntropy => {
                let r = self.geom.sup_bregman_from(start).finite().ok_or(SubsolverError::UnboundedSet)?;
                (d * d).max(2.0 * r)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetFormula {
    /// `⌈√(κ′/2)·log(L′D²/(4ε))⌉ + 1`.
    Accelerated,
    /// `⌈2(m+√(8mκ′))·log(2(L′/√μ′+√μ′)²(m+√(8mκ′))R/ε)⌉`.
    VarianceReduced,
    /// `L′ = 0`: one exact step from a single full gradient.
    ExactLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    Deterministic,
    InExpectation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveCertificate {
    pub iterations: u64,
    pub target_accuracy: f64,
    pub budget_formula: BudgetFormula,
    pub oracle_calls_charged: u64,
    pub mode: SolveMode,
    /// Power-of-two factor applied to the formula budget.
    pub multiplier: u32,
}

/// Ceiling that ignores relative rounding noise of order 1e-12.
fn robust_ceil(x: f64) -> f64 {
    (x - 1e-12 * x.abs().max(1.0)).ceil()
}

fn check_eps(eps: f64) -> Result<(), SubsolverError> {
    if eps > 0.0 && !eps.is_nan() {
        Ok(())
    } else {
        Err(SubsolverError::NonPositiveAccuracy(eps))
    }
}

fn to_budget(n: f64, cap: u64) -> Result<u64, SubsolverError> {
    if !n.is_finite() || n > cap as f64 {
        return Err(SubsolverError::BudgetOverflow { needed: n, cap });
    }
    Ok(n.max(1.0) as u64)
}

/// Accelerated budget `max(1, ⌈√(κ′/2)·log(L′D²/(4ε))⌉ + 1)` with the log
/// argument clamped below at 1.
pub fn apg_budget(kappa_prime: f64, l_prime: f64, d_u: f64, eps: f64) -> Result<u64, SubsolverError> {
    check_eps(eps)?;
    apg_budget_sq(kappa_prime, l_prime, d_u * d_u, eps, tol::BUDGET_CAP)
}

fn apg_budget_sq(kappa_prime: f64, l_prime: f64, d_sq: f64, eps: f64, cap: u64) -> Result<u64, SubsolverError> {
    check_eps(eps)?;
    let arg = (l_prime * d_sq / (4.0 * eps)).max(1.0);
    let n = robust_ceil((kappa_prime.max(0.0) / 2.0).sqrt() * arg.ln()) + 1.0;
    to_budget(n, cap)
}

/// Variance-reduced budget with the log argument clamped below at e.
pub fn rand_budget(
    m: usize,
    kappa_prime: f64,
    l_prime: f64,
    mu_prime: f64,
    r_start: f64,
    eps: f64,
) -> Result<u64, SubsolverError> {
    rand_budget_capped(m, kappa_prime, l_prime, mu_prime, r_start, eps, tol::BUDGET_CAP)
}

fn rand_budget_capped(
    m: usize,
    kappa_prime: f64,
    l_prime: f64,
    mu_prime: f64,
    r_start: f64,
    eps: f64,
    cap: u64,
) -> Result<u64, SubsolverError> {
    check_eps(eps)?;
    if m == 0 || !(mu_prime > 0.0) || !r_start.is_finite() {
        return Err(SubsolverError::Invalid("randomized budget needs m >= 1, mu' > 0 and finite R".into()));
    }
    let m = m as f64;
    let inner = m + (8.0 * m * kappa_prime.max(0.0)).sqrt();
    let c = l_prime / mu_prime.sqrt() + mu_prime.sqrt();
    let arg = (2.0 * c * c * inner * r_start / eps).max(std::f64::consts::E);
    to_budget(robust_ceil(2.0 * inner * arg.ln()), cap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub cap: u64,
    /// Initial power-of-two multiplier on the randomized budget.
    pub rand_multiplier: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { cap: tol::BUDGET_CAP, rand_multiplier: 1 }
    }
}

fn exact_linear_step(
    cp: &CompositeProblem,
    start: &[f64],
    ctr: &OracleCounter,
) -> Result<Vec<f64>, SubsolverError> {
    let (g, _) = cp.smooth.full_grad(start, ctr, false);
    Ok(cp.geom.prox_step(cp.prox, &g, cp.dgf_weight)?)
}

/// Runs the accelerated method for exactly `apg_budget` iterations.
pub fn apg_solve(
    cp: &CompositeProblem,
    eps: f64,
    start: &[f64],
    ctr: &OracleCounter,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    apg_solve_with(cp, eps, start, ctr, &SolverOptions::default())
}

pub fn apg_solve_with(
    cp: &CompositeProblem,
    eps: f64,
    start: &[f64],
    ctr: &OracleCounter,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    check_eps(eps)?;
    cp.validate()?;
    cp.geom.check_domain(start, tol::ORACLE_DOMAIN)?;
    let before = ctr.total();
    let cert = |iterations, formula, ctr: &OracleCounter| SolveCertificate {
        iterations,
        target_accuracy: eps,
        budget_formula: formula,
        oracle_calls_charged: ctr.total() - before,
        mode: SolveMode::Deterministic,
        multiplier: 1,
    };
    if cp.l_prime == 0.0 && cp.convexity == StrongConvexity::Prox {
        let u = exact_linear_step(cp, start, ctr)?;
        return Ok((u, cert(1, BudgetFormula::ExactLinear, ctr)));
    }
    let d_sq = cp.budget_diameter_sq(start)?;
    let n = apg_budget_sq(cp.kappa_prime(), cp.l_prime, d_sq, eps, opts.cap)?;
    let l = cp.l_prime;
    let sigma = cp.sigma();
    let fold = cp.fold();
    let geom = cp.geom;
    let grad = |u: &[f64]| {
        let (mut g, _) = cp.smooth.full_grad(u, ctr, false);
        if fold != 0.0 {
            axpy(-fold, &geom.dgf_grad(u), &mut g);
        }
        g
    };
    let grad_w0 = geom.dgf_grad(start);
    let mut x = start.to_vec();
    let mut v = start.to_vec();
    let mut a_sum = 0.0;
    let mut s_lin = vec![0.0; start.len()];
    for k in 0..n {
        let c = 2.0 * (1.0 + sigma * a_sum) / l;
        let a = 0.5 * (c + (c * c + 4.0 * c * a_sum).sqrt());
        let y: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| (a_sum * xi + a * vi) / (a_sum + a)).collect();
        let gy = grad(&y);
        let mut lin = gy;
        axpy(-l, &geom.dgf_grad(&y), &mut lin);
        x = geom.prox_step(cp.prox, &lin, l + sigma)?;
        a_sum += a;
        if k + 1 < n {
            let gx = grad(&x);
            axpy(a, &gx, &mut s_lin);
            let lin_v: Vec<f64> = s_lin.iter().zip(&grad_w0).map(|(s, w)| (s - w) / a_sum).collect();
            v = geom.prox_step(cp.prox, &lin_v, (1.0 + a_sum * sigma) / a_sum)?;
        }
    }
    Ok((x, cert(n, BudgetFormula::Accelerated, ctr)))
}

/// Runs proximal SVRG for `rand_budget × multiplier` iterations.
pub fn rand_solve(
    cp: &CompositeProblem,
    eps: f64,
    start: &[f64],
    rng_seed: u64,
    ctr: &OracleCounter,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    rand_solve_with(cp, eps, start, rng_seed, ctr, &SolverOptions::default())
}

pub fn rand_solve_with(
    cp: &CompositeProblem,
    eps: f64,
    start: &[f64],
    rng_seed: u64,
    ctr: &OracleCounter,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    check_eps(eps)?;
    cp.validate()?;
    cp.geom.check_domain(start, tol::ORACLE_DOMAIN)?;
    let before = ctr.total();
    let mult = opts.rand_multiplier.max(1);
    let cert = |iterations, formula, ctr: &OracleCounter| SolveCertificate {
        iterations,
        target_accuracy: eps,
        budget_formula: formula,
        oracle_calls_charged: ctr.total() - before,
        mode: SolveMode::InExpectation,
        multiplier: mult,
    };
    if cp.l_prime == 0.0 && cp.convexity == StrongConvexity::Prox {
        let u = exact_linear_step(cp, start, ctr)?;
        return Ok((u, cert(1, BudgetFormula::ExactLinear, ctr)));
    }
    let m = cp.smooth.m();
    let r = cp.geom.sup_bregman_from(start).finite().ok_or(SubsolverError::UnboundedSet)?;
    let base = rand_budget_capped(m, cp.kappa_prime(), cp.l_prime, cp.mu_prime, r, eps, opts.cap)?;
    let n = base.checked_mul(mult as u64).filter(|n| *n <= opts.cap).ok_or(SubsolverError::BudgetOverflow {
        needed: base as f64 * mult as f64,
        cap: opts.cap,
    })?;
    let u = svrg(cp, start, n, rng_seed, ctr)?;
    Ok((u, cert(n, BudgetFormula::VarianceReduced, ctr)))
}

fn svrg(
    cp: &CompositeProblem,
    start: &[f64],
    n: u64,
    seed: u64,
    ctr: &OracleCounter,
) -> Result<Vec<f64>, SubsolverError> {
    let geom = cp.geom;
    let m = cp.smooth.m();
    let inv_eta = 3.0 * cp.l_prime;
    let sigma = cp.sigma();
    let fold = cp.fold();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = start.to_vec();
    let mut done = 0u64;
    while done < n {
        let (full, comps) = cp.smooth.full_grad(&u, ctr, true);
        let comps = comps.expect("snapshot keeps component gradients");
        let steps = (m as u64).min(n - done);
        for _ in 0..steps {
            let i = rng.gen_range(0..m);
            let gi = cp.smooth.component_grad(i, &u, ctr);
            let mut lin = sub(&gi, &comps[i]);
            axpy(1.0, &full, &mut lin);
            let wu = geom.dgf_grad(&u);
            if fold != 0.0 {
                axpy(-fold, &wu, &mut lin);
            }
            axpy(-inv_eta, &wu, &mut lin);
            u = geom.prox_step(cp.prox, &lin, inv_eta + sigma)?;
        }
        done += steps;
    }
    Ok(u)
}

/// Smallest power-of-two multiplier whose pilot Monte-Carlo mean gap is
/// within `eps`, doubling up to `max_doublings` times.
pub fn calibrate_rand_multiplier(
    cp: &CompositeProblem,
    eps: f64,
    start: &[f64],
    optimum: f64,
    pilot_seeds: std::ops::Range<u64>,
    max_doublings: u32,
) -> Result<u32, SubsolverError> {
    let mut mult = 1u32;
    for _ in 0..=max_doublings {
        let opts = SolverOptions { rand_multiplier: mult, ..SolverOptions::default() };
        let mut total = 0.0;
        let count = pilot_seeds.end - pilot_seeds.start;
        for seed in pilot_seeds.clone() {
            let (u, _) = rand_solve_with(cp, eps, start, seed, &OracleCounter::new(), &opts)?;
            total += cp.objective(&u) - optimum;
        }
        if total / count as f64 <= eps {
            return Ok(mult);
        }
        mult *= 2;
    }
    Ok(mult)
}

/// Plain quadratic smooth part `½uᵀHu + bᵀu` split into `m` equal copies;
/// used for self-contained solver checks.
pub struct QuadraticSmooth {
    pub h: crate::linalg::Mat,
    pub b: Vec<f64>,
    /// Per-component shifts `cᵢ` with `Σ cᵢ = 0`, so `φᵢ = ½uᵀHu + (b+cᵢ)ᵀu`.
    pub shifts: Vec<Vec<f64>>,
}

impl SmoothPart for QuadraticSmooth {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn m(&self) -> usize {
        self.shifts.len().max(1)
    }
    fn value(&self, u: &[f64]) -> f64 {
        0.5 * self.h.quad(u) + dot(&self.b, u)
    }
    fn full_grad(&self, u: &[f64], ctr: &OracleCounter, keep: bool) -> (Vec<f64>, Option<Vec<Vec<f64>>>) {
        ctr.add_primal(self.full_cost());
        let mut g = self.h.matvec(u);
        axpy(1.0, &self.b, &mut g);
        let comps = keep.then(|| {
            if self.shifts.is_empty() {
                vec![g.clone()]
            } else {
                self.shifts.iter().map(|c| crate::linalg::add(&g, c)).collect()
            }
        });
        (g, comps)
    }
    fn component_grad(&self, i: usize, u: &[f64], ctr: &OracleCounter) -> Vec<f64> {
        ctr.add_primal(self.component_cost());
        let mut g = self.h.matvec(u);
        axpy(1.0, &self.b, &mut g);
        if let Some(c) = self.shifts.get(i) {
            axpy(1.0, c, &mut g);
        }
        g
    }
    fn full_cost(&self) -> u64 {
        self.m() as u64
    }
    fn component_cost(&self) -> u64 {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    #[test]
    fn apg_budget_examples() {
        let e = std::f64::consts::E;
        assert_eq!(apg_budget(2.0, 4.0, 1.0, 1.0 / e).unwrap(), 2);
        assert_eq!(apg_budget(50.0, 100.0, 1.0, 1e-6).unwrap(), 87);
        assert_eq!(apg_budget(10.0, 1.0, 1.0, 10.0).unwrap(), 1);
        assert!(matches!(apg_budget(2.0, 4.0, 1.0, 0.0), Err(SubsolverError::NonPositiveAccuracy(_))));
    }

    #[test]
    fn rand_budget_examples() {
        let c = 2.0 * 4.0 * (1.0 + 8f64.sqrt());
        let eps = c * 1.0 / std::f64::consts::E;
        assert_eq!(rand_budget(1, 1.0, 1.0, 1.0, 1.0, eps).unwrap(), 8);
        assert_eq!(rand_budget(4, 2.0, 2.0, 1.0, 1.0, 1e30).unwrap(), 24);
    }

    #[test]
    fn apg_box_quadratic_reaches_origin() {
        let geom = Geometry::box_uniform(2, -1.0, 1.0).unwrap();
        let smooth = QuadraticSmooth { h: Mat::identity(2), b: vec![0.0; 2], shifts: vec![] };
        let prox = ProxFn::Zero;
        let cp = CompositeProblem {
            geom: &geom,
            smooth: &smooth,
            prox: &prox,
            dgf_weight: 0.0,
            mu_prime: 1.0,
            l_prime: 1.0,
            convexity: StrongConvexity::Smooth,
        };
        let ctr = OracleCounter::new();
        let (u, cert) = apg_solve(&cp, 1e-8, &[1.0, 1.0], &ctr).unwrap();
        assert!(crate::linalg::norm2(&u) < 1e-4);
        assert_eq!(cert.oracle_calls_charged, ctr.total());
        assert_eq!(cert.oracle_calls_charged, 2 * cert.iterations - 1);
        let (_, cert) = apg_solve(&cp, 1e9, &[1.0, 1.0], &ctr).unwrap();
        assert_eq!(cert.iterations, 1);
    }
}
