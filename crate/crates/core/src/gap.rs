//! Primal/dual functions, duality gap and smoothed duality gap, plus the
//! canonical inexact sub-problem solves `x̃_γ(λ)` and `λ̃_{ρ,η}(x)`.
//!
//! Certified evaluations return intervals `[lo, hi]`; upper-bound checks use
//! `hi` and lower-bound checks use `lo`.

use crate::geometry::{DgfKind, FeasibleSet, ProxFn};
use crate::linalg::axpy;
use crate::problem::{Component, OracleCounter, SaddleProblem};
use crate::subsolver::{
    apg_solve_with, rand_solve_with, CompositeProblem, SmoothPart, SolveCertificate, SolverOptions, StrongConvexity,
    SubsolverError,
};
use crate::tol;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GapError {
    #[error("an exact inner solve was requested but no analytic form is available")]
    ExactSolveUnavailable,
    #[error("the supremum over an unbounded dual set needs an analytic inner solution")]
    RequiresAnalytic,
    #[error(transparent)]
    Subsolver(#[from] SubsolverError),
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
}

/// Closed-form inner solutions supplied by test instances.
pub trait AnalyticInner: Send + Sync {
    /// `x*(λ) = argmin_x Ŝᴾ(x,λ)`.
    fn primal_argmin(&self, lambda: &[f64]) -> Vec<f64>;
    /// `λ*_ρ(x) = argmax_λ Ŝᴰ_ρ(x,λ)`; `None` when the supremum is `+∞`.
    fn dual_argmax(&self, x: &[f64], rho: f64) -> Option<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        if self.lo == self.hi {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    pub fn mid(&self) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            0.5 * (self.lo + self.hi)
        }
    }

    fn minus(self, o: Interval) -> Interval {
        Interval { lo: self.lo - o.hi, hi: self.hi - o.lo }
    }
}

#[derive(Clone)]
pub enum EvalMode {
    AnalyticInner(Arc<dyn AnalyticInner>),
    Certified,
}

#[derive(Clone)]
pub struct GapEvaluator {
    pub mode: EvalMode,
    pub inner_tol: f64,
    /// Charge inner solves to the caller's counter.
    pub count_oracles: bool,
}

impl GapEvaluator {
    pub fn analytic(inner: Arc<dyn AnalyticInner>) -> Self {
        GapEvaluator { mode: EvalMode::AnalyticInner(inner), inner_tol: tol::INNER_TOL, count_oracles: false }
    }

    pub fn certified() -> Self {
        GapEvaluator { mode: EvalMode::Certified, inner_tol: tol::INNER_TOL, count_oracles: false }
    }

    pub fn analytic_inner(&self) -> Option<&dyn AnalyticInner> {
        match &self.mode {
            EvalMode::AnalyticInner(a) => Some(a.as_ref()),
            EvalMode::Certified => None,
        }
    }

    fn counter<'c>(&self, ctr: &'c OracleCounter, scratch: &'c OracleCounter) -> &'c OracleCounter {
        if self.count_oracles {
            ctr
        } else {
            scratch
        }
    }

    /// `ψᴰ(λ) = inf_x Ŝᴾ(x,λ) − h(λ)`.
    pub fn psi_dual(&self, p: &SaddleProblem, lambda: &[f64], ctr: &OracleCounter) -> Result<Interval, GapError> {
        let h = p.h.value(lambda);
        match &self.mode {
            EvalMode::AnalyticInner(a) => {
                let x = a.primal_argmin(lambda);
                Ok(Interval::point(p.s_hat_primal(&x, lambda) - h))
            }
            EvalMode::Certified => {
                let scratch = OracleCounter::new();
                let c = self.counter(ctr, &scratch);
                let start = p.primal_geom.anchor();
                let (x, _) = primal_solve(p, lambda, self.inner_tol, SubSolver::Deterministic, &start, c, &SolverOptions::default())?;
                let v = p.s_hat_primal(&x, lambda) - h;
                Ok(Interval { lo: v - self.inner_tol, hi: v })
            }
        }
    }

    /// `ψᴾ_ρ(x) = f(x) + g(x) + sup_λ Ŝᴰ_ρ(x,λ)`; `ρ = 0` gives `ψᴾ(x)`.
    pub fn psi_primal(&self, p: &SaddleProblem, x: &[f64], rho: f64, ctr: &OracleCounter) -> Result<Interval, GapError> {
        let base = p.f.value(x) + p.g.value(x);
        let sup = self.dual_sup(p, x, rho, ctr)?;
        Ok(Interval { lo: base + sup.lo, hi: base + sup.hi })
    }

    fn dual_sup(&self, p: &SaddleProblem, x: &[f64], rho: f64, ctr: &OracleCounter) -> Result<Interval, GapError> {
        let scratch = OracleCounter::new();
        let c = self.counter(ctr, &scratch);
        if let EvalMode::AnalyticInner(a) = &self.mode {
            return Ok(match a.dual_argmax(x, rho) {
                Some(l) => Interval::point(p.s_hat_dual(x, &l, rho)),
                None => Interval::point(f64::INFINITY),
            });
        }
        if let Some(coef) = orthant_linear_coefficient(p, x, c) {
            if rho == 0.0 {
                let inf = coef.iter().any(|v| *v > 0.0);
                return Ok(Interval::point(if inf { f64::INFINITY } else { 0.0 }));
            }
            let v: f64 = coef.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>() / (2.0 * rho);
            return Ok(Interval::point(v));
        }
        if rho > 0.0 {
            let start = p.dual_geom.anchor();
            let (l, _) = dual_solve(p, x, rho, self.inner_tol, SubSolver::Deterministic, &start, c, &SolverOptions::default())?;
            let v = p.s_hat_dual(x, &l, rho);
            return Ok(Interval { lo: v, hi: v + self.inner_tol });
        }
        let b = p.dual_geom.dgf_sup_abs().finite().ok_or(GapError::RequiresAnalytic)?;
        let t = 0.5 * self.inner_tol;
        let rho_s = if b > 0.0 { 0.25 * self.inner_tol / b } else { self.inner_tol };
        let start = p.dual_geom.anchor();
        let (l, _) = dual_solve(p, x, rho_s, t, SubSolver::Deterministic, &start, c, &SolverOptions::default())?;
        let v = p.s_hat_dual(x, &l, rho_s);
        Ok(Interval { lo: v - rho_s * b, hi: v + t + rho_s * b })
    }

    /// `Δ(x,λ) = ψᴾ(x) − ψᴰ(λ)`.
    pub fn duality_gap(&self, p: &SaddleProblem, x: &[f64], lambda: &[f64], ctr: &OracleCounter) -> Result<Interval, GapError> {
        Ok(self.psi_primal(p, x, 0.0, ctr)?.minus(self.psi_dual(p, lambda, ctr)?))
    }

    /// `Δ_ρ(x,λ) = ψᴾ_ρ(x) − ψᴰ(λ)`.
    pub fn smoothed_gap(
        &self,
        p: &SaddleProblem,
        x: &[f64],
        lambda: &[f64],
        rho: f64,
        ctr: &OracleCounter,
    ) -> Result<Interval, GapError> {
        Ok(self.psi_primal(p, x, rho, ctr)?.minus(self.psi_dual(p, lambda, ctr)?))
    }
}

/// For `Λ = ℝ₊ⁿ`, Euclidean DGF, `h ≡ 0` and a coupling linear in λ,
/// returns `∇_λΦ(x,·)`, which is then constant in λ.
fn orthant_linear_coefficient(p: &SaddleProblem, x: &[f64], ctr: &OracleCounter) -> Option<Vec<f64>> {
    if closed_form_dual(p) {
        let zero = vec![0.0; p.dim_lambda()];
        Some(p.grad_lambda_phi_unchecked(x, &zero, None, ctr))
    } else {
        None
    }
}

/// Whether the smoothed dual step has the positive-part closed form.
pub fn closed_form_dual(p: &SaddleProblem) -> bool {
    matches!(p.dual_geom.set(), FeasibleSet::NonnegativeOrthant)
        && p.dual_geom.dgf_kind() == DgfKind::HalfSquaredEuclidean
        && matches!(p.h, ProxFn::Zero | ProxFn::IndicatorOfSet)
        && p.coupling.components.iter().all(|c| match c {
            Component::Bilinear { b_diag, .. } => b_diag.as_ref().is_none_or(|b| b.iter().all(|v| *v == 0.0)),
            _ => true,
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubSolver {
    Deterministic,
    Randomized { seed: u64 },
}

/// `φ₁(x) = f(x) + Φ(x,λ)` with components `f + Φᵢ(·,λ)`.
pub struct PrimalSmooth<'a> {
    pub p: &'a SaddleProblem,
    pub lambda: &'a [f64],
}

impl SmoothPart for PrimalSmooth<'_> {
    fn dim(&self) -> usize {
        self.p.dim_x()
    }
    fn m(&self) -> usize {
        self.p.n()
    }
    fn value(&self, u: &[f64]) -> f64 {
        self.p.f.value(u) + self.p.coupling.value(u, self.lambda)
    }
    fn full_grad(&self, u: &[f64], ctr: &OracleCounter, keep: bool) -> (Vec<f64>, Option<Vec<Vec<f64>>>) {
        let gf = self.p.grad_f_unchecked(u, ctr);
        if keep {
            let comps: Vec<Vec<f64>> = (0..self.p.n())
                .map(|i| {
                    let mut g = self.p.grad_x_phi_unchecked(u, self.lambda, Some(&[i]), ctr);
                    axpy(1.0, &gf, &mut g);
                    g
                })
                .collect();
            let mut full = vec![0.0; u.len()];
            let w = 1.0 / comps.len() as f64;
            comps.iter().for_each(|g| axpy(w, g, &mut full));
            (full, Some(comps))
        } else {
            let mut g = self.p.grad_x_phi_unchecked(u, self.lambda, None, ctr);
            axpy(1.0, &gf, &mut g);
            (g, None)
        }
    }
    fn component_grad(&self, i: usize, u: &[f64], ctr: &OracleCounter) -> Vec<f64> {
        let mut g = self.p.grad_x_phi_unchecked(u, self.lambda, Some(&[i]), ctr);
        axpy(1.0, &self.p.grad_f_unchecked(u, ctr), &mut g);
        g
    }
    fn full_cost(&self) -> u64 {
        self.p.n() as u64 + 1
    }
    fn component_cost(&self) -> u64 {
        2
    }
}

/// `φ₁(λ) = −Φ(x,λ)` with components `−Φᵢ(x,·)`.
pub struct DualSmooth<'a> {
    pub p: &'a SaddleProblem,
    pub x: &'a [f64],
}

impl SmoothPart for DualSmooth<'_> {
    fn dim(&self) -> usize {
        self.p.dim_lambda()
    }
    fn m(&self) -> usize {
        self.p.n()
    }
    fn value(&self, u: &[f64]) -> f64 {
        -self.p.coupling.value(self.x, u)
    }
    fn full_grad(&self, u: &[f64], ctr: &OracleCounter, keep: bool) -> (Vec<f64>, Option<Vec<Vec<f64>>>) {
        if keep {
            let comps: Vec<Vec<f64>> = (0..self.p.n())
                .map(|i| crate::linalg::scale(&self.p.grad_lambda_phi_unchecked(self.x, u, Some(&[i]), ctr), -1.0))
                .collect();
            let mut full = vec![0.0; u.len()];
            let w = 1.0 / comps.len() as f64;
            comps.iter().for_each(|g| axpy(w, g, &mut full));
            (full, Some(comps))
        } else {
            (crate::linalg::scale(&self.p.grad_lambda_phi_unchecked(self.x, u, None, ctr), -1.0), None)
        }
    }
    fn component_grad(&self, i: usize, u: &[f64], ctr: &OracleCounter) -> Vec<f64> {
        crate::linalg::scale(&self.p.grad_lambda_phi_unchecked(self.x, u, Some(&[i]), ctr), -1.0)
    }
    fn full_cost(&self) -> u64 {
        self.p.n() as u64
    }
    fn component_cost(&self) -> u64 {
        1
    }
}

fn run(
    cp: &CompositeProblem,
    eps: f64,
    solver: SubSolver,
    start: &[f64],
    ctr: &OracleCounter,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    match solver {
        SubSolver::Deterministic => apg_solve_with(cp, eps, start, ctr, opts),
        SubSolver::Randomized { seed } => rand_solve_with(cp, eps, start, seed, ctr, opts),
    }
}

fn primal_solve(
    p: &SaddleProblem,
    lambda: &[f64],
    gamma: f64,
    solver: SubSolver,
    start: &[f64],
    ctr: &OracleCounter,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    let smooth = PrimalSmooth { p, lambda };
    let cp = CompositeProblem {
        geom: &p.primal_geom,
        smooth: &smooth,
        prox: &p.g,
        dgf_weight: 0.0,
        mu_prime: p.f.mu,
        l_prime: p.f.l + p.coupling.l_xx_at(lambda),
        convexity: StrongConvexity::Smooth,
    };
    run(&cp, gamma, solver, start, ctr, opts)
}

fn dual_solve(
    p: &SaddleProblem,
    x: &[f64],
    rho: f64,
    eta: f64,
    solver: SubSolver,
    start: &[f64],
    ctr: &OracleCounter,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveCertificate), SubsolverError> {
    let smooth = DualSmooth { p, x };
    let cp = CompositeProblem {
        geom: &p.dual_geom,
        smooth: &smooth,
        prox: &p.h,
        dgf_weight: rho,
        mu_prime: rho,
        l_prime: p.coupling.l_ll(),
        convexity: StrongConvexity::Prox,
    };
    run(&cp, eta, solver, start, ctr, opts)
}

/// Outcome of a sub-problem solve; the certificate is absent for exact or
/// closed-form solves.
#[derive(Clone, Debug, PartialEq)]
pub struct SubSolution {
    pub point: Vec<f64>,
    pub certificate: Option<SolveCertificate>,
    /// Smoothness constant the solver used.
    pub l_prime: f64,
}

/// `x̃_γ(λ)`: a point whose `Ŝᴾ(·,λ)`-gap is at most γ (in expectation for
/// the randomized solver). `γ = 0` requires `analytic`.
#[allow(clippy::too_many_arguments)]
pub fn solve_primal_sub(
    p: &SaddleProblem,
    lambda: &[f64],
    gamma: f64,
    solver: SubSolver,
    start: &[f64],
    ctr: &OracleCounter,
    opts: &SolverOptions,
    analytic: Option<&dyn AnalyticInner>,
) -> Result<SubSolution, GapError> {
    let l_prime = p.f.l + p.coupling.l_xx_at(lambda);
    if gamma == 0.0 {
        let a = analytic.ok_or(GapError::ExactSolveUnavailable)?;
        return Ok(SubSolution { point: a.primal_argmin(lambda), certificate: None, l_prime });
    }
    if gamma == f64::INFINITY {
        p.primal_geom.check_domain(start, tol::ORACLE_DOMAIN).map_err(crate::problem::ProblemError::from)?;
        return Ok(SubSolution { point: start.to_vec(), certificate: None, l_prime });
    }
    let (x, cert) = primal_solve(p, lambda, gamma, solver, start, ctr, opts)?;
    Ok(SubSolution { point: x, certificate: Some(cert), l_prime })
}

/// `λ̃_{ρ,η}(x)`: a point whose `Ŝᴰ_ρ(x,·)`-gap is at most η. Uses the
/// positive-part closed form (exact, η = 0) on the nonnegative orthant.
#[allow(clippy::too_many_arguments)]
pub fn solve_dual_sub(
    p: &SaddleProblem,
    x: &[f64],
    rho: f64,
    eta: f64,
    solver: SubSolver,
    start: &[f64],
    ctr: &OracleCounter,
    opts: &SolverOptions,
    analytic: Option<&dyn AnalyticInner>,
) -> Result<SubSolution, GapError> {
    let l_prime = p.coupling.l_ll();
    if let Some(coef) = orthant_linear_coefficient(p, x, ctr) {
        return Ok(SubSolution { point: positive_part_step(&coef, rho), certificate: None, l_prime });
    }
    if eta == 0.0 {
        let a = analytic.ok_or(GapError::ExactSolveUnavailable)?;
        let l = a.dual_argmax(x, rho).ok_or(GapError::RequiresAnalytic)?;
        return Ok(SubSolution { point: l, certificate: None, l_prime });
    }
    let (l, cert) = dual_solve(p, x, rho, eta, solver, start, ctr, opts)?;
    Ok(SubSolution { point: l, certificate: Some(cert), l_prime })
}

/// `([gᵢ]₊/ρ)ᵢ`.
pub fn positive_part_step(g: &[f64], rho: f64) -> Vec<f64> {
    g.iter().map(|v| if *v > 0.0 { v / rho } else { 0.0 }).collect()
}
