//! Saddle problem data `S(x,λ) = f(x) + g(x) + Φ(x,λ) − h(λ)` with finite-sum
//! coupling `Φ = (1/n) Σ Φᵢ`, and gradient-oracle accounting.
//!
//! Value queries are free; every `∇f` counts one primal call, every `∇ₓΦᵢ`
//! one primal call and every `∇_λΦᵢ` one dual call.

use crate::geometry::{Geometry, GeometryError, ProxFn};
use crate::linalg::{axpy, dot, Mat};
use crate::tol;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("component index {0} out of range (n = {1})")]
    IndexOutOfRange(usize, usize),
    #[error("empty index set")]
    EmptyIndices,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("declared constant violated: {0}")]
    ConstantViolation(String),
    #[error("malformed problem JSON at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
}

impl ProblemError {
    pub fn out_of_domain(&self) -> bool {
        matches!(self, ProblemError::Geometry(GeometryError::OutOfDomain(_)))
    }
}

/// `f(x) = ½ xᵀQx + cᵀx`, μ-strongly convex and L-smooth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    #[serde(rename = "Q")]
    pub q: Mat,
    pub c: Vec<f64>,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl QuadraticObjective {
    pub fn new(q: Mat, c: Vec<f64>, mu: f64, l: f64) -> Result<Self, ProblemError> {
        let f = QuadraticObjective { q, c, mu, l };
        f.validate()?;
        Ok(f)
    }

    /// Builds the objective with `μ` and `L` set to the extreme eigenvalues of `Q`.
    pub fn from_matrix(q: Mat, c: Vec<f64>) -> Result<Self, ProblemError> {
        let ev = q.sym_eigenvalues();
        Self::new(q, c, ev[0], *ev.last().unwrap())
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let d = self.c.len();
        if self.q.rows() != d || self.q.cols() != d {
            return Err(ProblemError::Invalid("objective Q must be square and match c".into()));
        }
        if !self.q.is_symmetric(1e-12) {
            return Err(ProblemError::Invalid("objective Q must be symmetric".into()));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ProblemError::Invalid("mu must be positive".into()));
        }
        if !(self.l >= self.mu && self.l.is_finite()) {
            return Err(ProblemError::Invalid("L must satisfy L >= mu".into()));
        }
        let ev = self.q.sym_eigenvalues();
        let slack = 1e-10 * self.l.max(1.0);
        if ev[0] < self.mu - slack {
            return Err(ProblemError::ConstantViolation(format!(
                "mu = {} exceeds the smallest eigenvalue {} of Q",
                self.mu, ev[0]
            )));
        }
        if *ev.last().unwrap() > self.l + slack {
            return Err(ProblemError::ConstantViolation(format!(
                "L = {} is below the largest eigenvalue {} of Q",
                self.l,
                ev.last().unwrap()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.q.quad(x) + dot(&self.c, x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.q.matvec(x);
        axpy(1.0, &self.c, &mut g);
        g
    }
}

/// One summand Φᵢ of the coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    /// `λᵀAx − ½ Σⱼ bⱼλⱼ²`, with `A` of shape `dim_λ × dim_x`.
    Bilinear {
        a: Mat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_diag: Option<Vec<f64>>,
    },
    /// `scale · λ_index · (½xᵀQx + aᵀx + b)`.
    LagrangianQuadratic { index: usize, scale: f64, q: Mat, a: Vec<f64>, b: f64 },
    /// `scale · λ_index · (aᵀx + b)`.
    LagrangianAffine { index: usize, scale: f64, a: Vec<f64>, b: f64 },
}

impl Component {
    /// Constraint value `gᵢ(x)` for Lagrangian components.
    pub fn constraint_value(&self, x: &[f64]) -> Option<f64> {
        match self {
            Component::Bilinear { .. } => None,
            Component::LagrangianQuadratic { q, a, b, .. } => Some(0.5 * q.quad(x) + dot(a, x) + b),
            Component::LagrangianAffine { a, b, .. } => Some(dot(a, x) + b),
        }
    }

    pub fn value(&self, x: &[f64], lambda: &[f64]) -> f64 {
        match self {
            Component::Bilinear { a, b_diag } => {
                let mut v = dot(lambda, &a.matvec(x));
                if let Some(b) = b_diag {
                    v -= 0.5 * b.iter().zip(lambda).map(|(bj, l)| bj * l * l).sum::<f64>();
                }
                v
            }
            Component::LagrangianQuadratic { index, scale, .. } | Component::LagrangianAffine { index, scale, .. } => {
                scale * lambda[*index] * self.constraint_value(x).unwrap()
            }
        }
    }

    /// `out += w · ∇ₓΦᵢ(x,λ)`
    pub fn add_grad_x(&self, x: &[f64], lambda: &[f64], w: f64, out: &mut [f64]) {
        match self {
            Component::Bilinear { a, .. } => axpy(w, &a.tmatvec(lambda), out),
            Component::LagrangianQuadratic { index, scale, q, a, .. } => {
                let s = w * scale * lambda[*index];
                if s != 0.0 {
                    axpy(s, &q.matvec(x), out);
                    axpy(s, a, out);
                }
            }
            Component::LagrangianAffine { index, scale, a, .. } => {
                let s = w * scale * lambda[*index];
                if s != 0.0 {
                    axpy(s, a, out);
                }
            }
        }
    }

    /// `out += w · ∇_λΦᵢ(x,λ)`
    pub fn add_grad_lambda(&self, x: &[f64], lambda: &[f64], w: f64, out: &mut [f64]) {
        match self {
            Component::Bilinear { a, b_diag } => {
                axpy(w, &a.matvec(x), out);
                if let Some(b) = b_diag {
                    for (o, (bj, l)) in out.iter_mut().zip(b.iter().zip(lambda)) {
                        *o -= w * bj * l;
                    }
                }
            }
            Component::LagrangianQuadratic { index, scale, .. } | Component::LagrangianAffine { index, scale, .. } => {
                out[*index] += w * scale * self.constraint_value(x).unwrap();
            }
        }
    }

    fn check_shapes(&self, dx: usize, dl: usize) -> Result<(), ProblemError> {
        let bad = |m: &str| Err(ProblemError::Invalid(m.to_string()));
        match self {
            Component::Bilinear { a, b_diag } => {
                if a.rows() != dl || a.cols() != dx {
                    return bad("bilinear A must have shape dim_lambda x dim_x");
                }
                if let Some(b) = b_diag {
                    if b.len() != dl || b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return bad("b_diag must be nonnegative with length dim_lambda");
                    }
                }
            }
            Component::LagrangianQuadratic { index, scale, q, a, b } => {
                if *index >= dl || q.rows() != dx || q.cols() != dx || a.len() != dx || !b.is_finite() {
                    return bad("lagrangian_quadratic component has inconsistent shapes");
                }
                if !q.is_symmetric(1e-12) || q.sym_eigenvalues()[0] < -1e-12 {
                    return bad("lagrangian_quadratic Q must be symmetric positive semidefinite");
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return bad("component scale must be positive");
                }
            }
            Component::LagrangianAffine { index, scale, a, b } => {
                if *index >= dl || a.len() != dx || !b.is_finite() {
                    return bad("lagrangian_affine component has inconsistent shapes");
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return bad("component scale must be positive");
                }
            }
        }
        Ok(())
    }

    fn lagrangian_index(&self) -> Option<usize> {
        match self {
            Component::Bilinear { .. } => None,
            Component::LagrangianQuadratic { index, .. } | Component::LagrangianAffine { index, .. } => Some(*index),
        }
    }
}

/// `Φ = (1/n) Σ Φᵢ` with per-component smoothness constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteSumCoupling {
    pub components: Vec<Component>,
    pub l_xx_i: Vec<f64>,
    pub l_lx_i: Vec<f64>,
    pub l_ll_i: Vec<f64>,
    /// When set, `Lⁱₓₓ(λ) = l_xx_i · λ_index` (Lagrangian components).
    #[serde(default)]
    pub l_xx_scales_with_lambda: bool,
}

impl FiniteSumCoupling {
    pub fn n(&self) -> usize {
        self.components.len()
    }

    /// Bilinear-type coupling with constants computed from the matrices.
    pub fn bilinear(components: Vec<Component>, dual: &Geometry) -> Result<Self, ProblemError> {
        let mut l_lx = Vec::new();
        let mut l_ll = Vec::new();
        for c in &components {
            match c {
                Component::Bilinear { a, b_diag } => {
                    l_lx.push(match dual.norm_kind() {
                        crate::geometry::NormKind::Euclidean => a.spectral_norm(),
                        crate::geometry::NormKind::L1 => a.max_row_norm(),
                    });
                    l_ll.push(b_diag.as_ref().map_or(0.0, |b| b.iter().fold(0.0f64, |m, v| m.max(*v))));
                }
                _ => return Err(ProblemError::Invalid("expected bilinear components".into())),
            }
        }
        Ok(FiniteSumCoupling {
            l_xx_i: vec![0.0; components.len()],
            l_lx_i: l_lx,
            l_ll_i: l_ll,
            components,
            l_xx_scales_with_lambda: false,
        })
    }

    pub fn l_xx_at(&self, lambda: &[f64]) -> f64 {
        let n = self.n() as f64;
        if self.l_xx_scales_with_lambda {
            self.components
                .iter()
                .zip(&self.l_xx_i)
                .map(|(c, l)| l * lambda[c.lagrangian_index().unwrap()].max(0.0))
                .sum::<f64>()
                / n
        } else {
            self.l_xx_i.iter().sum::<f64>() / n
        }
    }

    pub fn l_lx(&self) -> f64 {
        self.l_lx_i.iter().sum::<f64>() / self.n() as f64
    }

    pub fn l_ll(&self) -> f64 {
        self.l_ll_i.iter().sum::<f64>() / self.n() as f64
    }

    pub fn value(&self, x: &[f64], lambda: &[f64]) -> f64 {
        self.components.iter().map(|c| c.value(x, lambda)).sum::<f64>() / self.n() as f64
    }
}

/// Counts of gradient-oracle calls. Atomic so batched calls may fan out.
#[derive(Debug, Default)]
pub struct OracleCounter {
    primal: AtomicU64,
    dual: AtomicU64,
}

impl Clone for OracleCounter {
    fn clone(&self) -> Self {
        OracleCounter { primal: AtomicU64::new(self.primal()), dual: AtomicU64::new(self.dual()) }
    }
}

impl OracleCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_counts(primal: u64, dual: u64) -> Self {
        OracleCounter { primal: AtomicU64::new(primal), dual: AtomicU64::new(dual) }
    }

    pub fn primal(&self) -> u64 {
        self.primal.load(Ordering::Relaxed)
    }

    pub fn dual(&self) -> u64 {
        self.dual.load(Ordering::Relaxed)
    }

    pub fn add_primal(&self, k: u64) {
        self.primal.fetch_add(k, Ordering::Relaxed);
    }

    pub fn add_dual(&self, k: u64) {
        self.dual.fetch_add(k, Ordering::Relaxed);
    }

    pub fn total(&self) -> u64 {
        self.primal() + self.dual()
    }
}

/// Component selection for a batched gradient query.
#[derive(Clone, Copy, Debug)]
pub enum Indices<'a> {
    All,
    Subset(&'a [usize]),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub kappa_x: f64,
    pub l_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleProblem {
    pub primal_geom: Geometry,
    pub dual_geom: Geometry,
    pub f: QuadraticObjective,
    #[serde(default)]
    pub g: ProxFn,
    #[serde(default)]
    pub h: ProxFn,
    pub coupling: FiniteSumCoupling,
}

impl SaddleProblem {
    /// Validates shapes and constants, then audits the declared smoothness
    /// constants on random feasible pairs.
    pub fn new(
        primal_geom: Geometry,
        dual_geom: Geometry,
        f: QuadraticObjective,
        g: ProxFn,
        h: ProxFn,
        coupling: FiniteSumCoupling,
    ) -> Result<Self, ProblemError> {
        let p = SaddleProblem { primal_geom, dual_geom, f, g, h, coupling };
        p.validate()?;
        p.audit_constants(0x5eed, 32)?;
        Ok(p)
    }

    /// Parses the JSON problem schema, then validates and audits like [`SaddleProblem::new`].
    pub fn from_json(s: &str) -> Result<Self, ProblemError> {
        let p: SaddleProblem = serde_json::from_str(s)
            .map_err(|e| ProblemError::Parse { line: e.line(), column: e.column(), msg: e.to_string() })?;
        p.validate()?;
        p.audit_constants(0x5eed, 32)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let dx = self.primal_geom.dim();
        let dl = self.dual_geom.dim();
        self.f.validate()?;
        if self.f.dim() != dx {
            return Err(ProblemError::Invalid("objective dimension differs from the primal geometry".into()));
        }
        if !self.primal_geom.set().bounded() {
            return Err(ProblemError::Invalid("the primal set must be bounded".into()));
        }
        self.g.validate(dx)?;
        self.h.validate(dl)?;
        let n = self.coupling.n();
        if n == 0 {
            return Err(ProblemError::Invalid("coupling needs at least one component".into()));
        }
        let c = &self.coupling;
        if c.l_xx_i.len() != n || c.l_lx_i.len() != n || c.l_ll_i.len() != n {
            return Err(ProblemError::Invalid("per-component constants must have length n".into()));
        }
        if [&c.l_xx_i, &c.l_lx_i, &c.l_ll_i].iter().any(|v| v.iter().any(|x| !(x.is_finite() && *x >= 0.0))) {
            return Err(ProblemError::Invalid("smoothness constants must be finite and nonnegative".into()));
        }
        for comp in &c.components {
            comp.check_shapes(dx, dl)?;
        }
        if c.l_xx_scales_with_lambda && c.components.iter().any(|k| k.lagrangian_index().is_none()) {
            return Err(ProblemError::Invalid("lambda-scaled L_xx needs Lagrangian components".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.coupling.n()
    }

    pub fn dim_x(&self) -> usize {
        self.primal_geom.dim()
    }

    pub fn dim_lambda(&self) -> usize {
        self.dual_geom.dim()
    }

    /// κ_X and L_D. For λ-dependent `L_xx` the value at `lambda` is used.
    pub fn derived_constants_at(&self, lambda: &[f64]) -> DerivedConstants {
        let mu = self.f.mu;
        let lx = self.coupling.l_lx();
        DerivedConstants {
            kappa_x: (self.f.l + self.coupling.l_xx_at(lambda)) / mu,
            l_d: self.coupling.l_ll() + 2.0 * lx * lx / mu,
        }
    }

    pub fn derived_constants(&self) -> DerivedConstants {
        self.derived_constants_at(&vec![0.0; self.dim_lambda()])
    }

    pub fn l_d(&self) -> f64 {
        self.derived_constants().l_d
    }

    fn check_x(&self, x: &[f64]) -> Result<(), ProblemError> {
        Ok(self.primal_geom.check_domain(x, tol::ORACLE_DOMAIN)?)
    }

    fn check_lambda(&self, l: &[f64]) -> Result<(), ProblemError> {
        Ok(self.dual_geom.check_domain(l, tol::ORACLE_DOMAIN)?)
    }

    fn resolve<'a>(&self, idx: Indices<'a>) -> Result<Option<&'a [usize]>, ProblemError> {
        match idx {
            Indices::All => Ok(None),
            Indices::Subset(s) => {
                if s.is_empty() {
                    return Err(ProblemError::EmptyIndices);
                }
                if let Some(i) = s.iter().find(|i| **i >= self.n()) {
                    return Err(ProblemError::IndexOutOfRange(*i, self.n()));
                }
                Ok(Some(s))
            }
        }
    }

    pub fn grad_f(&self, x: &[f64], ctr: &OracleCounter) -> Result<Vec<f64>, ProblemError> {
        self.check_x(x)?;
        Ok(self.grad_f_unchecked(x, ctr))
    }

    pub(crate) fn grad_f_unchecked(&self, x: &[f64], ctr: &OracleCounter) -> Vec<f64> {
        ctr.add_primal(1);
        self.f.grad(x)
    }

    pub fn grad_x_phi(
        &self,
        x: &[f64],
        lambda: &[f64],
        idx: Indices,
        ctr: &OracleCounter,
    ) -> Result<Vec<f64>, ProblemError> {
        self.check_x(x)?;
        self.check_lambda(lambda)?;
        let sel = self.resolve(idx)?;
        Ok(self.grad_x_phi_unchecked(x, lambda, sel, ctr))
    }

    pub(crate) fn grad_x_phi_unchecked(
        &self,
        x: &[f64],
        lambda: &[f64],
        sel: Option<&[usize]>,
        ctr: &OracleCounter,
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x()];
        let comps = &self.coupling.components;
        match sel {
            None => {
                let w = 1.0 / comps.len() as f64;
                comps.iter().for_each(|c| c.add_grad_x(x, lambda, w, &mut out));
                ctr.add_primal(comps.len() as u64);
            }
            Some(s) => {
                let w = 1.0 / s.len() as f64;
                s.iter().for_each(|i| comps[*i].add_grad_x(x, lambda, w, &mut out));
                ctr.add_primal(s.len() as u64);
            }
        }
        out
    }

    pub fn grad_lambda_phi(
        &self,
        x: &[f64],
        lambda: &[f64],
        idx: Indices,
        ctr: &OracleCounter,
    ) -> Result<Vec<f64>, ProblemError> {
        self.check_x(x)?;
        self.check_lambda(lambda)?;
        let sel = self.resolve(idx)?;
        Ok(self.grad_lambda_phi_unchecked(x, lambda, sel, ctr))
    }

    pub(crate) fn grad_lambda_phi_unchecked(
        &self,
        x: &[f64],
        lambda: &[f64],
        sel: Option<&[usize]>,
        ctr: &OracleCounter,
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_lambda()];
        let comps = &self.coupling.components;
        match sel {
            None => {
                let w = 1.0 / comps.len() as f64;
                comps.iter().for_each(|c| c.add_grad_lambda(x, lambda, w, &mut out));
                ctr.add_dual(comps.len() as u64);
            }
            Some(s) => {
                let w = 1.0 / s.len() as f64;
                s.iter().for_each(|i| comps[*i].add_grad_lambda(x, lambda, w, &mut out));
                ctr.add_dual(s.len() as u64);
            }
        }
        out
    }

    /// `S(x,λ)`; never touches counters.
    pub fn saddle_value(&self, x: &[f64], lambda: &[f64]) -> Result<f64, ProblemError> {
        self.check_x(x)?;
        self.check_lambda(lambda)?;
        Ok(self.saddle_value_unchecked(x, lambda))
    }

    pub(crate) fn saddle_value_unchecked(&self, x: &[f64], lambda: &[f64]) -> f64 {
        self.f.value(x) + self.g.value(x) + self.coupling.value(x, lambda) - self.h.value(lambda)
    }

    /// `Ŝᴾ(x,λ) = f(x) + g(x) + Φ(x,λ)`.
    pub fn s_hat_primal(&self, x: &[f64], lambda: &[f64]) -> f64 {
        self.f.value(x) + self.g.value(x) + self.coupling.value(x, lambda)
    }

    /// `Ŝᴰ_ρ(x,λ) = Φ(x,λ) − h(λ) − ρω(λ)`.
    pub fn s_hat_dual(&self, x: &[f64], lambda: &[f64], rho: f64) -> f64 {
        let w = if rho == 0.0 { 0.0 } else { rho * self.dual_geom.dgf_value_unchecked(lambda) };
        self.coupling.value(x, lambda) - self.h.value(lambda) - w
    }

    /// Randomized finite-difference audit of the declared constants
    /// (strong convexity sandwich for f and the four coupling bounds).
    pub fn audit_constants(&self, seed: u64, pairs: usize) -> Result<SmoothnessAudit, ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut audit = SmoothnessAudit::default();
        let px = &self.primal_geom;
        let pl = &self.dual_geom;
        let n = self.n();
        let nul = OracleCounter::new();
        let rel = |bound: f64| 1e-8 * bound.abs().max(1.0);
        for _ in 0..pairs {
            let (x, x2) = (px.sample(&mut rng), px.sample(&mut rng));
            let (l, l2) = (pl.sample(&mut rng), pl.sample(&mut rng));
            let dx = px.norm(&crate::linalg::sub(&x, &x2));
            let dl = pl.norm(&crate::linalg::sub(&l, &l2));
            let breg = self.f.value(&x) - self.f.value(&x2) - dot(&self.f.grad(&x2), &crate::linalg::sub(&x, &x2));
            let lo = 0.5 * self.f.mu * dx * dx;
            let hi = 0.5 * self.f.l * dx * dx;
            audit.worst_f_sandwich = audit.worst_f_sandwich.max(lo - breg).max(breg - hi);
            if breg < lo - rel(lo) || breg > hi + rel(hi) {
                return Err(ProblemError::ConstantViolation(format!(
                    "f sandwich violated: {lo} <= {breg} <= {hi} fails"
                )));
            }
            for i in 0..n {
                let sel = [i];
                let s = Some(&sel[..]);
                let gx = |a: &[f64], b: &[f64]| self.grad_x_phi_unchecked(a, b, s, &nul);
                let gl = |a: &[f64], b: &[f64]| self.grad_lambda_phi_unchecked(a, b, s, &nul);
                let c = &self.coupling;
                let lxx = if c.l_xx_scales_with_lambda {
                    c.l_xx_i[i] * l[c.components[i].lagrangian_index().unwrap()].max(0.0)
                } else {
                    c.l_xx_i[i]
                };
                let checks = [
                    ("L_xx", px.dual_norm(&crate::linalg::sub(&gx(&x, &l), &gx(&x2, &l))), lxx * dx),
                    ("L_lx (x-block)", px.dual_norm(&crate::linalg::sub(&gx(&x, &l), &gx(&x, &l2))), c.l_lx_i[i] * dl),
                    ("L_lx (lambda-block)", pl.dual_norm(&crate::linalg::sub(&gl(&x, &l), &gl(&x2, &l))), c.l_lx_i[i] * dx),
                    ("L_ll", pl.dual_norm(&crate::linalg::sub(&gl(&x, &l), &gl(&x, &l2))), c.l_ll_i[i] * dl),
                ];
                for (name, lhs, rhs) in checks {
                    if rhs > 0.0 {
                        audit.worst_ratio = audit.worst_ratio.max(lhs / rhs);
                    }
                    if lhs > rhs + rel(rhs) {
                        return Err(ProblemError::ConstantViolation(format!(
                            "{name} of component {i}: gradient difference {lhs} exceeds bound {rhs}"
                        )));
                    }
                }
            }
        }
        audit.pairs = pairs;
        Ok(audit)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessAudit {
    pub pairs: usize,
    /// Largest observed gradient-difference ratio against a declared constant.
    pub worst_ratio: f64,
    /// Largest violation of the f sandwich (negative when strictly inside).
    pub worst_f_sandwich: f64,
}
