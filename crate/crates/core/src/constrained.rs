//! Functionally constrained programs `min f(x) + r(x)` s.t. `gᵢ(x) ≤ 0`,
//! `x ∈ 𝒳`, solved through their Lagrangian saddle problem
//! `f + r + (1/n) Σ nλᵢgᵢ` over `λ ∈ ℝ₊ⁿ`.

use crate::gap::GapEvaluator;
use crate::geometry::{Geometry, ProxFn};
use crate::ipds::{self, HpConfig, RunOptions, RunTrace, Schedule};
use crate::linalg::{dot, norm2, Mat};
use crate::problem::{Component, FiniteSumCoupling, OracleCounter, ProblemError, QuadraticObjective, SaddleProblem};
use crate::tol;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstrainedError {
    #[error("Slater witness violates constraint {index}: g = {value}")]
    SlaterViolation { index: usize, value: f64 },
    #[error("the primal set must be bounded")]
    UnboundedPrimalSet,
    #[error("invalid constrained program: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Run(#[from] ipds::IpdsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Affine,
    Quadratic,
}

/// `g(x) = ½xᵀQx + aᵀx + b`; `q` is absent for affine constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Mat>,
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(rename = "type")]
    pub kind: ConstraintKind,
    pub data: ConstraintData,
    /// Smoothness constant αᵢ of gᵢ; must dominate ‖Q‖.
    pub alpha: f64,
}

impl Constraint {
    pub fn affine(a: Vec<f64>, b: f64) -> Self {
        Constraint { kind: ConstraintKind::Affine, data: ConstraintData { q: None, a, b }, alpha: 0.0 }
    }

    /// Quadratic constraint with `alpha = ‖Q‖₂`.
    pub fn quadratic(q: Mat, a: Vec<f64>, b: f64) -> Self {
        let alpha = q.spectral_norm();
        Constraint { kind: ConstraintKind::Quadratic, data: ConstraintData { q: Some(q), a, b }, alpha }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = &self.data;
        d.q.as_ref().map_or(0.0, |q| 0.5 * q.quad(x)) + dot(&d.a, x) + d.b
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = &self.data;
        let mut g = d.a.clone();
        if let Some(q) = &d.q {
            crate::linalg::axpy(1.0, &q.matvec(x), &mut g);
        }
        g
    }

    fn validate(&self, dim: usize) -> Result<(), ConstrainedError> {
        let bad = |m: String| Err(ConstrainedError::Invalid(m));
        let d = &self.data;
        if d.a.len() != dim || !crate::linalg::all_finite(&d.a) || !d.b.is_finite() {
            return bad(format!("constraint data must be finite with length {dim}"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and nonnegative".into());
        }
        match (self.kind, &d.q) {
            (ConstraintKind::Affine, None) => Ok(()),
            (ConstraintKind::Affine, Some(_)) => bad("affine constraints carry no q".into()),
            (ConstraintKind::Quadratic, None) => bad("quadratic constraints need q".into()),
            (ConstraintKind::Quadratic, Some(q)) => {
                if q.rows() != dim || q.cols() != dim || !q.is_symmetric(1e-12) {
                    return bad("constraint q must be symmetric with the primal dimension".into());
                }
                let ev = q.sym_eigenvalues();
                if ev[0] < -1e-12 {
                    return bad("constraint q must be positive semidefinite".into());
                }
                let top = ev.last().copied().unwrap_or(0.0);
                if self.alpha < top * (1.0 - 1e-12) {
                    return bad(format!("alpha {} is below the largest eigenvalue {top}", self.alpha));
                }
                Ok(())
            }
        }
    }
}

/// Constrained program; JSON keys follow the external schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProgramRaw", into = "ProgramRaw")]
pub struct ConstrainedProgram {
    pub x_geom: Geometry,
    pub f: QuadraticObjective,
    pub r: ProxFn,
    pub constraints: Vec<Constraint>,
    pub slater_point: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramRaw {
    objective: QuadraticObjective,
    #[serde(default)]
    regularizer: ProxFn,
    constraints: Vec<Constraint>,
    set: Geometry,
    slater_point: Vec<f64>,
}

impl TryFrom<ProgramRaw> for ConstrainedProgram {
    type Error = ConstrainedError;
    fn try_from(r: ProgramRaw) -> Result<Self, Self::Error> {
        ConstrainedProgram::new(r.set, r.objective, r.regularizer, r.constraints, r.slater_point)
    }
}

impl From<ConstrainedProgram> for ProgramRaw {
    fn from(c: ConstrainedProgram) -> Self {
        ProgramRaw {
            objective: c.f,
            regularizer: c.r,
            constraints: c.constraints,
            set: c.x_geom,
            slater_point: c.slater_point,
        }
    }
}

impl ConstrainedProgram {
    pub fn new(
        x_geom: Geometry,
        f: QuadraticObjective,
        r: ProxFn,
        constraints: Vec<Constraint>,
        slater_point: Vec<f64>,
    ) -> Result<Self, ConstrainedError> {
        let cp = ConstrainedProgram { x_geom, f, r, constraints, slater_point };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<(), ConstrainedError> {
        let d = self.x_geom.dim();
        if !self.x_geom.set().bounded() {
            return Err(ConstrainedError::UnboundedPrimalSet);
        }
        self.f.validate()?;
        if self.f.dim() != d {
            return Err(ConstrainedError::Invalid("objective dimension differs from the set".into()));
        }
        self.r.validate(d).map_err(ProblemError::from)?;
        if self.constraints.is_empty() {
            return Err(ConstrainedError::Invalid("at least one constraint is required".into()));
        }
        for c in &self.constraints {
            c.validate(d)?;
        }
        if self.slater_point.len() != d || !self.x_geom.contains(&self.slater_point, tol::DOMAIN) {
            return Err(ConstrainedError::Invalid("the Slater point must lie in the set".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let v = c.value(&self.slater_point);
            if !(v < -tol::SLATER_MARGIN) {
                return Err(ConstrainedError::SlaterViolation { index: i, value: v });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.constraints.len()
    }

    pub fn dim(&self) -> usize {
        self.x_geom.dim()
    }

    /// α = Σ αᵢ.
    pub fn alpha_total(&self) -> f64 {
        self.constraints.iter().map(|c| c.alpha).sum()
    }

    /// `f(x) + r(x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.f.value(x) + self.r.value(x)
    }

    pub fn violations(&self, x: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.value(x).max(0.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub m_i: Vec<f64>,
    pub m_total: f64,
    pub l_d: f64,
    pub kappa_cons: f64,
}

/// Number of quasi-random points added to the corner/center sample.
const QUASI_RANDOM_POINTS: usize = 128;

/// Deterministic sample of 𝒳: box corners (up to 2¹² of them), the anchor and
/// a Halton-type sequence mapped into the set.
fn sample_points(g: &Geometry) -> Vec<Vec<f64>> {
    use crate::geometry::FeasibleSet;
    let d = g.dim();
    let mut pts = vec![g.anchor()];
    if let FeasibleSet::Box { lower, upper } = g.set() {
        if d <= 12 {
            for mask in 0u32..(1 << d) {
                pts.push((0..d).map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] }).collect());
            }
        }
    }
    const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    let radical_inverse = |mut k: u32, base: u32| {
        let (mut v, mut f) = (0.0, 1.0 / base as f64);
        while k > 0 {
            v += (k % base) as f64 * f;
            k /= base;
            f /= base as f64;
        }
        v
    };
    for k in 1..=QUASI_RANDOM_POINTS as u32 {
        let h: Vec<f64> = (0..d).map(|i| radical_inverse(k, PRIMES[i % PRIMES.len()] + (i / PRIMES.len()) as u32 * 2)).collect();
        pts.push(map_unit_cube(g, &h));
    }
    pts
}

fn map_unit_cube(g: &Geometry, h: &[f64]) -> Vec<f64> {
    use crate::geometry::FeasibleSet;
    match g.set() {
        FeasibleSet::Box { lower, upper } => h.iter().zip(lower.iter().zip(upper)).map(|(t, (l, u))| l + t * (u - l)).collect(),
        FeasibleSet::Ball { center, radius } => {
            let v: Vec<f64> = h.iter().map(|t| 2.0 * t - 1.0).collect();
            let n = norm2(&v).max(1.0);
            center.iter().zip(&v).map(|(c, x)| c + radius * x / n).collect()
        }
        FeasibleSet::EuclideanBallIntersectOrthant { radius, .. } => {
            let n = norm2(h).max(1.0);
            h.iter().map(|x| radius * x / n).collect()
        }
        FeasibleSet::Simplex { scale } => {
            let e: Vec<f64> = h.iter().map(|t| -(1.0 - t).max(1e-300).ln()).collect();
            let s: f64 = e.iter().sum::<f64>().max(1e-300);
            e.iter().map(|x| scale * x / s).collect()
        }
        FeasibleSet::NonnegativeOrthant => h.to_vec(),
    }
}

/// `Mᵢ = αᵢD_𝒳 + min over a deterministic sample of ‖∇gᵢ‖*`; exact for affine
/// constraints.
pub fn compute_constants(cp: &ConstrainedProgram) -> Result<ConstantsReport, ConstrainedError> {
    let diam = cp.x_geom.diameter().finite().ok_or(ConstrainedError::UnboundedPrimalSet)?;
    let pts = sample_points(&cp.x_geom);
    let m_i: Vec<f64> = cp
        .constraints
        .iter()
        .map(|c| match c.kind {
            ConstraintKind::Affine => cp.x_geom.dual_norm(&c.data.a),
            ConstraintKind::Quadratic => {
                let inf = pts.iter().map(|x| cp.x_geom.dual_norm(&c.grad(x))).fold(f64::INFINITY, f64::min);
                c.alpha * diam + inf
            }
        })
        .collect();
    let m_total: f64 = m_i.iter().sum();
    Ok(ConstantsReport {
        l_d: 2.0 * m_total * m_total / cp.f.mu,
        kappa_cons: (cp.f.l + cp.alpha_total()) / cp.f.mu,
        m_i,
        m_total,
    })
}

/// Lagrangian saddle problem with `Φᵢ = nλᵢgᵢ`, `Λ = ℝ₊ⁿ`, `h ≡ 0`.
pub fn build_lagrangian(cp: &ConstrainedProgram) -> Result<SaddleProblem, ConstrainedError> {
    cp.validate()?;
    let consts = compute_constants(cp)?;
    build_with_constants(cp, &consts)
}

pub(crate) fn build_with_constants(cp: &ConstrainedProgram, consts: &ConstantsReport) -> Result<SaddleProblem, ConstrainedError> {
    let n = cp.n();
    let nf = n as f64;
    let components: Vec<Component> = cp
        .constraints
        .iter()
        .enumerate()
        .map(|(i, c)| match &c.data.q {
            Some(q) => Component::LagrangianQuadratic { index: i, scale: nf, q: q.clone(), a: c.data.a.clone(), b: c.data.b },
            None => Component::LagrangianAffine { index: i, scale: nf, a: c.data.a.clone(), b: c.data.b },
        })
        .collect();
    let coupling = FiniteSumCoupling {
        components,
        l_xx_i: cp.constraints.iter().map(|c| nf * c.alpha).collect(),
        l_lx_i: consts.m_i.iter().map(|m| nf * m).collect(),
        l_ll_i: vec![0.0; n],
        l_xx_scales_with_lambda: true,
    };
    Ok(SaddleProblem::new(
        cp.x_geom.clone(),
        Geometry::orthant(n),
        cp.f.clone(),
        cp.r.clone(),
        ProxFn::Zero,
        coupling,
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem53Bounds {
    pub w_f: f64,
    pub w_g: Vec<f64>,
    /// False when λ* was unknown and the λ*-dependent term is omitted.
    pub lambda_star_aware: bool,
}

/// Closed-form objective and violation bounds after `k` iterations; the
/// initial smoothed gap is clamped at zero. Without λ*, `w_g` has one entry
/// holding the λ*-free part.
pub fn theorem53_bounds(k: u64, eps: f64, l_d: f64, lambda_star: Option<&[f64]>, initial_sgap_upper: f64) -> Theorem53Bounds {
    let d0 = initial_sgap_upper.max(0.0);
    let kk = k as f64;
    let denom = (kk + 1.0) * (kk + 2.0);
    let w_f = 2.0 * d0 / denom + eps / 2.0;
    let free = 8.0 * (l_d * d0).sqrt() / denom + 4.0 * (l_d * eps).sqrt() / (kk + 1.0);
    match lambda_star {
        Some(ls) => {
            let l2 = norm2(ls);
            Theorem53Bounds {
                w_f,
                w_g: ls.iter().map(|li| 16.0 * (li + l2) * l_d / denom + free).collect(),
                lambda_star_aware: true,
            }
        }
        None => Theorem53Bounds { w_f, w_g: vec![free], lambda_star_aware: false },
    }
}

/// Violation bound for a pair with smoothed gap at most `gap_eps`.
pub fn lemma51_violation_bound(lambda_star: &[f64], rho: f64, gap_eps: f64) -> Vec<f64> {
    let l2 = norm2(lambda_star);
    lambda_star.iter().map(|li| (li + l2) * rho + (2.0 * gap_eps * rho).sqrt()).collect()
}

/// Smallest K ≥ K′_det whose λ*-free violation tail `4√(L_D ε)/(K+1)` is at
/// most ε/2.
pub fn k_cons(l_d: f64, eps: f64, initial_sgap_upper: f64) -> u64 {
    let kp = ipds::k_prime_det(eps, initial_sgap_upper);
    let tail = (8.0 * (l_d / eps).sqrt() - 1.0 - 1e-12).ceil().max(0.0) as u64;
    kp.max(tail)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConsMode {
    Det,
    Rand { seed: u64 },
    RandHp { seed: u64, delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub k: u64,
    pub eps: f64,
    pub objective_gap_bound: f64,
    pub violation_bounds: Vec<f64>,
    pub lambda_star_aware: bool,
    pub violations: Vec<f64>,
    pub objective: f64,
    pub objective_gap: Option<f64>,
    pub initial_sgap_upper: f64,
    pub constants: ConstantsReport,
}

impl FeasibilityReport {
    /// Measured values within their bounds (objective only when f* is known).
    pub fn passes(&self) -> bool {
        let obj = self.objective_gap.is_none_or(|g| g <= self.objective_gap_bound);
        let viol = if self.lambda_star_aware {
            self.violations.iter().zip(&self.violation_bounds).all(|(v, w)| v <= w)
        } else {
            true
        };
        obj && viol
    }
}

/// Optional reference data used in the report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConsReference {
    pub f_star: Option<f64>,
    pub lambda_star: Option<Vec<f64>>,
}

/// Runs IPDS on the Lagrangian with the closed-form dual step (η ≡ 0) from
/// `(x⁰, λ⁰) = (anchor, 0)`; `k` defaults to [`k_cons`].
pub fn solve_constrained(
    cp: &ConstrainedProgram,
    eps: f64,
    mode: ConsMode,
    k: Option<u64>,
    reference: &ConsReference,
    ctr: &OracleCounter,
) -> Result<(Vec<f64>, FeasibilityReport, RunTrace), ConstrainedError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(ConstrainedError::Invalid("eps must be positive".into()));
    }
    let consts = compute_constants(cp)?;
    let p = build_with_constants(cp, &consts)?;
    let l_d = p.l_d();
    let x0 = cp.x_geom.anchor();
    let l0 = vec![0.0; cp.n()];
    let mut sched = Schedule::new(l_d, eps);
    sched.eta_override_zero = true;
    let ev = GapEvaluator::certified();
    let d0 = ev.smoothed_gap(&p, &x0, &l0, sched.rho0, &OracleCounter::new()).map_err(ipds::IpdsError::from)?.hi;
    let k = k.unwrap_or_else(|| k_cons(l_d, eps, d0));
    let opts = RunOptions { k, ..RunOptions::default() };
    let trace = match mode {
        ConsMode::Det => ipds::run_deterministic(&p, &sched, (&x0, &l0), &opts, ctr)?,
        ConsMode::Rand { seed } => ipds::run_randomized(&p, &sched, (&x0, &l0), &opts, seed, None, ctr)?,
        ConsMode::RandHp { seed, delta } => {
            let hp = HpConfig { delta, k_fixed: k };
            ipds::run_randomized(&p, &sched, (&x0, &l0), &opts, seed, Some(hp), ctr)?
        }
    };
    let x = trace.final_x().to_vec();
    let b = theorem53_bounds(k, eps, l_d, reference.lambda_star.as_deref(), d0);
    let objective = cp.objective(&x);
    let report = FeasibilityReport {
        k,
        eps,
        objective_gap_bound: b.w_f,
        violation_bounds: b.w_g,
        lambda_star_aware: b.lambda_star_aware,
        violations: cp.violations(&x),
        objective,
        objective_gap: reference.f_star.map(|f| objective - f),
        initial_sgap_upper: d0,
        constants: consts,
    };
    Ok((x, report, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthAudit {
    /// Fit `‖λ̂ᵏ‖_∞ ≈ c0 + c1·t_k` with `t_k = k√(εμ)/M`.
    pub c0: f64,
    pub c1: f64,
    /// Largest ratio of the observed norm to the fitted value (fit floored at 1).
    pub max_ratio_to_fit: f64,
    /// Exponent of a log-log fit of the norm against k over the second half of
    /// the run; values well above 1 indicate super-linear growth.
    pub tail_exponent: f64,
    pub superlinear: bool,
    /// Largest relative mismatch between logged primal smoothness and `L + Σαᵢλ̂ᵢ`.
    pub l_prime_mismatch: f64,
}

/// Empirical check of multiplier growth along a constrained run.
pub fn multiplier_growth_audit(
    trace: &RunTrace,
    cp: &ConstrainedProgram,
    constants: &ConstantsReport,
    eps: f64,
) -> GrowthAudit {
    let scale = (eps * cp.f.mu).sqrt() / constants.m_total.max(f64::MIN_POSITIVE);
    let pts: Vec<(f64, f64)> = trace
        .records
        .iter()
        .filter(|r| r.k > 0)
        .map(|r| (r.k as f64 * scale, r.lambda_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        .collect();
    let (c0, c1) = least_squares_line(&pts);
    let max_ratio_to_fit = pts.iter().map(|(t, y)| y / (c0 + c1 * t).max(1.0)).fold(0.0, f64::max);
    let tail: Vec<(f64, f64)> = trace
        .records
        .iter()
        .skip(trace.records.len() / 2)
        .filter_map(|r| {
            let y = r.lambda_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (y > 0.0 && r.k > 0).then(|| ((r.k as f64).ln(), y.ln()))
        })
        .collect();
    let tail_exponent = if tail.len() >= 2 { least_squares_line(&tail).1 } else { 0.0 };
    let l_prime_mismatch = trace
        .records
        .iter()
        .filter_map(|r| {
            let got = r.primal_l_prime?;
            let want = cp.f.l + cp.constraints.iter().zip(&r.lambda_hat).map(|(c, l)| c.alpha * l.max(0.0)).sum::<f64>();
            Some((got - want).abs() / want.max(1.0))
        })
        .fold(0.0, f64::max);
    GrowthAudit { c0, c1, max_ratio_to_fit, tail_exponent, superlinear: tail_exponent > 1.5, l_prime_mismatch }
}

/// Ordinary least squares `y ≈ a + b·x`.
pub fn least_squares_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.is_empty() {
        return (0.0, 0.0);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}
