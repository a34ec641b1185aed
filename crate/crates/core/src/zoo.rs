//! Seeded test instances with exactly known saddle points and closed-form
//! inner solutions.
//!
//! Families:
//! - `bilinear_qp`: `f` quadratic, `Φ = ⟨Āx, λ⟩`, Λ a Euclidean ball. The
//!   saddle is planted with `λ*` on the sphere, so `L_λλ = 0`.
//! - `finite_sum_qp`: the same with `n` distinct components `Aᵢ`.
//! - `nonbilinear_entropy`: `Φ = ⟨Āx, λ⟩ − ½κ Σ bⱼλⱼ²`, Λ the simplex with the
//!   entropy DGF, `h(λ) = ⟨w, λ⟩`; `w ≥ 0` is chosen so that a random interior
//!   `λ*` is optimal.
//! - `qcqp`: a constrained program with mixed affine and convex quadratic
//!   constraints; its reference comes from a primal-dual interior-point solve.
//!
//! The primal set is always a box; `x*(λ)` is computed by an exact active-set
//! box QP solve.

use crate::constrained::{self, Constraint, ConstrainedProgram};
use crate::gap::{AnalyticInner, GapEvaluator};
use crate::geometry::{DgfKind, FeasibleSet, Geometry, NormKind, ProxFn};
use crate::linalg::{axpy, dot, norm2, norm_inf, Mat};
use crate::problem::{Component, FiniteSumCoupling, QuadraticObjective, SaddleProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZooError {
    #[error("instance construction failed: {0}")]
    ConstructionFailure(String),
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
    #[error(transparent)]
    Constrained(#[from] constrained::ConstrainedError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BilinearQp,
    FiniteSumQp,
    NonbilinearEntropy,
    Qcqp,
}

impl Family {
    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "bilinear_qp" => Some(Family::BilinearQp),
            "finite_sum_qp" => Some(Family::FiniteSumQp),
            "nonbilinear_entropy" => Some(Family::NonbilinearEntropy),
            "qcqp" => Some(Family::Qcqp),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::BilinearQp => "bilinear_qp",
            Family::FiniteSumQp => "finite_sum_qp",
            Family::NonbilinearEntropy => "nonbilinear_entropy",
            Family::Qcqp => "qcqp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    Analytic,
    KktSolve,
    GridSearch,
    GenericSolver,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAudit {
    /// `max(S(x*,λ) − S(x*,λ*), S(x*,λ*) − S(x,λ*))` over the samples.
    pub saddle_violation: f64,
    pub samples: usize,
    pub kkt_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    /// Saddle value; `f(x*) + r(x*)` for constrained programs.
    pub f_star: f64,
    pub method: ReferenceMethod,
    pub audit: ReferenceAudit,
}

#[derive(Clone)]
pub struct ZooInstance {
    pub family: Family,
    pub seed: u64,
    pub problem: SaddleProblem,
    pub constrained: Option<ConstrainedProgram>,
    pub reference: Reference,
    inner: Arc<ExactInner>,
}

/// Saddle audit sample count and tolerance.
pub const AUDIT_SAMPLES: usize = 1000;
pub const AUDIT_TOL: f64 = 1e-8;

impl ZooInstance {
    fn assemble(
        family: Family,
        seed: u64,
        problem: SaddleProblem,
        constrained: Option<ConstrainedProgram>,
        x_star: Vec<f64>,
        lambda_star: Vec<f64>,
        method: ReferenceMethod,
        kkt_residual: Option<f64>,
    ) -> Result<Self, ZooError> {
        let inner = Arc::new(
            ExactInner::new(&problem)
                .ok_or_else(|| ZooError::ConstructionFailure("instance has no closed-form inner solutions".into()))?,
        );
        let f_star = match &constrained {
            Some(cp) => cp.objective(&x_star),
            None => problem.saddle_value(&x_star, &lambda_star)?,
        };
        let mut inst = ZooInstance {
            family,
            seed,
            problem,
            constrained,
            reference: Reference {
                x_star,
                lambda_star,
                f_star,
                method,
                audit: ReferenceAudit { saddle_violation: 0.0, samples: 0, kkt_residual },
            },
            inner,
        };
        inst.reference.audit.saddle_violation = inst.saddle_audit(seed ^ 0xa0d1, AUDIT_SAMPLES);
        inst.reference.audit.samples = AUDIT_SAMPLES;
        if inst.reference.audit.saddle_violation > AUDIT_TOL {
            return Err(ZooError::ConstructionFailure(format!(
                "reference fails the saddle audit by {}",
                inst.reference.audit.saddle_violation
            )));
        }
        Ok(inst)
    }

    pub fn analytic(&self) -> Arc<dyn AnalyticInner> {
        self.inner.clone()
    }

    pub fn exact_inner(&self) -> &ExactInner {
        &self.inner
    }

    pub fn evaluator(&self) -> GapEvaluator {
        GapEvaluator::analytic(self.analytic())
    }

    /// Largest violation of `S(x*,λ) ≤ S(x*,λ*) ≤ S(x,λ*)` on sampled points.
    pub fn saddle_audit(&self, seed: u64, samples: usize) -> f64 {
        let p = &self.problem;
        let (xs, ls) = (&self.reference.x_star, &self.reference.lambda_star);
        let s_star = p.saddle_value_unchecked(xs, ls);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let x = p.primal_geom.sample(&mut rng);
            let l = p.dual_geom.sample(&mut rng);
            worst = worst.max(p.saddle_value_unchecked(xs, &l) - s_star).max(s_star - p.saddle_value_unchecked(&x, ls));
        }
        worst.max(0.0)
    }

    /// `{"family", "seed", "problem", "constrained"?, "reference"}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "family": self.family,
            "seed": self.seed,
            "problem": self.problem,
            "reference": self.reference,
        });
        if let Some(cp) = &self.constrained {
            v["constrained"] = serde_json::to_value(cp).expect("programs serialize");
        }
        v
    }
}

/// Tunable constants of the quadratic families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpParams {
    pub mu: f64,
    pub l: f64,
    /// 𝒳 = [−box_half, box_half]^dim_x.
    pub box_half: f64,
    /// Radius of the dual ball (bilinear families).
    pub radius: f64,
    /// Spectral scale of the coupling matrices.
    pub a_scale: f64,
    /// κ in the entropy family.
    pub kappa: f64,
}

impl Default for QpParams {
    fn default() -> Self {
        QpParams { mu: 1.0, l: 10.0, box_half: 2.0, radius: 1.0, a_scale: 1.0, kappa: 1.0 }
    }
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    g.qr().q()
}

/// Symmetric matrix with eigenvalues log-spaced in `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Mat {
    let u = random_orthogonal(rng, d);
    let eig: Vec<f64> = (0..d)
        .map(|i| if d == 1 { hi } else { lo * (hi / lo).powf(i as f64 / (d - 1) as f64) })
        .collect();
    let m = &u * DMatrix::from_diagonal(&DVector::from_vec(eig)) * u.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    Mat::from_nalgebra(&sym)
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Mat {
    let m = Mat::from_fn(rows, cols, |_, _| normal(rng));
    let s = m.spectral_norm().max(1e-12);
    Mat::from_fn(rows, cols, |i, j| scale * m.get(i, j) / s)
}

fn mean_matrix(ms: &[Mat]) -> Mat {
    let mut out = Mat::zeros(ms[0].rows(), ms[0].cols());
    for m in ms {
        out.add_scaled(1.0 / ms.len() as f64, m);
    }
    out
}

/// Single-component bilinear QP.
pub fn make_bilinear_qp(dim_x: usize, dim_lambda: usize, seed: u64) -> Result<ZooInstance, ZooError> {
    bilinear_family(Family::BilinearQp, dim_x, dim_lambda, 1, seed, &QpParams::default())
}

/// Bilinear QP with `n` components.
pub fn make_finite_sum_qp(dim_x: usize, dim_lambda: usize, n: usize, seed: u64) -> Result<ZooInstance, ZooError> {
    bilinear_family(Family::FiniteSumQp, dim_x, dim_lambda, n, seed, &QpParams::default())
}

pub fn make_bilinear_qp_with(
    dim_x: usize,
    dim_lambda: usize,
    n: usize,
    seed: u64,
    params: &QpParams,
) -> Result<ZooInstance, ZooError> {
    let family = if n == 1 { Family::BilinearQp } else { Family::FiniteSumQp };
    bilinear_family(family, dim_x, dim_lambda, n, seed, params)
}

fn check_dims(dim_x: usize, dim_lambda: usize, n: usize) -> Result<(), ZooError> {
    if dim_x == 0 || dim_lambda == 0 || n == 0 {
        return Err(ZooError::ConstructionFailure("dimensions and n must be at least 1".into()));
    }
    Ok(())
}

fn bilinear_family(
    family: Family,
    dim_x: usize,
    dim_lambda: usize,
    n: usize,
    seed: u64,
    prm: &QpParams,
) -> Result<ZooInstance, ZooError> {
    check_dims(dim_x, dim_lambda, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb111_0000);
    let q = random_spd(&mut rng, dim_x, prm.mu, prm.l);
    let mats: Vec<Mat> = (0..n).map(|_| random_matrix(&mut rng, dim_lambda, dim_x, prm.a_scale)).collect();
    let a_bar = mean_matrix(&mats);
    let mut x_star: Vec<f64>;
    let mut ax;
    loop {
        x_star = (0..dim_x).map(|_| prm.box_half * (rng.gen::<f64>() - 0.5)).collect();
        ax = a_bar.matvec(&x_star);
        if norm2(&ax) > 1e-3 {
            break;
        }
    }
    let lambda_star: Vec<f64> = ax.iter().map(|v| prm.radius * v / norm2(&ax)).collect();
    let mut c = q.matvec(&x_star);
    axpy(1.0, &a_bar.tmatvec(&lambda_star), &mut c);
    let c: Vec<f64> = c.iter().map(|v| -v).collect();
    let f = QuadraticObjective::new(q, c, prm.mu, prm.l)?;
    let primal = Geometry::box_uniform(dim_x, -prm.box_half, prm.box_half).expect("valid box");
    let dual = Geometry::euclidean(dim_lambda, FeasibleSet::Ball { center: vec![0.0; dim_lambda], radius: prm.radius })
        .expect("valid ball");
    let comps = mats.into_iter().map(|a| Component::Bilinear { a, b_diag: None }).collect();
    let coupling = FiniteSumCoupling::bilinear(comps, &dual)?;
    let p = SaddleProblem::new(primal, dual, f, ProxFn::Zero, ProxFn::Zero, coupling)?;
    ZooInstance::assemble(family, seed, p, None, x_star, lambda_star, ReferenceMethod::Analytic, None)
}

/// Entropy-simplex family with `n = 1`.
pub fn make_nonbilinear_entropy(dim_x: usize, dim_lambda: usize, seed: u64) -> Result<ZooInstance, ZooError> {
    make_nonbilinear_entropy_with(dim_x, dim_lambda, 1, seed, &QpParams::default())
}

/// `κ = 0` gives the bilinear coupling on the simplex.
pub fn make_nonbilinear_entropy_with(
    dim_x: usize,
    dim_lambda: usize,
    n: usize,
    seed: u64,
    prm: &QpParams,
) -> Result<ZooInstance, ZooError> {
    check_dims(dim_x, dim_lambda, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe470_0000);
    let q = random_spd(&mut rng, dim_x, prm.mu, prm.l);
    let mats: Vec<Mat> = (0..n).map(|_| random_matrix(&mut rng, dim_lambda, dim_x, prm.a_scale)).collect();
    let bs: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim_lambda).map(|_| prm.kappa * (0.5 + rng.gen::<f64>())).collect()).collect();
    let a_bar = mean_matrix(&mats);
    let b_bar: Vec<f64> = (0..dim_lambda).map(|j| bs.iter().map(|b| b[j]).sum::<f64>() / n as f64).collect();
    let x_star: Vec<f64> = (0..dim_x).map(|_| prm.box_half * (rng.gen::<f64>() - 0.5)).collect();
    let raw: Vec<f64> = (0..dim_lambda).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let lambda_star: Vec<f64> = raw.iter().map(|v| v / s).collect();
    // Optimality of λ* needs Āx* − b̄∘λ* − w = τ1 with w ≥ 0.
    let v: Vec<f64> = a_bar.matvec(&x_star).iter().zip(&b_bar).zip(&lambda_star).map(|((a, b), l)| a - b * l).collect();
    let tau = v.iter().fold(f64::INFINITY, |m, x| m.min(*x)) - 0.1;
    let w: Vec<f64> = v.iter().map(|x| x - tau).collect();
    let mut c = q.matvec(&x_star);
    axpy(1.0, &a_bar.tmatvec(&lambda_star), &mut c);
    let c: Vec<f64> = c.iter().map(|v| -v).collect();
    let f = QuadraticObjective::new(q, c, prm.mu, prm.l)?;
    let primal = Geometry::box_uniform(dim_x, -prm.box_half, prm.box_half).expect("valid box");
    let dual = Geometry::entropy_simplex(dim_lambda);
    let comps = mats
        .into_iter()
        .zip(bs)
        .map(|(a, b)| Component::Bilinear { a, b_diag: if prm.kappa == 0.0 { None } else { Some(b) } })
        .collect();
    let coupling = FiniteSumCoupling::bilinear(comps, &dual)?;
    let p = SaddleProblem::new(primal, dual, f, ProxFn::Zero, ProxFn::WeightedL1 { weights: w }, coupling)?;
    ZooInstance::assemble(Family::NonbilinearEntropy, seed, p, None, x_star, lambda_star, ReferenceMethod::Analytic, None)
}

/// QCQP on `[−1,1]^dim` with Slater point 0. A fraction `active_fraction` of
/// the constraints is violated at the unconstrained minimizer; the rest hold
/// on the whole box.
pub fn make_qcqp(dim: usize, n_constraints: usize, seed: u64, active_fraction: f64) -> Result<ZooInstance, ZooError> {
    if dim == 0 || dim > 10 || n_constraints == 0 || !(0.0..=1.0).contains(&active_fraction) {
        return Err(ZooError::ConstructionFailure("need 1 <= dim <= 10, n >= 1, active_fraction in [0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c9b_0000);
    let (mu, l) = (1.0, 5.0);
    let q = random_spd(&mut rng, dim, mu, l);
    let dir: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let scale = 0.8 * (0.5 + 0.5 * rng.gen::<f64>()) / norm_inf(&dir).max(1e-12);
    let x_u: Vec<f64> = dir.iter().map(|v| v * scale).collect();
    let c: Vec<f64> = q.matvec(&x_u).iter().map(|v| -v).collect();
    let n_active = (active_fraction * n_constraints as f64).round() as usize;
    let unit_xu: Vec<f64> = x_u.iter().map(|v| v / norm2(&x_u)).collect();
    let mut cons = Vec::with_capacity(n_constraints);
    for i in 0..n_constraints {
        let quadratic = i % 2 == 1;
        let qi = quadratic.then(|| Mat::diag(&(0..dim).map(|_| 0.5 * rng.gen::<f64>()).collect::<Vec<_>>()));
        let a: Vec<f64> = if i < n_active {
            let g: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let gn = norm2(&g).max(1e-12);
            unit_xu.iter().zip(&g).map(|(u, gv)| u + 0.3 * gv / gn).collect()
        } else {
            (0..dim).map(|_| normal(&mut rng)).collect()
        };
        let quad_at = |x: &[f64]| qi.as_ref().map_or(0.0, |m| 0.5 * m.quad(x));
        let b = if i < n_active {
            let t = 0.3 + 0.4 * rng.gen::<f64>();
            -(1.0 - t) * (quad_at(&x_u) + dot(&a, &x_u))
        } else {
            let qmax = qi.as_ref().map_or(0.0, |m| 0.5 * (0..dim).map(|j| m.get(j, j)).sum::<f64>());
            -(qmax + a.iter().map(|v| v.abs()).sum::<f64>() + 0.1 + 0.5 * rng.gen::<f64>())
        };
        cons.push(match qi {
            Some(m) => Constraint::quadratic(m, a, b),
            None => Constraint::affine(a, b),
        });
    }
    let geom = Geometry::box_uniform(dim, -1.0, 1.0).expect("valid box");
    let f = QuadraticObjective::new(q, c, mu, l)?;
    let cp = ConstrainedProgram::new(geom, f, ProxFn::Zero, cons, vec![0.0; dim])
        .map_err(|e| ZooError::ConstructionFailure(e.to_string()))?;
    qcqp_instance(cp, seed)
}

/// Wraps a constrained program with an interior-point reference.
pub fn qcqp_instance(cp: ConstrainedProgram, seed: u64) -> Result<ZooInstance, ZooError> {
    let ip = interior_point(&cp).ok_or_else(|| ZooError::ConstructionFailure("interior-point solve failed".into()))?;
    if ip.kkt_residual > 1e-10 {
        return Err(ZooError::ConstructionFailure(format!("reference KKT residual {} exceeds 1e-10", ip.kkt_residual)));
    }
    let p = constrained::build_lagrangian(&cp)?;
    ZooInstance::assemble(
        Family::Qcqp,
        seed,
        p,
        Some(cp),
        ip.x,
        ip.lambda,
        ReferenceMethod::GenericSolver,
        Some(ip.kkt_residual),
    )
}

pub fn make(family: Family, seed: u64) -> Result<ZooInstance, ZooError> {
    match family {
        Family::BilinearQp => make_bilinear_qp(4, 3, seed),
        Family::FiniteSumQp => make_finite_sum_qp(4, 3, 50, seed),
        Family::NonbilinearEntropy => make_nonbilinear_entropy(4, 3, seed),
        Family::Qcqp => make_qcqp(3, 20, seed, 0.5),
    }
}

/// Exact minimizer of `½xᵀHx + qᵀx` over `[lower, upper]` for positive
/// definite `H`, by a primal active-set method.
pub fn box_qp(h: &Mat, q: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum St {
        Free,
        Lo,
        Hi,
        Fixed,
    }
    let d = q.len();
    let mut st: Vec<St> = (0..d).map(|i| if lower[i] == upper[i] { St::Fixed } else { St::Free }).collect();
    let mut x: Vec<f64> = (0..d).map(|i| 0.5 * (lower[i] + upper[i])).collect();
    let grad = |x: &[f64]| {
        let mut g = h.matvec(x);
        axpy(1.0, q, &mut g);
        g
    };
    let scale = 1.0 + norm_inf(q) + h.max_row_norm() * (norm_inf(lower).max(norm_inf(upper)));
    let tol = 1e-13 * scale;
    for _ in 0..(100 * (d + 1) * (d + 1)) {
        let free: Vec<usize> = (0..d).filter(|i| st[*i] == St::Free).collect();
        if !free.is_empty() {
            let g = grad(&x);
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h.get(free[a], free[b]));
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|i| -g[*i]));
            let p = match hff.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => hff.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(free.len())),
            };
            let mut alpha = 1.0;
            let mut block = None;
            for (j, &i) in free.iter().enumerate() {
                if p[j] > 0.0 {
                    let t = (upper[i] - x[i]) / p[j];
                    if t < alpha {
                        alpha = t;
                        block = Some((i, St::Hi));
                    }
                } else if p[j] < 0.0 {
                    let t = (lower[i] - x[i]) / p[j];
                    if t < alpha {
                        alpha = t;
                        block = Some((i, St::Lo));
                    }
                }
            }
            for (j, &i) in free.iter().enumerate() {
                x[i] = (x[i] + alpha * p[j]).clamp(lower[i], upper[i]);
            }
            if let Some((i, s)) = block {
                x[i] = if s == St::Hi { upper[i] } else { lower[i] };
                st[i] = s;
                continue;
            }
        }
        let g = grad(&x);
        let worst = (0..d)
            .filter_map(|i| match st[i] {
                St::Lo if g[i] < -tol => Some((i, -g[i])),
                St::Hi if g[i] > tol => Some((i, g[i])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, _)) => st[i] = St::Free,
            None => return x,
        }
    }
    x
}

#[derive(Clone, Debug)]
enum DualForm {
    /// `Λ = ℝ₊ⁿ`, linear coupling, `h ≡ 0`.
    Orthant,
    /// Centered Euclidean ball with DGF `½‖λ‖²`.
    Ball { radius: f64 },
    /// Unit simplex with entropy DGF and `h = ⟨w, λ⟩`.
    Entropy { w: Vec<f64> },
}

/// Closed-form or machine-precision inner solutions for box-constrained
/// quadratic saddle problems.
#[derive(Clone, Debug)]
pub struct ExactInner {
    p: SaddleProblem,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Diagonal of `(1/n) Σ b_diag`.
    b_bar: Vec<f64>,
    dual: DualForm,
}

impl ExactInner {
    pub fn new(p: &SaddleProblem) -> Option<Self> {
        let (lower, upper) = match p.primal_geom.set() {
            FeasibleSet::Box { lower, upper } if p.primal_geom.dgf_kind() == DgfKind::HalfSquaredEuclidean => {
                (lower.clone(), upper.clone())
            }
            _ => return None,
        };
        if matches!(p.g, ProxFn::WeightedL1 { .. }) {
            return None;
        }
        let dl = p.dim_lambda();
        let mut b_bar = vec![0.0; dl];
        for c in &p.coupling.components {
            if let Component::Bilinear { b_diag: Some(b), .. } = c {
                axpy(1.0 / p.n() as f64, b, &mut b_bar);
            }
        }
        let h_plain = matches!(p.h, ProxFn::Zero | ProxFn::IndicatorOfSet);
        let dual = match (p.dual_geom.set(), p.dual_geom.dgf_kind()) {
            (FeasibleSet::NonnegativeOrthant, DgfKind::HalfSquaredEuclidean)
                if h_plain && b_bar.iter().all(|v| *v == 0.0) =>
            {
                DualForm::Orthant
            }
            (FeasibleSet::Ball { center, radius }, DgfKind::HalfSquaredEuclidean)
                if h_plain && center.iter().all(|c| *c == 0.0) =>
            {
                DualForm::Ball { radius: *radius }
            }
            (FeasibleSet::Simplex { scale }, DgfKind::NegativeEntropy) if *scale == 1.0 => {
                let w = match &p.h {
                    ProxFn::Zero | ProxFn::IndicatorOfSet => vec![0.0; dl],
                    ProxFn::WeightedL1 { weights } => weights.clone(),
                    ProxFn::SeparableQuadratic { .. } => return None,
                };
                let pos = b_bar.iter().all(|v| *v > 0.0);
                let zero = b_bar.iter().all(|v| *v == 0.0);
                if !(pos || zero) {
                    return None;
                }
                DualForm::Entropy { w }
            }
            _ => return None,
        };
        Some(ExactInner { p: p.clone(), lower, upper, b_bar, dual })
    }

    /// Hessian and linear term of `Ŝᴾ(·, λ)`.
    pub fn primal_quadratic(&self, lambda: &[f64]) -> (Mat, Vec<f64>) {
        let p = &self.p;
        let mut h = p.f.q.clone();
        if let ProxFn::SeparableQuadratic { weights } = &p.g {
            for (i, w) in weights.iter().enumerate() {
                h.set(i, i, h.get(i, i) + w);
            }
        }
        let mut lin = p.f.c.clone();
        let w = 1.0 / p.n() as f64;
        for c in &p.coupling.components {
            match c {
                Component::Bilinear { a, .. } => axpy(w, &a.tmatvec(lambda), &mut lin),
                Component::LagrangianQuadratic { index, scale, q, a, .. } => {
                    let s = w * scale * lambda[*index];
                    h.add_scaled(s, q);
                    axpy(s, a, &mut lin);
                }
                Component::LagrangianAffine { index, scale, a, .. } => axpy(w * scale * lambda[*index], a, &mut lin),
            }
        }
        (h, lin)
    }

    /// `∇_λΦ(x, 0)`; the λ-independent part of the dual gradient.
    fn dual_linear(&self, x: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.p.dim_lambda()];
        let mut v = vec![0.0; self.p.dim_lambda()];
        let w = 1.0 / self.p.n() as f64;
        self.p.coupling.components.iter().for_each(|c| c.add_grad_lambda(x, &zero, w, &mut v));
        v
    }
}

impl AnalyticInner for ExactInner {
    fn primal_argmin(&self, lambda: &[f64]) -> Vec<f64> {
        let (h, lin) = self.primal_quadratic(lambda);
        box_qp(&h, &lin, &self.lower, &self.upper)
    }

    fn dual_argmax(&self, x: &[f64], rho: f64) -> Option<Vec<f64>> {
        let v = self.dual_linear(x);
        match &self.dual {
            DualForm::Orthant => {
                if rho > 0.0 {
                    Some(crate::gap::positive_part_step(&v, rho))
                } else if v.iter().any(|c| *c > 0.0) {
                    None
                } else {
                    Some(vec![0.0; v.len()])
                }
            }
            DualForm::Ball { radius } => Some(ball_argmax(&v, &self.b_bar, rho, *radius)),
            DualForm::Entropy { w } => {
                let vw: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
                Some(entropy_argmax(&vw, &self.b_bar, rho))
            }
        }
    }
}

/// argmax over `‖λ‖ ≤ R` of `⟨v,λ⟩ − ½Σ(bⱼ+ρ)λⱼ²`.
pub fn ball_argmax(v: &[f64], b: &[f64], rho: f64, radius: f64) -> Vec<f64> {
    let d: Vec<f64> = b.iter().map(|bj| bj + rho).collect();
    let nv = norm2(v);
    if nv == 0.0 {
        return vec![0.0; v.len()];
    }
    if d.iter().all(|x| *x == d[0]) {
        let den = d[0].max(nv / radius);
        return v.iter().map(|x| x / den).collect();
    }
    let lam = |theta: f64| -> Vec<f64> {
        v.iter().zip(&d).map(|(x, dj)| if *x == 0.0 { 0.0 } else { x / (dj + theta) }).collect()
    };
    if d.iter().all(|x| *x > 0.0) && norm2(&lam(0.0)) <= radius {
        return lam(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, nv / radius);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm2(&lam(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out = lam(hi);
    let n = norm2(&out);
    if n > radius {
        out.iter().map(|x| x * radius / n).collect()
    } else {
        out
    }
}

/// Root of `b·eᵗ + ρt = r` (ρ > 0) by Newton's method from the right.
fn entropy_log_coordinate(b: f64, rho: f64, r: f64) -> f64 {
    if b == 0.0 {
        return r / rho;
    }
    let mut t = if r >= 0.0 { (r / rho).min((1.0 + r / b).ln()) } else { r / rho };
    for _ in 0..200 {
        let e = t.exp();
        let phi = b * e + rho * t - r;
        let step = phi / (b * e + rho);
        if !(step > 0.0) {
            break;
        }
        t -= step;
        if step <= 1e-16 * t.abs().max(1.0) {
            break;
        }
    }
    t
}

/// argmax over the unit simplex of `⟨v,λ⟩ − ½Σbⱼλⱼ² − ρΣλⱼ ln λⱼ`, with `b`
/// all positive or all zero.
pub fn entropy_argmax(v: &[f64], b: &[f64], rho: f64) -> Vec<f64> {
    let d = v.len();
    let df = d as f64;
    let all_zero = b.iter().all(|x| *x == 0.0);
    if rho > 0.0 && all_zero {
        let z: Vec<f64> = v.iter().map(|x| x / rho).collect();
        let m = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        return e.iter().map(|x| x / s).collect();
    }
    if rho == 0.0 && all_zero {
        let j = (0..d).max_by(|a, c| v[*a].total_cmp(&v[*c])).unwrap_or(0);
        return (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
    }
    if rho > 0.0 {
        let lam = |tau: f64| -> Vec<f64> {
            (0..d).map(|j| entropy_log_coordinate(b[j], rho, v[j] - rho - tau).exp()).collect()
        };
        let at = |j: usize| v[j] - b[j] / df - rho * (1.0 - df.ln());
        let mut lo = (0..d).map(at).fold(f64::INFINITY, f64::min);
        let mut hi = (0..d).map(at).fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if lam(mid).iter().sum::<f64>() > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let l = lam(0.5 * (lo + hi));
        let s: f64 = l.iter().sum();
        return l.iter().map(|x| x / s).collect();
    }
    let lam = |tau: f64| -> Vec<f64> { (0..d).map(|j| ((v[j] - tau) / b[j]).max(0.0)).collect() };
    let mut lo = (0..d).map(|j| v[j] - b[j]).fold(f64::INFINITY, f64::min);
    let mut hi = v.iter().fold(f64::NEG_INFINITY, |a, x| a.max(*x));
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lam(mid).iter().sum::<f64>() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..d + 1 {
        let act: Vec<usize> = (0..d).filter(|j| v[*j] > tau).collect();
        if act.is_empty() {
            break;
        }
        let num: f64 = act.iter().map(|j| v[*j] / b[*j]).sum::<f64>() - 1.0;
        let den: f64 = act.iter().map(|j| 1.0 / b[*j]).sum();
        let next = num / den;
        if next == tau {
            break;
        }
        tau = next;
    }
    lam(tau)
}

/// Measured smoothness of `x*(·)` and `∇ψ̂ᴰ` plus the two-sided inexact
/// descent inequality, on random dual pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzAudit {
    pub pairs: usize,
    pub x_star_ratio: f64,
    /// `2L_λx/μ`.
    pub x_star_bound: f64,
    pub grad_ratio: f64,
    /// `L_D`.
    pub grad_bound: f64,
    /// Smallest value of the middle term; must be ≥ 0.
    pub descent_min: f64,
    /// Largest excess over `L_D‖λ−λ′‖² + 2γ`; must be ≤ 0.
    pub descent_excess: f64,
    /// Largest excess of `‖∇_λŜᴾ(x̃_γ,λ) − ∇ψ̂ᴰ(λ)‖*` over `L_λx√(2γ/μ)`.
    pub inexact_grad_excess: f64,
    pub triples: usize,
}

impl LipschitzAudit {
    pub fn passes(&self, tol: f64) -> bool {
        self.x_star_ratio <= self.x_star_bound
            && self.grad_ratio <= self.grad_bound
            && self.descent_min >= -tol
            && self.descent_excess <= tol
            && self.inexact_grad_excess <= tol
    }
}

impl ExactInner {
    /// `∇ψ̂ᴰ(λ) = ∇_λΦ(x*(λ), λ)`.
    pub fn dual_smooth_grad(&self, lambda: &[f64]) -> Vec<f64> {
        let x = self.primal_argmin(lambda);
        self.p.grad_lambda_phi_unchecked(&x, lambda, None, &crate::problem::OracleCounter::new())
    }

    /// A point of `𝒳` whose `Ŝᴾ(·,λ)` gap is exactly `gamma` (up to rounding),
    /// found along a random feasible ray from `x*(λ)`.
    pub fn inexact_primal_with_gap<R: Rng + ?Sized>(&self, lambda: &[f64], gamma: f64, rng: &mut R) -> Option<Vec<f64>> {
        let xs = self.primal_argmin(lambda);
        if gamma == 0.0 {
            return Some(xs);
        }
        let (h, lin) = self.primal_quadratic(lambda);
        let mut g = h.matvec(&xs);
        axpy(1.0, &lin, &mut g);
        for _ in 0..64 {
            let d: Vec<f64> = (0..xs.len()).map(|_| normal(rng)).collect();
            let mut t_max = f64::INFINITY;
            for j in 0..xs.len() {
                if d[j] > 0.0 {
                    t_max = t_max.min((self.upper[j] - xs[j]) / d[j]);
                } else if d[j] < 0.0 {
                    t_max = t_max.min((self.lower[j] - xs[j]) / d[j]);
                }
            }
            let (a, b) = (h.quad(&d), dot(&g, &d));
            if !(t_max > 0.0) || b < 0.0 || a <= 0.0 {
                continue;
            }
            let t = (-b + (b * b + 2.0 * a * gamma).sqrt()) / a;
            if t <= t_max {
                let mut x = xs.clone();
                axpy(t, &d, &mut x);
                return Some(x);
            }
        }
        None
    }
}

/// Checks the Lipschitz constants of `x*(·)` and `∇ψ̂ᴰ` on `pairs` random
/// dual pairs, and the inexact descent inequality on as many `(λ, λ′, γ)`
/// triples.
pub fn lipschitz_audit(inst: &ZooInstance, seed: u64, pairs: usize) -> LipschitzAudit {
    let p = &inst.problem;
    let inner = &inst.inner;
    let (l_lx, mu, l_d) = (p.coupling.l_lx(), p.f.mu, p.l_d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nul = crate::problem::OracleCounter::new();
    let mut out = LipschitzAudit {
        pairs,
        x_star_ratio: 0.0,
        x_star_bound: 2.0 * l_lx / mu,
        grad_ratio: 0.0,
        grad_bound: l_d,
        descent_min: f64::INFINITY,
        descent_excess: f64::NEG_INFINITY,
        inexact_grad_excess: f64::NEG_INFINITY,
        triples: 0,
    };
    let psi_hat = |l: &[f64]| p.s_hat_primal(&inner.primal_argmin(l), l);
    for _ in 0..pairs {
        let l1 = p.dual_geom.sample(&mut rng);
        let l2 = p.dual_geom.sample(&mut rng);
        let dl = p.dual_geom.norm(&crate::linalg::sub(&l1, &l2));
        if dl == 0.0 {
            continue;
        }
        let (x1, x2) = (inner.primal_argmin(&l1), inner.primal_argmin(&l2));
        out.x_star_ratio = out.x_star_ratio.max(p.primal_geom.norm(&crate::linalg::sub(&x1, &x2)) / dl);
        let g1 = p.grad_lambda_phi_unchecked(&x1, &l1, None, &nul);
        let g2 = p.grad_lambda_phi_unchecked(&x2, &l2, None, &nul);
        out.grad_ratio = out.grad_ratio.max(p.dual_geom.dual_norm(&crate::linalg::sub(&g1, &g2)) / dl);

        let gamma = 10f64.powf(-6.0 * rng.gen::<f64>());
        let Some(xt) = inner.inexact_primal_with_gap(&l1, gamma, &mut rng) else { continue };
        let gamma_eff = (p.s_hat_primal(&xt, &l1) - p.s_hat_primal(&x1, &l1)).max(gamma);
        let gt = p.grad_lambda_phi_unchecked(&xt, &l1, None, &nul);
        let mid = p.s_hat_primal(&xt, &l1) - psi_hat(&l2) + dot(&gt, &crate::linalg::sub(&l2, &l1));
        out.descent_min = out.descent_min.min(mid);
        out.descent_excess = out.descent_excess.max(mid - (l_d * dl * dl + 2.0 * gamma_eff));
        let gd = p.dual_geom.dual_norm(&crate::linalg::sub(&gt, &g1));
        out.inexact_grad_excess = out.inexact_grad_excess.max(gd - l_lx * (2.0 * gamma_eff / mu).sqrt());
        out.triples += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteriorPointSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Multipliers of `x ≤ upper` and `x ≥ lower`.
    pub box_upper: Vec<f64>,
    pub box_lower: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Primal-dual interior-point solve of a constrained program on a box with a
/// quadratic (or zero) regularizer.
pub fn interior_point(cp: &ConstrainedProgram) -> Option<InteriorPointSolution> {
    let (lower, upper) = match cp.x_geom.set() {
        FeasibleSet::Box { lower, upper } => (lower.clone(), upper.clone()),
        _ => return None,
    };
    if cp.x_geom.norm_kind() != NormKind::Euclidean {
        return None;
    }
    let d = cp.dim();
    let n = cp.n();
    let m = n + 2 * d;
    let mut h0 = cp.f.q.clone();
    match &cp.r {
        ProxFn::Zero | ProxFn::IndicatorOfSet => {}
        ProxFn::SeparableQuadratic { weights } => {
            for (i, w) in weights.iter().enumerate() {
                h0.set(i, i, h0.get(i, i) + w);
            }
        }
        ProxFn::WeightedL1 { .. } => return None,
    }
    let grad_obj = |x: &[f64]| {
        let mut g = h0.matvec(x);
        axpy(1.0, &cp.f.c, &mut g);
        g
    };
    let cons = |x: &[f64]| -> Vec<f64> {
        let mut c: Vec<f64> = cp.constraints.iter().map(|g| g.value(x)).collect();
        c.extend((0..d).map(|j| x[j] - upper[j]));
        c.extend((0..d).map(|j| lower[j] - x[j]));
        c
    };
    let jac = |x: &[f64]| -> DMatrix<f64> {
        let mut jm = DMatrix::zeros(m, d);
        for (i, g) in cp.constraints.iter().enumerate() {
            for (j, v) in g.grad(x).into_iter().enumerate() {
                jm[(i, j)] = v;
            }
        }
        for j in 0..d {
            jm[(n + j, j)] = 1.0;
            jm[(n + d + j, j)] = -1.0;
        }
        jm
    };
    let mut x = cp.slater_point.clone();
    let c0 = cons(&x);
    if c0.iter().any(|v| *v >= 0.0) {
        return None;
    }
    let mut s: Vec<f64> = c0.iter().map(|v| -v).collect();
    let mut z = vec![1.0; m];
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it;
        let c = cons(&x);
        let jm = jac(&x);
        let mut rd = grad_obj(&x);
        for (r, v) in rd.iter_mut().zip((jm.transpose() * DVector::from_vec(z.clone())).iter()) {
            *r += v;
        }
        let rp: Vec<f64> = c.iter().zip(&s).map(|(a, b)| a + b).collect();
        let mu = dot(&s, &z) / m as f64;
        if norm_inf(&rd) <= 1e-13 && norm_inf(&rp) <= 1e-14 && mu <= 1e-16 {
            break;
        }
        let sigma = if mu > 1e-8 { 0.1 } else { 0.01 };
        let rc: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b - sigma * mu).collect();
        let mut hm = h0.to_nalgebra();
        for (i, g) in cp.constraints.iter().enumerate() {
            if let Some(q) = &g.data.q {
                hm += q.to_nalgebra() * z[i];
            }
        }
        let wdiag = DVector::from_iterator(m, (0..m).map(|i| z[i] / s[i]));
        let jt = jm.transpose();
        let mut jw = jm.clone();
        for i in 0..m {
            for j in 0..d {
                jw[(i, j)] *= wdiag[i];
            }
        }
        let mat = &hm + &jt * &jw;
        let t = DVector::from_iterator(m, (0..m).map(|i| (-rc[i] + z[i] * rp[i]) / s[i]));
        let rhs = -DVector::from_vec(rd.clone()) - &jt * t;
        let dx = match mat.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => mat.lu().solve(&rhs)?,
        };
        let jdx = &jm * &dx;
        let ds: Vec<f64> = (0..m).map(|i| -rp[i] - jdx[i]).collect();
        let dz: Vec<f64> = (0..m).map(|i| (-rc[i] - z[i] * ds[i]) / s[i]).collect();
        let frac = 0.995;
        let mut alpha = 1.0f64;
        for i in 0..m {
            if ds[i] < 0.0 {
                alpha = alpha.min(-frac * s[i] / ds[i]);
            }
            if dz[i] < 0.0 {
                alpha = alpha.min(-frac * z[i] / dz[i]);
            }
        }
        for j in 0..d {
            x[j] += alpha * dx[j];
        }
        for i in 0..m {
            s[i] += alpha * ds[i];
            z[i] += alpha * dz[i];
        }
    }
    let lambda = z[..n].to_vec();
    let box_upper = z[n..n + d].to_vec();
    let box_lower = z[n + d..].to_vec();
    let kkt_residual = qcqp_kkt_residual(cp, &x, &lambda, &box_upper, &box_lower);
    Some(InteriorPointSolution { x, lambda, box_upper, box_lower, iterations, kkt_residual })
}

/// Max of stationarity, primal infeasibility and complementarity residuals.
pub fn qcqp_kkt_residual(cp: &ConstrainedProgram, x: &[f64], lambda: &[f64], nu_u: &[f64], nu_l: &[f64]) -> f64 {
    let (lower, upper) = match cp.x_geom.set() {
        FeasibleSet::Box { lower, upper } => (lower, upper),
        _ => return f64::INFINITY,
    };
    let mut st = cp.f.grad(x);
    if let ProxFn::SeparableQuadratic { weights } = &cp.r {
        for (i, w) in weights.iter().enumerate() {
            st[i] += w * x[i];
        }
    }
    for (g, l) in cp.constraints.iter().zip(lambda) {
        axpy(*l, &g.grad(x), &mut st);
    }
    for j in 0..x.len() {
        st[j] += nu_u[j] - nu_l[j];
    }
    let mut r = norm_inf(&st);
    for (g, l) in cp.constraints.iter().zip(lambda) {
        let v = g.value(x);
        r = r.max(v.max(0.0)).max((l * v).abs()).max((-l).max(0.0));
    }
    for j in 0..x.len() {
        r = r
            .max((x[j] - upper[j]).max(0.0))
            .max((lower[j] - x[j]).max(0.0))
            .max((nu_u[j] * (x[j] - upper[j])).abs())
            .max((nu_l[j] * (lower[j] - x[j])).abs());
    }
    r
}
