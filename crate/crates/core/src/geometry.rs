//! Normed-space geometry: feasible sets, distance generating functions and
//! closed-form Bregman proximal projections.
//!
//! Only pairings with an exact closed-form projection are accepted. The
//! Euclidean DGF pairs with the L2 norm; negative entropy pairs with the L1
//! norm on a simplex of scale at most 1 (where it is 1-strongly convex).

use crate::linalg::{all_finite, dot, norm1, norm2};
use crate::tol;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("incompatible pairing: {0}")]
    IncompatiblePair(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    #[error("invalid geometry: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "l2")]
    Euclidean,
    #[serde(rename = "l1")]
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgfKind {
    #[serde(rename = "sq_euclid")]
    HalfSquaredEuclidean,
    #[serde(rename = "neg_entropy")]
    NegativeEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Simplex { scale: f64 },
    #[serde(rename = "orthant")]
    NonnegativeOrthant,
    /// Euclidean ball centred at the origin intersected with ℝ₊ᵈ.
    #[serde(rename = "ball_orthant")]
    EuclideanBallIntersectOrthant { center: Vec<f64>, radius: f64 },
}

impl FeasibleSet {
    pub fn bounded(&self) -> bool {
        !matches!(self, FeasibleSet::NonnegativeOrthant)
    }
}

/// A real value that may be `+∞` for unbounded sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extent {
    Finite(f64),
    Unbounded,
}

impl Extent {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extent::Finite(v) => Some(v),
            Extent::Unbounded => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

/// Prox-friendly convex terms with closed-form Bregman projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxFn {
    #[default]
    Zero,
    /// Indicator of the geometry's own set; the projection already enforces it.
    #[serde(rename = "indicator")]
    IndicatorOfSet,
    /// `½ Σ wᵢ uᵢ²` with `wᵢ ≥ 0`.
    #[serde(rename = "sep_quad")]
    SeparableQuadratic { weights: Vec<f64> },
    /// `Σ wᵢ |uᵢ|` with `wᵢ ≥ 0`.
    WeightedL1 { weights: Vec<f64> },
}

impl ProxFn {
    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            ProxFn::Zero | ProxFn::IndicatorOfSet => 0.0,
            ProxFn::SeparableQuadratic { weights } => {
                0.5 * weights.iter().zip(u).map(|(w, x)| w * x * x).sum::<f64>()
            }
            ProxFn::WeightedL1 { weights } => weights.iter().zip(u).map(|(w, x)| w * x.abs()).sum(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), GeometryError> {
        match self {
            ProxFn::Zero | ProxFn::IndicatorOfSet => Ok(()),
            ProxFn::SeparableQuadratic { weights } | ProxFn::WeightedL1 { weights } => {
                if weights.len() != dim {
                    return Err(GeometryError::Invalid(format!(
                        "prox weights have length {}, expected {dim}",
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(GeometryError::Invalid("prox weights must be finite and nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    fn quad_weight(&self, i: usize) -> f64 {
        match self {
            ProxFn::SeparableQuadratic { weights } => weights[i],
            _ => 0.0,
        }
    }

    fn l1_weight(&self, i: usize) -> f64 {
        match self {
            ProxFn::WeightedL1 { weights } => weights[i],
            _ => 0.0,
        }
    }

    /// Common quadratic weight if the quadratic part is isotropic.
    fn isotropic_quad_weight(&self) -> Option<f64> {
        match self {
            ProxFn::SeparableQuadratic { weights } => {
                let w0 = weights.first().copied().unwrap_or(0.0);
                weights.iter().all(|w| *w == w0).then_some(w0)
            }
            _ => Some(0.0),
        }
    }

    fn has_l1(&self) -> bool {
        matches!(self, ProxFn::WeightedL1 { weights } if weights.iter().any(|w| *w != 0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GeometryRaw {
    dim: usize,
    norm: NormKind,
    set: FeasibleSet,
    dgf: DgfKind,
}

/// Immutable bundle of norm, feasible set and DGF for one variable block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRaw", into = "GeometryRaw")]
pub struct Geometry {
    dim: usize,
    norm: NormKind,
    set: FeasibleSet,
    dgf: DgfKind,
}

impl TryFrom<GeometryRaw> for Geometry {
    type Error = GeometryError;
    fn try_from(r: GeometryRaw) -> Result<Self, GeometryError> {
        Geometry::new(r.dim, r.norm, r.set, r.dgf)
    }
}

impl From<Geometry> for GeometryRaw {
    fn from(g: Geometry) -> Self {
        GeometryRaw { dim: g.dim, norm: g.norm, set: g.set, dgf: g.dgf }
    }
}

impl Geometry {
    pub fn new(dim: usize, norm: NormKind, set: FeasibleSet, dgf: DgfKind) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::Invalid("dimension must be positive".into()));
        }
        match &set {
            FeasibleSet::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(GeometryError::Invalid("box bounds must match the dimension".into()));
                }
                if !all_finite(lower) || !all_finite(upper) {
                    return Err(GeometryError::Invalid("box bounds must be finite".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(GeometryError::Invalid("box requires lower <= upper".into()));
                }
            }
            FeasibleSet::Ball { center, radius } | FeasibleSet::EuclideanBallIntersectOrthant { center, radius } => {
                if center.len() != dim || !all_finite(center) {
                    return Err(GeometryError::Invalid("ball center must be finite and match the dimension".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(GeometryError::Invalid("ball radius must be positive".into()));
                }
                if matches!(set, FeasibleSet::EuclideanBallIntersectOrthant { .. }) && center.iter().any(|c| *c != 0.0) {
                    return Err(GeometryError::IncompatiblePair(
                        "ball-orthant intersection has a closed-form projection only when centred at the origin".into(),
                    ));
                }
            }
            FeasibleSet::Simplex { scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(GeometryError::Invalid("simplex scale must be positive".into()));
                }
            }
            FeasibleSet::NonnegativeOrthant => {}
        }
        match (dgf, norm) {
            (DgfKind::HalfSquaredEuclidean, NormKind::Euclidean) => {}
            (DgfKind::NegativeEntropy, NormKind::L1) => match &set {
                FeasibleSet::Simplex { scale } if *scale <= 1.0 => {}
                _ => {
                    return Err(GeometryError::IncompatiblePair(
                        "negative entropy requires a simplex of scale at most 1".into(),
                    ))
                }
            },
            _ => {
                return Err(GeometryError::IncompatiblePair(format!("{dgf:?} cannot pair with the {norm:?} norm")));
            }
        }
        Ok(Geometry { dim, norm, set, dgf })
    }

    pub fn euclidean(dim: usize, set: FeasibleSet) -> Result<Self, GeometryError> {
        Self::new(dim, NormKind::Euclidean, set, DgfKind::HalfSquaredEuclidean)
    }

    pub fn entropy_simplex(dim: usize) -> Self {
        Self::new(dim, NormKind::L1, FeasibleSet::Simplex { scale: 1.0 }, DgfKind::NegativeEntropy)
            .expect("unit simplex with entropy is valid")
    }

    pub fn box_uniform(dim: usize, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        Self::euclidean(dim, FeasibleSet::Box { lower: vec![lo; dim], upper: vec![hi; dim] })
    }

    pub fn orthant(dim: usize) -> Self {
        Self::euclidean(dim, FeasibleSet::NonnegativeOrthant).expect("orthant is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn dgf_kind(&self) -> DgfKind {
        self.dgf
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        match self.norm {
            NormKind::Euclidean => norm2(u),
            NormKind::L1 => norm1(u),
        }
    }

    pub fn dual_norm(&self, u: &[f64]) -> f64 {
        match self.norm {
            NormKind::Euclidean => norm2(u),
            NormKind::L1 => crate::linalg::norm_inf(u),
        }
    }

    /// Membership test with absolute slack `tol`.
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        if u.len() != self.dim || !all_finite(u) {
            return false;
        }
        match &self.set {
            FeasibleSet::Box { lower, upper } => {
                u.iter().zip(lower.iter().zip(upper)).all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
            }
            FeasibleSet::Ball { center, radius } => norm2(&crate::linalg::sub(u, center)) <= radius + tol,
            FeasibleSet::Simplex { scale } => {
                u.iter().all(|x| *x >= -tol) && (u.iter().sum::<f64>() - scale).abs() <= tol * (self.dim as f64).max(1.0)
            }
            FeasibleSet::NonnegativeOrthant => u.iter().all(|x| *x >= -tol),
            FeasibleSet::EuclideanBallIntersectOrthant { radius, .. } => {
                u.iter().all(|x| *x >= -tol) && norm2(u) <= radius + tol
            }
        }
    }

    pub fn check_domain(&self, u: &[f64], tol: f64) -> Result<(), GeometryError> {
        if !all_finite(u) {
            return Err(GeometryError::NonFiniteInput);
        }
        if self.contains(u, tol) {
            Ok(())
        } else {
            Err(GeometryError::OutOfDomain(format!("point of length {} violates {:?}", u.len(), self.set)))
        }
    }

    fn floor_entropy(u: &[f64]) -> impl Iterator<Item = f64> + '_ {
        u.iter().map(|x| x.max(tol::ENTROPY_FLOOR))
    }

    /// ω(u), with `0·log 0 = 0`.
    pub fn dgf_value(&self, u: &[f64]) -> Result<f64, GeometryError> {
        self.check_domain(u, tol::DOMAIN)?;
        Ok(self.dgf_value_unchecked(u))
    }

    pub(crate) fn dgf_value_unchecked(&self, u: &[f64]) -> f64 {
        match self.dgf {
            DgfKind::HalfSquaredEuclidean => 0.5 * dot(u, u),
            DgfKind::NegativeEntropy => u.iter().map(|x| if *x > 0.0 { x * x.ln() } else { 0.0 }).sum(),
        }
    }

    /// ∇ω(u); entropy coordinates are floored before the logarithm.
    pub fn dgf_grad(&self, u: &[f64]) -> Vec<f64> {
        match self.dgf {
            DgfKind::HalfSquaredEuclidean => u.to_vec(),
            DgfKind::NegativeEntropy => Self::floor_entropy(u).map(|x| 1.0 + x.ln()).collect(),
        }
    }

    /// D_ω(u, u0) = ω(u) − ω(u0) − ⟨∇ω(u0), u − u0⟩.
    pub fn bregman_distance(&self, u: &[f64], u0: &[f64]) -> Result<f64, GeometryError> {
        self.check_domain(u, tol::DOMAIN)?;
        self.check_domain(u0, tol::DOMAIN)?;
        Ok(self.bregman_distance_unchecked(u, u0))
    }

    pub(crate) fn bregman_distance_unchecked(&self, u: &[f64], u0: &[f64]) -> f64 {
        match self.dgf {
            DgfKind::HalfSquaredEuclidean => 0.5 * u.iter().zip(u0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            DgfKind::NegativeEntropy => {
                let d: f64 = u
                    .iter()
                    .zip(Self::floor_entropy(u0))
                    .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() - a + b } else { b })
                    .sum();
                d.max(0.0)
            }
        }
    }

    /// max ‖u − u′‖ over the set in the configured norm.
    pub fn diameter(&self) -> Extent {
        let d = self.dim as f64;
        match (&self.set, self.norm) {
            (FeasibleSet::Box { lower, upper }, NormKind::Euclidean) => {
                Extent::Finite(norm2(&crate::linalg::sub(upper, lower)))
            }
            (FeasibleSet::Box { lower, upper }, NormKind::L1) => Extent::Finite(norm1(&crate::linalg::sub(upper, lower))),
            (FeasibleSet::Ball { radius, .. }, NormKind::Euclidean) => Extent::Finite(2.0 * radius),
            (FeasibleSet::Ball { radius, .. }, NormKind::L1) => Extent::Finite(2.0 * radius * d.sqrt()),
            (FeasibleSet::Simplex { scale }, norm) => {
                if self.dim == 1 {
                    Extent::Finite(0.0)
                } else if norm == NormKind::Euclidean {
                    Extent::Finite(scale * 2f64.sqrt())
                } else {
                    Extent::Finite(2.0 * scale)
                }
            }
            (FeasibleSet::NonnegativeOrthant, _) => Extent::Unbounded,
            (FeasibleSet::EuclideanBallIntersectOrthant { radius, .. }, NormKind::Euclidean) => {
                Extent::Finite(if self.dim == 1 { *radius } else { radius * 2f64.sqrt() })
            }
            (FeasibleSet::EuclideanBallIntersectOrthant { radius, .. }, NormKind::L1) => {
                let a = (self.dim / 2) as f64;
                let b = (self.dim - self.dim / 2) as f64;
                Extent::Finite(radius * (a.sqrt() + b.sqrt()))
            }
        }
    }

    /// B_{ω,U} = sup over the set of |ω(u)|.
    pub fn dgf_sup_abs(&self) -> Extent {
        match (&self.set, self.dgf) {
            (FeasibleSet::NonnegativeOrthant, _) => Extent::Unbounded,
            (FeasibleSet::Box { lower, upper }, _) => {
                Extent::Finite(0.5 * lower.iter().zip(upper).map(|(l, h)| (l * l).max(h * h)).sum::<f64>())
            }
            (FeasibleSet::Ball { center, radius }, _) => {
                let r = norm2(center) + radius;
                Extent::Finite(0.5 * r * r)
            }
            (FeasibleSet::EuclideanBallIntersectOrthant { radius, .. }, _) => Extent::Finite(0.5 * radius * radius),
            (FeasibleSet::Simplex { scale }, DgfKind::HalfSquaredEuclidean) => Extent::Finite(0.5 * scale * scale),
            (FeasibleSet::Simplex { scale }, DgfKind::NegativeEntropy) => {
                let vertex = (scale * scale.ln()).abs();
                let uniform = (scale * (scale / self.dim as f64).ln()).abs();
                Extent::Finite(vertex.max(uniform))
            }
        }
    }

    /// R(u0) = sup over the set of D_ω(u, u0).
    pub fn sup_bregman_from(&self, u0: &[f64]) -> Extent {
        match (&self.set, self.dgf) {
            (FeasibleSet::NonnegativeOrthant, _) => Extent::Unbounded,
            (FeasibleSet::Box { lower, upper }, _) => Extent::Finite(
                0.5 * u0
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(x, (l, h))| (x - l).powi(2).max((h - x).powi(2)))
                    .sum::<f64>(),
            ),
            (FeasibleSet::Ball { center, radius }, _) => {
                let r = norm2(&crate::linalg::sub(u0, center)) + radius;
                Extent::Finite(0.5 * r * r)
            }
            (FeasibleSet::EuclideanBallIntersectOrthant { radius, .. }, _) => {
                let m = u0.iter().fold(f64::INFINITY, |a, b| a.min(*b));
                Extent::Finite(0.5 * (dot(u0, u0) + (radius * radius - 2.0 * radius * m).max(0.0)))
            }
            (FeasibleSet::Simplex { scale }, DgfKind::HalfSquaredEuclidean) => Extent::Finite(
                (0..self.dim)
                    .map(|j| {
                        0.5 * u0
                            .iter()
                            .enumerate()
                            .map(|(i, x)| if i == j { (scale - x).powi(2) } else { x * x })
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max),
            ),
            (FeasibleSet::Simplex { scale }, DgfKind::NegativeEntropy) => {
                let m = Self::floor_entropy(u0).fold(f64::INFINITY, f64::min);
                Extent::Finite(scale * (scale / m).ln() - scale + u0.iter().sum::<f64>())
            }
        }
    }

    /// A deterministic point in the interior of the DGF domain.
    pub fn anchor(&self) -> Vec<f64> {
        match &self.set {
            FeasibleSet::Box { lower, upper } => lower.iter().zip(upper).map(|(l, h)| 0.5 * (l + h)).collect(),
            FeasibleSet::Ball { center, .. } => center.clone(),
            FeasibleSet::Simplex { scale } => vec![scale / self.dim as f64; self.dim],
            FeasibleSet::NonnegativeOrthant | FeasibleSet::EuclideanBallIntersectOrthant { .. } => vec![0.0; self.dim],
        }
    }

    /// Draws a point of the set. Unbounded orthants are sampled inside `[0, 5]ᵈ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        match &self.set {
            FeasibleSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, h)| l + (h - l) * rng.gen::<f64>()).collect()
            }
            FeasibleSet::Ball { center, radius } => {
                let dir = gaussian_direction(rng, d);
                let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
                center.iter().zip(&dir).map(|(c, u)| c + r * u).collect()
            }
            FeasibleSet::EuclideanBallIntersectOrthant { radius, .. } => {
                let dir = gaussian_direction(rng, d);
                let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
                dir.iter().map(|u| r * u.abs()).collect()
            }
            FeasibleSet::Simplex { scale } => {
                let e: Vec<f64> = (0..d).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|x| scale * x / s).collect()
            }
            FeasibleSet::NonnegativeOrthant => (0..d).map(|_| 5.0 * rng.gen::<f64>()).collect(),
        }
    }

    /// Unique minimizer of `prox(u) + ⟨v, u⟩ + ω(u)/alpha` over the set.
    pub fn bregman_project(&self, prox: &ProxFn, v: &[f64], alpha: f64) -> Result<Vec<f64>, GeometryError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(GeometryError::Invalid("alpha must be positive and finite".into()));
        }
        self.prox_step(prox, v, 1.0 / alpha)
    }

    /// Unique minimizer of `prox(u) + ⟨v, u⟩ + weight·ω(u)` over the set.
    pub fn prox_step(&self, prox: &ProxFn, v: &[f64], weight: f64) -> Result<Vec<f64>, GeometryError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GeometryError::Invalid("DGF weight must be positive and finite".into()));
        }
        if v.len() != self.dim {
            return Err(GeometryError::Invalid(format!("linear term has length {}, expected {}", v.len(), self.dim)));
        }
        if !all_finite(v) {
            return Err(GeometryError::NonFiniteInput);
        }
        prox.validate(self.dim)?;
        let inv = weight;
        match (self.dgf, &self.set) {
            (DgfKind::HalfSquaredEuclidean, FeasibleSet::Box { lower, upper }) => Ok((0..self.dim)
                .map(|i| scalar_prox(v[i], prox.l1_weight(i), prox.quad_weight(i) + inv).clamp(lower[i], upper[i]))
                .collect()),
            (DgfKind::HalfSquaredEuclidean, FeasibleSet::NonnegativeOrthant) => Ok((0..self.dim)
                .map(|i| scalar_prox(v[i], prox.l1_weight(i), prox.quad_weight(i) + inv).max(0.0))
                .collect()),
            (DgfKind::HalfSquaredEuclidean, FeasibleSet::Ball { center, radius }) => {
                if prox.has_l1() {
                    return Err(GeometryError::IncompatiblePair("weighted L1 on a ball has no closed form".into()));
                }
                let c = self.isotropic(prox)? + inv;
                let u0: Vec<f64> = v.iter().map(|x| -x / c).collect();
                Ok(project_ball(&u0, center, *radius))
            }
            (DgfKind::HalfSquaredEuclidean, FeasibleSet::EuclideanBallIntersectOrthant { radius, .. }) => {
                let c = self.isotropic(prox)? + inv;
                let u0: Vec<f64> = (0..self.dim).map(|i| (-(v[i] + prox.l1_weight(i)) / c).max(0.0)).collect();
                Ok(project_ball(&u0, &vec![0.0; self.dim], *radius))
            }
            (DgfKind::HalfSquaredEuclidean, FeasibleSet::Simplex { scale }) => {
                let c = self.isotropic(prox)? + inv;
                let u0: Vec<f64> = (0..self.dim).map(|i| -(v[i] + prox.l1_weight(i)) / c).collect();
                Ok(project_simplex(&u0, *scale))
            }
            (DgfKind::NegativeEntropy, FeasibleSet::Simplex { scale }) => {
                if matches!(prox, ProxFn::SeparableQuadratic { weights } if weights.iter().any(|w| *w != 0.0)) {
                    return Err(GeometryError::IncompatiblePair(
                        "separable quadratic with entropy has no closed form".into(),
                    ));
                }
                let z: Vec<f64> = (0..self.dim).map(|i| -(v[i] + prox.l1_weight(i)) / weight).collect();
                Ok(softmax_scaled(&z, *scale))
            }
            (DgfKind::NegativeEntropy, _) => {
                Err(GeometryError::IncompatiblePair("negative entropy is supported on simplices only".into()))
            }
        }
    }

    fn isotropic(&self, prox: &ProxFn) -> Result<f64, GeometryError> {
        prox.isotropic_quad_weight().ok_or_else(|| {
            GeometryError::IncompatiblePair("non-isotropic quadratic prox on this set has no closed form".into())
        })
    }
}

/// argmin over ℝ of `l1 |u| + v u + c u² / 2`.
fn scalar_prox(v: f64, l1: f64, c: f64) -> f64 {
    let s = if v > l1 {
        v - l1
    } else if v < -l1 {
        v + l1
    } else {
        return 0.0;
    };
    -s / c
}

fn gaussian_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d)
            .map(|_| {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = norm2(&g);
        if n > 1e-12 {
            return g.iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn project_ball(u: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let diff = crate::linalg::sub(u, center);
    let n = norm2(&diff);
    if n <= radius {
        u.to_vec()
    } else {
        center.iter().zip(&diff).map(|(c, d)| c + d * radius / n).collect()
    }
}

/// Euclidean projection onto `{u ≥ 0, Σu = scale}` by the sort-and-threshold rule.
pub(crate) fn project_simplex(u: &[f64], scale: f64) -> Vec<f64> {
    let mut s: Vec<f64> = u.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - scale) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    u.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `scale · softmax(z)`, floored away from zero.
pub(crate) fn softmax_scaled(z: &[f64], scale: f64) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| (scale * x / s).max(tol::ENTROPY_FLOOR)).collect()
}
