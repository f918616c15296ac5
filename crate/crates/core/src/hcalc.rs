//! Horizontal calculus on a [`GroupSpec`].
//!
//! Vector fields are applied to scalar fields either through an exact
//! Euclidean gradient (when the field carries one) or by second-order central
//! differences. Quantities that only involve the half-space distance
//! `dist(x) = <x, nu> - d` are polynomial in the coordinates and have exact
//! counterparts in [`DistanceCalculus`].
//!
//! The inner product is the plain coordinate inner product throughout, which is
//! what the angle function and distance formulas use.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::group::{GroupError, GroupKind, GroupSpec};
use crate::polyfield::Polynomial;

/// Default finite-difference step before scaling by `max(1, |x|_inf)`.
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CalcError {
    #[error("horizontal index {index} out of range 1..={n}")]
    FieldIndex { index: usize, n: usize },
    #[error("exponent p must exceed 1, got {0}")]
    InvalidExponent(f64),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("invalid half-space: {0}")]
    InvalidHalfSpace(String),
    #[error("horizontal gradient of the distance vanishes at {0:?}; pairing undefined")]
    DegenerateGradient(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// `G^+ = { x : <x, nu> > d }` with `nu` normalized to unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    normal: Vec<f64>,
    offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self, CalcError> {
        if normal.is_empty() || normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(CalcError::InvalidHalfSpace(format!(
                "normal {normal:?} and offset {offset} must be finite and nonempty"
            )));
        }
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CalcError::InvalidHalfSpace("zero normal".into()));
        }
        Ok(HalfSpace {
            normal: normal.iter().map(|v| v / norm).collect(),
            offset,
        })
    }

    /// `nu = (0, ..., 0, 1)`, `d = 0`.
    pub fn t_axis(dim: usize) -> Self {
        let mut normal = vec![0.0; dim];
        normal[dim - 1] = 1.0;
        HalfSpace {
            normal,
            offset: 0.0,
        }
    }

    /// `nu = (1, 0, ..., 0)`, `d = 0`.
    pub fn x1_axis(dim: usize) -> Self {
        let mut normal = vec![0.0; dim];
        normal[0] = 1.0;
        HalfSpace {
            normal,
            offset: 0.0,
        }
    }

    pub fn preset(name: &str, dim: usize) -> Option<Self> {
        match name {
            "t-axis" => Some(Self::t_axis(dim)),
            "x1-axis" => Some(Self::x1_axis(dim)),
            _ => None,
        }
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// `dist(x, dG^+) = <x, nu> - d`; negative outside the half-space.
    pub fn distance(&self, x: &[f64]) -> f64 {
        dot(x, &self.normal) - self.offset
    }

    /// Nearest boundary point to the origin, `d * nu`.
    pub fn foot_of_origin(&self) -> Vec<f64> {
        self.normal.iter().map(|v| v * self.offset).collect()
    }

    pub fn check(&self, spec: &GroupSpec) -> Result<(), CalcError> {
        if self.dim() != spec.total_dim() {
            return Err(CalcError::DimensionMismatch {
                expected: spec.total_dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        AxisBox { lo, hi }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        AxisBox::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn corners(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        self.hi[i]
                    } else {
                        self.lo[i]
                    }
                })
                .collect()
        })
    }
}

pub type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes the full Euclidean gradient at the point into the output slice.
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A real function on the group, zero outside its support box.
#[derive(Clone)]
pub struct ScalarField {
    eval: Evaluator,
    grad: Option<GradientFn>,
    support: AxisBox,
    id: String,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("id", &self.id)
            .field("support", &self.support)
            .field("exact_grad", &self.grad.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new(
        id: impl Into<String>,
        support: AxisBox,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            eval: Arc::new(eval),
            grad: None,
            support,
            id: id.into(),
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn support(&self) -> &AxisBox {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn has_exact_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub(crate) fn gradient_fn(&self) -> Option<&GradientFn> {
        self.grad.as_ref()
    }

    /// Full Euclidean gradient: exact when available, central differences otherwise.
    pub fn gradient(&self, x: &[f64], h: f64, out: &mut [f64]) {
        match &self.grad {
            Some(g) => g(x, out),
            None => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = self.partial_fd(x, j, h);
                }
            }
        }
    }

    pub fn partial_fd(&self, x: &[f64], j: usize, h: f64) -> f64 {
        let step = scaled_step(h, x);
        let mut y = x.to_vec();
        y[j] = x[j] + step;
        let plus = self.value(&y);
        y[j] = x[j] - step;
        let minus = self.value(&y);
        (plus - minus) / (2.0 * step)
    }

    /// Spot-checks that the field vanishes just outside each face of its support box.
    pub fn vanishes_outside_support(&self) -> bool {
        let n = self.dim();
        let center: Vec<f64> = self
            .support
            .lo
            .iter()
            .zip(&self.support.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        (0..n).all(|i| {
            let width = (self.support.hi[i] - self.support.lo[i]).max(1e-12);
            let mut lo = center.clone();
            lo[i] = self.support.lo[i] - 1e-3 * width;
            let mut hi = center.clone();
            hi[i] = self.support.hi[i] + 1e-3 * width;
            self.value(&lo) == 0.0 && self.value(&hi) == 0.0
        })
    }
}

/// Step `h * max(1, |x|_inf)`.
pub fn scaled_step(h: f64, x: &[f64]) -> f64 {
    h * x.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn check_field_index(spec: &GroupSpec, k: usize) -> Result<(), CalcError> {
    let n = spec.horizontal_dim();
    if k < 1 || k > n {
        return Err(CalcError::FieldIndex { index: k, n });
    }
    Ok(())
}

fn check_step(h: f64) -> Result<(), CalcError> {
    if !(h > 0.0) {
        return Err(CalcError::InvalidStep(h));
    }
    Ok(())
}

/// `X_k f(x)` with a 1-based horizontal index `k`.
pub fn apply_field(
    spec: &GroupSpec,
    k: usize,
    f: &ScalarField,
    x: &[f64],
    h: f64,
) -> Result<f64, CalcError> {
    check_field_index(spec, k)?;
    check_step(h)?;
    spec.check_point(x)?;
    Ok(apply_field_unchecked(spec, k - 1, f, x, h))
}

fn apply_field_unchecked(spec: &GroupSpec, k: usize, f: &ScalarField, x: &[f64], h: f64) -> f64 {
    let n1 = spec.horizontal_dim();
    let higher = spec.higher_coefficients(k);
    if let Some(g) = f.gradient_fn() {
        let mut grad = vec![0.0; x.len()];
        g(x, &mut grad);
        return combine(k, higher, x, &grad, n1);
    }
    let mut acc = f.partial_fd(x, k, h);
    for (j, a) in higher.iter().enumerate() {
        if a.is_zero() {
            continue;
        }
        let c = a.eval_unchecked(x);
        if c != 0.0 {
            acc += c * f.partial_fd(x, n1 + j, h);
        }
    }
    acc
}

fn combine(k: usize, higher: &[Polynomial], x: &[f64], grad: &[f64], n1: usize) -> f64 {
    higher
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.is_zero())
        .fold(grad[k], |acc, (j, a)| {
            acc + a.eval_unchecked(x) * grad[n1 + j]
        })
}

/// `(X_1 f, ..., X_N f)(x)`.
pub fn horizontal_gradient(
    spec: &GroupSpec,
    f: &ScalarField,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, CalcError> {
    check_step(h)?;
    spec.check_point(x)?;
    Ok(horizontal_gradient_unchecked(spec, f, x, h))
}

pub(crate) fn horizontal_gradient_unchecked(
    spec: &GroupSpec,
    f: &ScalarField,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let n1 = spec.horizontal_dim();
    if let Some(g) = f.gradient_fn() {
        let mut grad = vec![0.0; x.len()];
        g(x, &mut grad);
        return horizontal_from_gradient(spec, x, &grad);
    }
    (0..n1)
        .map(|k| apply_field_unchecked(spec, k, f, x, h))
        .collect()
}

/// Horizontal gradient from a full Euclidean gradient.
pub fn horizontal_from_gradient(spec: &GroupSpec, x: &[f64], grad: &[f64]) -> Vec<f64> {
    let n1 = spec.horizontal_dim();
    (0..n1)
        .map(|k| combine(k, spec.higher_coefficients(k), x, grad, n1))
        .collect()
}

pub fn boundary_distance(hs: &HalfSpace, x: &[f64]) -> f64 {
    hs.distance(x)
}

/// `<X_i(x), nu> = nu'_i + sum a_{i,m}^{(l)}(x) nu_m^{(l)}` for every horizontal `i`.
pub fn field_normal_pairings(spec: &GroupSpec, hs: &HalfSpace, x: &[f64]) -> Vec<f64> {
    let n1 = spec.horizontal_dim();
    let nu = hs.normal();
    (0..n1)
        .map(|i| {
            spec.higher_coefficients(i)
                .iter()
                .enumerate()
                .fold(nu[i], |acc, (j, a)| acc + a.eval_unchecked(x) * nu[n1 + j])
        })
        .collect()
}

/// Angle function `W(x) = (sum_i <X_i(x), nu>^2)^{1/2}`.
pub fn angle_function(spec: &GroupSpec, hs: &HalfSpace, x: &[f64]) -> f64 {
    field_normal_pairings(spec, hs, x)
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// The linear field `x -> <x, nu> - d` on the given support.
pub fn distance_field(hs: &HalfSpace, support: AxisBox, exact: bool) -> ScalarField {
    let h1 = hs.clone();
    let f = ScalarField::new("distance", support, move |x| h1.distance(x));
    if exact {
        let nu = hs.normal().to_vec();
        f.with_gradient(move |_, out| out.copy_from_slice(&nu))
    } else {
        f
    }
}

/// `max_i |<X_i(x), nu> - X_i <x, nu>|` with the right side by central differences.
pub fn identity_xi_pairing(
    spec: &GroupSpec,
    hs: &HalfSpace,
    x: &[f64],
    h: f64,
) -> Result<f64, CalcError> {
    identity_xi_pairing_with(spec, hs, x, h, false)
}

pub fn identity_xi_pairing_with(
    spec: &GroupSpec,
    hs: &HalfSpace,
    x: &[f64],
    h: f64,
    exact_gradient: bool,
) -> Result<f64, CalcError> {
    hs.check(spec)?;
    let dist = distance_field(
        hs,
        AxisBox::cube(x.len(), f64::NEG_INFINITY, f64::INFINITY),
        exact_gradient,
    );
    let fd = horizontal_gradient(spec, &dist, x, h)?;
    let exact = field_normal_pairings(spec, hs, x);
    Ok(exact
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `L_p f(x) = sum_i X_i(|grad_G f|^{p-2} X_i f)(x)` by nested central differences.
///
/// The inner gradient uses step `h`; the outer divergence uses `sqrt(h) * 1e-2`,
/// both scaled by `max(1, |x|_inf)`. For `p < 2` and a vanishing horizontal
/// gradient in the stencil the flux is singular and the result is NaN.
pub fn p_sub_laplacian(
    spec: &GroupSpec,
    f: &ScalarField,
    x: &[f64],
    p: f64,
    h: f64,
) -> Result<f64, CalcError> {
    if !(p > 1.0) {
        return Err(CalcError::InvalidExponent(p));
    }
    check_step(h)?;
    spec.check_point(x)?;
    let n1 = spec.horizontal_dim();
    let outer = scaled_step(h.sqrt() * 1e-2, x);
    let flux = |y: &[f64], i: usize| -> f64 {
        let g = horizontal_gradient_unchecked(spec, f, y, h);
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            return if p < 2.0 {
                f64::NAN
            } else if p == 2.0 {
                g[i]
            } else {
                0.0
            };
        }
        norm2.powf(0.5 * (p - 2.0)) * g[i]
    };
    let mut y = x.to_vec();
    let mut diff = |i: usize, j: usize| -> f64 {
        y[j] = x[j] + outer;
        let plus = flux(&y, i);
        y[j] = x[j] - outer;
        let minus = flux(&y, i);
        y[j] = x[j];
        (plus - minus) / (2.0 * outer)
    };
    let mut total = 0.0;
    for i in 0..n1 {
        total += diff(i, i);
        for (j, a) in spec.higher_coefficients(i).iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            let c = a.eval_unchecked(x);
            if c != 0.0 {
                total += c * diff(i, n1 + j);
            }
        }
    }
    Ok(total)
}

/// Exact polynomial data for the distance function of a half-space.
///
/// With `g_i = <X_i(x), nu>` (polynomials), `P = sum g_i^2 = W^2`,
/// `L = sum_i X_i g_i` and `T = sum_i g_i X_i P`, the p-sub-Laplacian of the
/// distance is `W^{p-2} L + (p-2)/2 W^{p-4} T`.
#[derive(Debug, Clone)]
pub struct DistanceCalculus {
    pub pairings: Vec<Polynomial>,
    pub angle_squared: Polynomial,
    pub sub_laplacian: Polynomial,
    pub transport: Polynomial,
}

impl DistanceCalculus {
    pub fn new(spec: &GroupSpec, hs: &HalfSpace) -> Result<Self, CalcError> {
        hs.check(spec)?;
        let total = spec.total_dim();
        let n1 = spec.horizontal_dim();
        let nu = hs.normal();
        let mut pairings = Vec::with_capacity(n1);
        for i in 0..n1 {
            let mut g = Polynomial::constant(total, nu[i]);
            for (j, a) in spec.higher_coefficients(i).iter().enumerate() {
                g = g
                    .checked_add(&a.scale(nu[n1 + j]))
                    .map_err(GroupError::from)?;
            }
            pairings.push(g);
        }
        let mut angle_squared = Polynomial::zero(total);
        let mut sub_laplacian = Polynomial::zero(total);
        for (i, g) in pairings.iter().enumerate() {
            angle_squared = angle_squared
                .checked_add(&g.checked_mul(g).map_err(GroupError::from)?)
                .map_err(GroupError::from)?;
            sub_laplacian = sub_laplacian
                .checked_add(&spec.apply_field_poly(i, g)?)
                .map_err(GroupError::from)?;
        }
        // T = 2 sum_{i<j} g_i g_j (X_i g_j + X_j g_i) + 2 sum_i g_i^2 X_i g_i,
        // so that antisymmetric contributions cancel exactly
        let mut d = Vec::with_capacity(n1);
        for i in 0..n1 {
            let row = pairings
                .iter()
                .map(|g| spec.apply_field_poly(i, g))
                .collect::<Result<Vec<_>, _>>()?;
            d.push(row);
        }
        let mut transport = Polynomial::zero(total);
        for i in 0..n1 {
            for j in i..n1 {
                let sym = if i == j {
                    d[i][i].clone()
                } else {
                    d[i][j].checked_add(&d[j][i]).map_err(GroupError::from)?
                };
                if sym.is_zero() {
                    continue;
                }
                let term = pairings[i]
                    .checked_mul(&pairings[j])
                    .and_then(|gg| gg.checked_mul(&sym))
                    .map_err(GroupError::from)?
                    .scale(2.0);
                transport = transport.checked_add(&term).map_err(GroupError::from)?;
            }
        }
        Ok(DistanceCalculus {
            pairings,
            angle_squared,
            sub_laplacian,
            transport,
        })
    }

    /// True when `L_p dist` vanishes identically for every `p`.
    pub fn is_p_harmonic(&self) -> bool {
        self.sub_laplacian.is_zero() && self.transport.is_zero()
    }

    /// Exact `L_p dist(x)`; NaN where `W = 0` and `p < 2`.
    pub fn p_sub_laplacian(&self, x: &[f64], p: f64) -> f64 {
        if self.is_p_harmonic() {
            return 0.0;
        }
        let w2 = self.angle_squared.eval_unchecked(x);
        let l = self.sub_laplacian.eval_unchecked(x);
        let t = self.transport.eval_unchecked(x);
        if w2 == 0.0 {
            return if p < 2.0 {
                f64::NAN
            } else if p == 2.0 {
                l
            } else {
                0.0
            };
        }
        w2.powf(0.5 * (p - 2.0)) * l + 0.5 * (p - 2.0) * w2.powf(0.5 * (p - 4.0)) * t
    }
}

/// `<grad_H dist, grad_H |grad_H dist|>` on `H^n` from the closed forms
/// `<X_i, nu> = nu_{x,i} + 2 y_i nu_t` and `<Y_i, nu> = nu_{y,i} - 2 x_i nu_t`.
pub fn orthogonality_identity(n: usize, hs: &HalfSpace, xi: &[f64]) -> Result<f64, CalcError> {
    let dim = 2 * n + 1;
    if xi.len() != dim || hs.dim() != dim {
        return Err(CalcError::DimensionMismatch {
            expected: dim,
            found: if xi.len() != dim { xi.len() } else { hs.dim() },
        });
    }
    let nu = hs.normal();
    let nu_t = nu[2 * n];
    let (x, y) = (&xi[..n], &xi[n..2 * n]);
    let gx: Vec<f64> = (0..n).map(|i| nu[i] + 2.0 * y[i] * nu_t).collect();
    let gy: Vec<f64> = (0..n).map(|i| nu[n + i] - 2.0 * x[i] * nu_t).collect();
    let norm = gx.iter().chain(&gy).map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(CalcError::DegenerateGradient(xi.to_vec()));
    }
    // X_i |g| = (1/|g|) sum_j g_j X_i g_j; only X_i g_{y,i} = -2 nu_t and Y_i g_{x,i} = 2 nu_t survive
    let pairing: f64 = (0..n)
        .map(|i| {
            let xi_norm = gy[i] * (-2.0 * nu_t) / norm;
            let yi_norm = gx[i] * (2.0 * nu_t) / norm;
            gx[i] * xi_norm + gy[i] * yi_norm
        })
        .sum();
    Ok(pairing)
}

/// Returns `n` when the group is `H^n`.
pub fn heisenberg_rank(spec: &GroupSpec) -> Option<usize> {
    match spec.kind() {
        GroupKind::Heisenberg { n } => Some(n),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn everywhere(dim: usize) -> AxisBox {
        AxisBox::cube(dim, f64::NEG_INFINITY, f64::INFINITY)
    }

    fn coord(dim: usize, j: usize) -> ScalarField {
        ScalarField::new(format!("x{j}"), everywhere(dim), move |x| x[j])
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> HalfSpace {
        let nu: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        HalfSpace::new(nu, rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn half_space_normalizes() {
        let hs = HalfSpace::new(vec![3.0, 0.0, 4.0], 1.0).unwrap();
        let norm: f64 = hs.normal().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(HalfSpace::new(vec![0.0, 0.0], 0.0).is_err());
        assert!(HalfSpace::new(vec![f64::NAN, 1.0], 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(HalfSpace::t_axis(3).distance(&[5.0, -3.0, 2.0]), 2.0);
        assert_eq!(HalfSpace::t_axis(3).distance(&[1.0, 1.0, 0.0]), 0.0);
        let hs = HalfSpace::new(vec![1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(boundary_distance(&hs, &[3.0, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn apply_field_examples() {
        let h1 = GroupSpec::heisenberg(1).unwrap();
        let t = coord(3, 2);
        let x = coord(3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v = apply_field(&h1, 1, &t, &p, DEFAULT_STEP).unwrap();
            assert!((v - 2.0 * p[1]).abs() < 1e-8);
            assert!((apply_field(&h1, 1, &x, &p, DEFAULT_STEP).unwrap() - 1.0).abs() < 1e-9);
            assert!(apply_field(&h1, 2, &x, &p, DEFAULT_STEP).unwrap().abs() < 1e-9);
        }
        let r3 = GroupSpec::abelian(3).unwrap();
        let sq = ScalarField::new("x^2", everywhere(3), |x| x[0] * x[0]);
        assert!(
            (apply_field(&r3, 1, &sq, &[1.0, 0.0, 0.0], DEFAULT_STEP).unwrap() - 2.0).abs() < 1e-8
        );
        assert!(matches!(
            apply_field(&r3, 4, &sq, &[1.0, 0.0, 0.0], DEFAULT_STEP),
            Err(CalcError::FieldIndex { .. })
        ));
        assert!(apply_field(&r3, 0, &sq, &[1.0, 0.0, 0.0], DEFAULT_STEP).is_err());
    }

    #[test]
    fn horizontal_gradient_examples() {
        let h1 = GroupSpec::heisenberg(1).unwrap();
        let p = [0.7, -1.3, 2.2];
        let g = horizontal_gradient(&h1, &coord(3, 2), &p, DEFAULT_STEP).unwrap();
        assert!((g[0] - 2.0 * p[1]).abs() < 1e-8 && (g[1] + 2.0 * p[0]).abs() < 1e-8);

        let c = ScalarField::new("const", everywhere(3), |_| 4.0);
        assert!(horizontal_gradient(&h1, &c, &p, DEFAULT_STEP)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let dist = distance_field(&HalfSpace::t_axis(3), everywhere(3), true);
        let g = horizontal_gradient(&h1, &dist, &p, DEFAULT_STEP).unwrap();
        assert_eq!(g, vec![2.0 * p[1], -2.0 * p[0]]);
        let w2 = g[0] * g[0] + g[1] * g[1];
        assert!((w2 - 4.0 * (p[0] * p[0] + p[1] * p[1])).abs() < 1e-12);
    }

    #[test]
    fn angle_function_examples() {
        let h1 = GroupSpec::heisenberg(1).unwrap();
        let w = angle_function(&h1, &HalfSpace::t_axis(3), &[1.0, 1.0, 5.0]);
        assert!((w - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        for n in 1..=3 {
            let hn = GroupSpec::heisenberg(n).unwrap();
            let hs = HalfSpace::x1_axis(2 * n + 1);
            assert_eq!(angle_function(&hn, &hs, &vec![0.4; 2 * n + 1]), 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r4 = GroupSpec::abelian(4).unwrap();
        for _ in 0..10 {
            let hs = random_unit(&mut rng, 4);
            let w = angle_function(&r4, &hs, &[0.1, 2.0, -3.0, 0.5]);
            assert!((w - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn angle_matches_gradient_norm_of_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=3 {
            let hn = GroupSpec::heisenberg(n).unwrap();
            let dim = 2 * n + 1;
            for _ in 0..50 {
                let hs = random_unit(&mut rng, dim);
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let dist = distance_field(&hs, everywhere(dim), true);
                let g = horizontal_gradient(&hn, &dist, &x, DEFAULT_STEP).unwrap();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let w = angle_function(&hn, &hs, &x);
                assert!((norm - w).abs() < 1e-12 * (1.0 + w));
            }
        }
    }

    #[test]
    fn pairing_identity_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h1 = GroupSpec::heisenberg(1).unwrap();
        for _ in 0..200 {
            let hs = random_unit(&mut rng, 3);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(identity_xi_pairing(&h1, &hs, &x, 1e-4).unwrap() < 1e-7);
            assert!(identity_xi_pairing_with(&h1, &hs, &x, 1e-4, true).unwrap() < 1e-14);
        }
        let r3 = GroupSpec::abelian(3).unwrap();
        let hs = random_unit(&mut rng, 3);
        assert!(identity_xi_pairing(&r3, &hs, &[0.3, 0.2, 0.1], 1e-4).unwrap() < 1e-10);
    }

    #[test]
    fn p_sub_laplacian_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=2 {
            let hn = GroupSpec::heisenberg(n).unwrap();
            let dim = 2 * n + 1;
            for &p in &[1.5, 2.0, 3.0, 4.5] {
                for _ in 0..20 {
                    let hs = random_unit(&mut rng, dim);
                    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let dist = distance_field(&hs, everywhere(dim), false);
                    let v = p_sub_laplacian(&hn, &dist, &x, p, DEFAULT_STEP).unwrap();
                    assert!(v.abs() < 1e-4, "p={p}, value {v}");
                }
            }
        }
        let r3 = GroupSpec::abelian(3).unwrap();
        let f = ScalarField::new("x^2+y^2", everywhere(3), |x| x[0] * x[0] + x[1] * x[1]);
        let v = p_sub_laplacian(&r3, &f, &[0.3, -0.5, 1.0], 2.0, DEFAULT_STEP).unwrap();
        assert!((v - 4.0).abs() < 1e-4);
        let hs = HalfSpace::new(vec![1.0, 2.0, -2.0], 0.5).unwrap();
        let lin = distance_field(&hs, everywhere(3), false);
        for p in [1.5, 2.0, 3.0] {
            assert!(
                p_sub_laplacian(&r3, &lin, &[0.1, 0.2, 0.3], p, DEFAULT_STEP)
                    .unwrap()
                    .abs()
                    < 1e-6
            );
        }
        assert!(matches!(
            p_sub_laplacian(&r3, &lin, &[0.0; 3], 1.0, DEFAULT_STEP),
            Err(CalcError::InvalidExponent(_))
        ));
        // critical point of x^2 + y^2 with p < 2: singular flux
        let v = p_sub_laplacian(&r3, &f, &[0.0, 0.0, 0.0], 1.5, DEFAULT_STEP).unwrap();
        assert!(!v.is_finite() || v.abs() > 1e3);
    }

    #[test]
    fn singular_flux_is_flagged() {
        // constant field: every stencil point has a zero gradient
        let r2 = GroupSpec::abelian(2).unwrap();
        let c = ScalarField::new("c", everywhere(2), |_| 1.0);
        assert!(p_sub_laplacian(&r2, &c, &[0.0, 0.0], 1.5, DEFAULT_STEP)
            .unwrap()
            .is_nan());
        assert_eq!(
            p_sub_laplacian(&r2, &c, &[0.0, 0.0], 3.0, DEFAULT_STEP).unwrap(),
            0.0
        );
    }

    #[test]
    fn exact_distance_calculus_on_heisenberg() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for n in 1..=3 {
            let hn = GroupSpec::heisenberg(n).unwrap();
            for _ in 0..10 {
                let hs = random_unit(&mut rng, 2 * n + 1);
                let calc = DistanceCalculus::new(&hn, &hs).unwrap();
                assert!(calc.sub_laplacian.is_zero());
                // symbolic oracle for the orthogonality pairing: sum_i g_i X_i |g|^2 == 0
                assert!(calc.transport.is_zero());
                assert!(calc.is_p_harmonic());
            }
        }
    }

    #[test]
    fn mixed_derivative_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 1..=3 {
            let hn = GroupSpec::heisenberg(n).unwrap();
            let hs = random_unit(&mut rng, 2 * n + 1);
            let nu_t = hs.normal()[2 * n];
            let calc = DistanceCalculus::new(&hn, &hs).unwrap();
            let dim = 2 * n + 1;
            for i in 0..n {
                let gx = &calc.pairings[i];
                let gy = &calc.pairings[n + i];
                assert!(hn.apply_field_poly(i, gx).unwrap().is_zero());
                assert!(hn.apply_field_poly(n + i, gy).unwrap().is_zero());
                assert_eq!(
                    hn.apply_field_poly(n + i, gx).unwrap(),
                    Polynomial::constant(dim, 2.0 * nu_t)
                );
                assert_eq!(
                    hn.apply_field_poly(i, gy).unwrap(),
                    Polynomial::constant(dim, -2.0 * nu_t)
                );
            }
        }
    }

    #[test]
    fn exact_distance_laplacian_on_custom_group() {
        // step-3 Engel-type table: X_1 = d1, X_2 = d2 + x1 d3 + x1^2/2 d4
        let n = 4;
        let zero = Polynomial::zero(n);
        let x1 = Polynomial::var(n, 0).unwrap();
        let half_x1_sq = Polynomial::monomial(vec![2, 0, 0, 0], 0.5);
        let g = GroupSpec::from_table(
            "engel",
            vec![2, 1, 1],
            vec![vec![zero.clone(), zero], vec![x1, half_x1_sq]],
        )
        .unwrap();
        let hs = HalfSpace::new(vec![0.0, 0.0, 0.0, 1.0], 0.0).unwrap();
        let calc = DistanceCalculus::new(&g, &hs).unwrap();
        // g_1 = 0 and g_2 = x1^2/2 has no x2 dependence
        assert!(calc.sub_laplacian.is_zero());
        assert!(calc.transport.is_zero());
        // with nu_1 != 0, T = nu_1 d/dx1 (g_2^2) no longer vanishes
        let hs2 = HalfSpace::new(vec![1.0, 0.0, 1.0, 1.0], 0.0).unwrap();
        let calc2 = DistanceCalculus::new(&g, &hs2).unwrap();
        assert!(calc2.sub_laplacian.is_zero());
        assert!(!calc2.transport.is_zero());
        let dist = distance_field(&hs2, everywhere(n), false);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for &p in &[2.0, 3.0] {
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
                let exact = calc2.p_sub_laplacian(&x, p);
                let fd = p_sub_laplacian(&g, &dist, &x, p, DEFAULT_STEP).unwrap();
                assert!(
                    (exact - fd).abs() < 1e-4 * (1.0 + exact.abs()),
                    "p={p} exact={exact} fd={fd}"
                );
            }
        }
    }

    #[test]
    fn orthogonality_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in 1..=2 {
            for _ in 0..500 {
                let hs = random_unit(&mut rng, 2 * n + 1);
                let x: Vec<f64> = (0..2 * n + 1)
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect();
                assert!(orthogonality_identity(n, &hs, &x).unwrap().abs() < 1e-12);
            }
        }
        let hs = HalfSpace::new(vec![0.6, 0.8, 0.0], 0.0).unwrap();
        assert_eq!(
            orthogonality_identity(1, &hs, &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        // nu = t-axis at the t-axis: grad_H dist = 0
        assert!(matches!(
            orthogonality_identity(1, &HalfSpace::t_axis(3), &[0.0, 0.0, 1.0]),
            Err(CalcError::DegenerateGradient(_))
        ));
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let h1 = GroupSpec::heisenberg(1).unwrap();
        let f = ScalarField::new("smooth", everywhere(3), |x| {
            (x[0] + 0.3 * x[2]).sin() * (0.5 * x[1]).exp()
        });
        let exact = f.clone().with_gradient(|x, out| {
            let s = (x[0] + 0.3 * x[2]).sin();
            let c = (x[0] + 0.3 * x[2]).cos();
            let e = (0.5 * x[1]).exp();
            out[0] = c * e;
            out[1] = 0.5 * s * e;
            out[2] = 0.3 * c * e;
        });
        let x = [0.4, -0.2, 0.9];
        let err = |h: f64| -> f64 {
            let a = horizontal_gradient(&h1, &f, &x, h).unwrap();
            let b = horizontal_gradient(&h1, &exact, &x, h).unwrap();
            a.iter()
                .zip(&b)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(2e-2), err(1e-2));
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn left_invariance_of_fields() {
        // X_i f(xi) = d/ds f(xi o (s e_i)) at s = 0
        let n = 2;
        let hn = GroupSpec::heisenberg(n).unwrap();
        let f = ScalarField::new("f", everywhere(5), |x| {
            (x[0] * x[3] + x[4]).cos() + x[1] * x[2] * x[4]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let xi: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in 0..2 * n {
                let s = 1e-4;
                let mut e = vec![0.0; 5];
                e[k] = s;
                let plus = f.value(&crate::group::h_multiply(&xi, &e, n).unwrap());
                e[k] = -s;
                let minus = f.value(&crate::group::h_multiply(&xi, &e, n).unwrap());
                let along = (plus - minus) / (2.0 * s);
                let field = apply_field(&hn, k + 1, &f, &xi, 1e-4).unwrap();
                assert!((along - field).abs() < 1e-6, "k={k} {along} vs {field}");
            }
        }
    }
}
