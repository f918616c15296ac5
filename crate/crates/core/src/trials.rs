//! Trial functions for the half-space inequalities.
//!
//! Every field produced here carries a closed-form gradient and a
//! deterministic identity string used in report provenance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::GroupSpec;
use crate::hcalc::{AxisBox, HalfSpace, ScalarField, DEFAULT_STEP};

#[derive(Debug, Error, PartialEq)]
pub enum TrialError {
    #[error("bump radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("anisotropy scales must be positive and match the dimension")]
    InvalidScales,
    #[error("exponent p must exceed 1, got {0}")]
    InvalidExponent(f64),
    #[error("sharpness parameter eps must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bump support reaches dist <= 0 (closest point at dist {0})")]
    NotInterior(f64),
    #[error("dilation factor must be positive, got {0}")]
    InvalidDilation(f64),
}

/// Mollifier `exp(-1/(1-s^2))` on the ellipsoid `s = |(x - c) / (r a)| < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Optional per-axis stretch `a_i`; the semi-axis along coordinate `i` is `radius * a_i`.
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
}

impl BumpSpec {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        BumpSpec {
            center,
            radius,
            scales: None,
        }
    }

    fn semi_axes(&self) -> Result<Vec<f64>, TrialError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(TrialError::InvalidRadius(self.radius));
        }
        match &self.scales {
            None => Ok(vec![self.radius; self.center.len()]),
            Some(a)
                if a.len() == self.center.len() && a.iter().all(|v| *v > 0.0 && v.is_finite()) =>
            {
                Ok(a.iter().map(|v| v * self.radius).collect())
            }
            Some(_) => Err(TrialError::InvalidScales),
        }
    }

    /// Smallest distance to the boundary over the closed support.
    pub fn min_distance(&self, hs: &HalfSpace) -> Result<f64, TrialError> {
        let axes = self.semi_axes()?;
        let reach = hs
            .normal()
            .iter()
            .zip(&axes)
            .map(|(n, a)| (n * a).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(hs.distance(&self.center) - reach)
    }

    /// Errors unless the support sits strictly inside `{dist > 0}`.
    pub fn require_interior(&self, hs: &HalfSpace) -> Result<(), TrialError> {
        let m = self.min_distance(hs)?;
        if m <= 0.0 {
            return Err(TrialError::NotInterior(m));
        }
        Ok(())
    }

    fn id(&self) -> String {
        match &self.scales {
            None => format!("bump(c={:?},r={})", self.center, self.radius),
            Some(a) => format!("bump(c={:?},r={},a={:?})", self.center, self.radius, a),
        }
    }
}

pub fn make_bump(spec: &BumpSpec) -> Result<ScalarField, TrialError> {
    let axes = spec.semi_axes()?;
    let c = spec.center.clone();
    let support = AxisBox::new(
        c.iter().zip(&axes).map(|(c, a)| c - a).collect(),
        c.iter().zip(&axes).map(|(c, a)| c + a).collect(),
    );
    let (c1, a1) = (c.clone(), axes.clone());
    let field = ScalarField::new(spec.id(), support, move |x| {
        let q = scaled_norm2(x, &c1, &a1);
        if q < 1.0 {
            (-1.0 / (1.0 - q)).exp()
        } else {
            0.0
        }
    });
    Ok(field.with_gradient(move |x, out| {
        let q = scaled_norm2(x, &c, &axes);
        if q >= 1.0 {
            out.fill(0.0);
            return;
        }
        let one_minus = 1.0 - q;
        let f = (-1.0 / one_minus).exp();
        // d/dq exp(-1/(1-q)) = -f / (1-q)^2
        let dfdq = -f / (one_minus * one_minus);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dfdq * 2.0 * (x[i] - c[i]) / (axes[i] * axes[i]);
        }
    }))
}

fn scaled_norm2(x: &[f64], c: &[f64], axes: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .zip(axes)
        .map(|((x, c), a)| ((x - c) / a).powi(2))
        .sum()
}

/// Multiplies `f` by `dist^power` on `{dist > 0}`; zero elsewhere.
fn distance_power_times(f: &ScalarField, hs: &HalfSpace, power: f64, id: String) -> ScalarField {
    let (g, h) = (f.clone(), hs.clone());
    let field = ScalarField::new(id, f.support().clone(), move |x| {
        let d = h.distance(x);
        if d > 0.0 {
            d.powf(power) * g.value(x)
        } else {
            0.0
        }
    });
    if !f.has_exact_gradient() {
        return field;
    }
    let (g, h) = (f.clone(), hs.clone());
    field.with_gradient(move |x, out| {
        let d = h.distance(x);
        if d <= 0.0 {
            out.fill(0.0);
            return;
        }
        g.gradient(x, 0.0, out);
        let dp = d.powf(power);
        let v = g.value(x);
        let radial = power * d.powf(power - 1.0) * v;
        for (o, n) in out.iter_mut().zip(h.normal()) {
            *o = dp * *o + radial * n;
        }
    })
}

/// `u_lambda(x) = u(delta_lambda x)` for a group with the given coordinate strata.
pub fn dilate_field(
    u: &ScalarField,
    spec: &GroupSpec,
    lambda: f64,
) -> Result<ScalarField, TrialError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(TrialError::InvalidDilation(lambda));
    }
    if u.dim() != spec.total_dim() {
        return Err(TrialError::DimensionMismatch {
            expected: spec.total_dim(),
            found: u.dim(),
        });
    }
    let weights: Vec<f64> = spec
        .coordinate_strata()
        .iter()
        .map(|&l| lambda.powi(l as i32))
        .collect();
    let b = u.support();
    let support = AxisBox::new(
        b.lo.iter().zip(&weights).map(|(v, w)| v / w).collect(),
        b.hi.iter().zip(&weights).map(|(v, w)| v / w).collect(),
    );
    let (g, w) = (u.clone(), weights.clone());
    let field = ScalarField::new(format!("dilate[{lambda}]({})", u.id()), support, move |x| {
        let y: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        g.value(&y)
    });
    let g = u.clone();
    Ok(field.with_gradient(move |x, out| {
        let y: Vec<f64> = x.iter().zip(&weights).map(|(a, b)| a * b).collect();
        g.gradient(&y, DEFAULT_STEP, out);
        out.iter_mut().zip(&weights).for_each(|(o, w)| *o *= w);
    }))
}

fn check_p(p: f64) -> Result<(), TrialError> {
    if !(p > 1.0) {
        return Err(TrialError::InvalidExponent(p));
    }
    Ok(())
}

/// `v = dist^{-(p-1)/p} u` on `{dist > 0}`.
pub fn ground_transform(
    u: &ScalarField,
    hs: &HalfSpace,
    p: f64,
) -> Result<ScalarField, TrialError> {
    check_p(p)?;
    let k = (p - 1.0) / p;
    Ok(distance_power_times(
        u,
        hs,
        -k,
        format!("ground[p={p}]({})", u.id()),
    ))
}

/// `u = dist^{(p-1)/p} v` on `{dist > 0}`.
pub fn inverse_ground_transform(
    v: &ScalarField,
    hs: &HalfSpace,
    p: f64,
) -> Result<ScalarField, TrialError> {
    check_p(p)?;
    let k = (p - 1.0) / p;
    Ok(distance_power_times(
        v,
        hs,
        k,
        format!("unground[p={p}]({})", v.id()),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessSpec {
    pub p: f64,
    pub eps: f64,
    pub cutoff: BumpSpec,
    pub half_space: HalfSpace,
}

impl SharpnessSpec {
    /// Unit-radius cutoff centred on the boundary point nearest the origin.
    pub fn centered_on_boundary(p: f64, eps: f64, half_space: HalfSpace, radius: f64) -> Self {
        SharpnessSpec {
            p,
            eps,
            cutoff: BumpSpec::new(half_space.foot_of_origin(), radius),
            half_space,
        }
    }
}

/// `u_eps = dist^{(p-1)/p + eps} * cutoff` on `{dist > 0}`.
pub fn sharpness_trial(spec: &SharpnessSpec) -> Result<ScalarField, TrialError> {
    check_p(spec.p)?;
    if !(spec.eps > 0.0) {
        return Err(TrialError::InvalidEpsilon(spec.eps));
    }
    if spec.cutoff.center.len() != spec.half_space.dim() {
        return Err(TrialError::DimensionMismatch {
            expected: spec.half_space.dim(),
            found: spec.cutoff.center.len(),
        });
    }
    let cutoff = make_bump(&spec.cutoff)?;
    let power = (spec.p - 1.0) / spec.p + spec.eps;
    let id = format!("sharpness[p={},eps={}]({})", spec.p, spec.eps, cutoff.id());
    Ok(distance_power_times(&cutoff, &spec.half_space, power, id))
}

/// Random bumps whose supports lie strictly inside `{dist > 0}`.
///
/// Transverse centre coordinates are uniform in `[-1, 1]`, radii in
/// `[0.3, 1.0]`, per-axis stretches in `[0.7, 1.4]`, and the centre sits at
/// distance `reach * [1.05, 1.5] + [0, 1]` from the boundary.
pub fn random_interior_bumps(hs: &HalfSpace, count: usize, seed: u64) -> Vec<BumpSpec> {
    let dim = hs.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let radius = rng.random_range(0.3..1.0);
            let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(0.7..1.4)).collect();
            let mut center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut spec = BumpSpec {
                center: center.clone(),
                radius,
                scales: Some(scales),
            };
            let reach = hs.distance(&center) - spec.min_distance(hs).unwrap_or(0.0);
            let target = reach * rng.random_range(1.05..1.5) + rng.random_range(0.0..1.0);
            let shift = target - hs.distance(&center);
            for (c, n) in center.iter_mut().zip(hs.normal()) {
                *c += shift * n;
            }
            spec.center = center;
            spec
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient(f: &ScalarField, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len()).map(|j| f.partial_fd(x, j, h)).collect()
    }

    fn assert_gradient_matches(f: &ScalarField, points: &[Vec<f64>]) {
        for x in points {
            let mut exact = vec![0.0; x.len()];
            f.gradient(x, 0.0, &mut exact);
            let fd = fd_gradient(f, x, 1e-5);
            for (a, b) in exact.iter().zip(&fd) {
                assert!(
                    (a - b).abs() < 1e-6 * (1.0 + a.abs()),
                    "{}: {exact:?} vs {fd:?} at {x:?}",
                    f.id()
                );
            }
        }
    }

    fn random_points_in(b: &AxisBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..b.dim())
                    .map(|i| rng.random_range(b.lo[i]..b.hi[i]))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn bump_examples() {
        let b = make_bump(&BumpSpec::new(vec![0.0, 0.0, 2.0], 0.5)).unwrap();
        assert_eq!(b.value(&[0.0, 0.0, 2.0]), (-1.0f64).exp());
        assert_eq!(b.value(&[0.5, 0.0, 2.0]), 0.0);
        assert_eq!(b.value(&[0.0, 0.9, 2.0]), 0.0);
        let mut g = vec![1.0; 3];
        b.gradient(&[0.0, 0.0, 2.0], 0.0, &mut g);
        assert_eq!(g, vec![0.0; 3]);
        b.gradient(&[0.0, 0.6, 2.0], 0.0, &mut g);
        assert_eq!(g, vec![0.0; 3]);
        assert!(b.vanishes_outside_support());
        assert_eq!(
            make_bump(&BumpSpec::new(vec![0.0; 3], 0.0)).unwrap_err(),
            TrialError::InvalidRadius(0.0)
        );
        assert!(make_bump(&BumpSpec::new(vec![0.0; 3], -1.0)).is_err());
    }

    #[test]
    fn bump_gradients_match_finite_differences() {
        let spec = BumpSpec {
            center: vec![0.2, -0.1, 1.5],
            radius: 0.8,
            scales: Some(vec![1.0, 0.7, 1.3]),
        };
        let b = make_bump(&spec).unwrap();
        assert_gradient_matches(&b, &random_points_in(b.support(), 100, 1));
    }

    #[test]
    fn ground_transform_cancels_profile() {
        let hs = HalfSpace::t_axis(3);
        let bump = make_bump(&BumpSpec::new(vec![0.0, 0.0, 0.0], 1.0)).unwrap();
        for p in [1.5, 2.0, 3.0] {
            let u = inverse_ground_transform(&bump, &hs, p).unwrap();
            let v = ground_transform(&u, &hs, p).unwrap();
            for x in random_points_in(
                &AxisBox::new(vec![-0.5, -0.5, 1e-3], vec![0.5, 0.5, 0.6]),
                100,
                2,
            ) {
                let (a, b) = (v.value(&x), bump.value(&x));
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
                // and back
                let uu = inverse_ground_transform(&v, &hs, p).unwrap();
                assert!((uu.value(&x) - u.value(&x)).abs() <= 1e-12 * u.value(&x).abs());
            }
            assert_eq!(v.value(&[0.0, 0.0, -0.1]), 0.0);
            assert_eq!(v.value(&[0.0, 0.0, 0.0]), 0.0);
        }
        assert!(ground_transform(&bump, &hs, 1.0).is_err());
    }

    #[test]
    fn ground_transform_of_square_root_profile_is_constant() {
        let hs = HalfSpace::t_axis(3);
        let sqrt_profile = ScalarField::new("sqrt", AxisBox::cube(3, -5.0, 5.0), {
            let h = hs.clone();
            move |x| h.distance(x).max(0.0).sqrt()
        })
        .with_gradient({
            let h = hs.clone();
            move |x, out| {
                out.fill(0.0);
                out[2] = 0.5 / h.distance(x).sqrt();
            }
        });
        let v = ground_transform(&sqrt_profile, &hs, 2.0).unwrap();
        let mut g = vec![0.0; 3];
        for x in random_points_in(
            &AxisBox::new(vec![-1.0, -1.0, 0.01], vec![1.0, 1.0, 2.0]),
            50,
            3,
        ) {
            assert!((v.value(&x) - 1.0).abs() < 1e-14);
            v.gradient(&x, 0.0, &mut g);
            assert!(g.iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn transformed_gradients_match_finite_differences() {
        let hs = HalfSpace::new(vec![0.3, -0.4, 1.0], -0.2).unwrap();
        let spec = BumpSpec::new(vec![0.1, 0.2, 1.4], 0.6);
        spec.require_interior(&hs).unwrap();
        let bump = make_bump(&spec).unwrap();
        let v = ground_transform(&bump, &hs, 3.0).unwrap();
        assert_gradient_matches(&v, &random_points_in(v.support(), 100, 4));
        let u = inverse_ground_transform(&bump, &hs, 2.5).unwrap();
        assert_gradient_matches(&u, &random_points_in(u.support(), 100, 5));
    }

    #[test]
    fn sharpness_trial_examples() {
        let hs = HalfSpace::x1_axis(3);
        let spec = SharpnessSpec::centered_on_boundary(2.0, 0.5, hs.clone(), 1.0);
        let u = sharpness_trial(&spec).unwrap();
        // exponent 1: u = dist * cutoff
        let x = [0.3, 0.2, -0.1];
        let cutoff = make_bump(&spec.cutoff).unwrap();
        assert!((u.value(&x) - 0.3 * cutoff.value(&x)).abs() < 1e-15);
        assert_eq!(u.value(&[-0.3, 0.2, -0.1]), 0.0);
        assert_eq!(u.value(&[0.0, 0.2, -0.1]), 0.0);

        for eps in [0.5, 0.2, 0.05] {
            let u = sharpness_trial(&SharpnessSpec {
                eps,
                ..spec.clone()
            })
            .unwrap();
            let pts: Vec<Vec<f64>> = random_points_in(u.support(), 200, 6)
                .into_iter()
                .filter(|x| x[0] > 0.02)
                .take(100)
                .collect();
            assert_gradient_matches(&u, &pts);
        }
        assert_eq!(
            sharpness_trial(&SharpnessSpec {
                eps: 0.0,
                ..spec.clone()
            })
            .unwrap_err(),
            TrialError::InvalidEpsilon(0.0)
        );
        assert!(sharpness_trial(&SharpnessSpec { p: 1.0, ..spec }).is_err());
    }

    #[test]
    fn random_bumps_are_interior() {
        for hs in [
            HalfSpace::t_axis(3),
            HalfSpace::x1_axis(3),
            HalfSpace::new(vec![1.0, -2.0, 0.5, 0.3, 1.0], 0.7).unwrap(),
        ] {
            let bumps = random_interior_bumps(&hs, 50, 9);
            assert_eq!(bumps.len(), 50);
            for b in &bumps {
                assert!(b.min_distance(&hs).unwrap() > 0.0);
                let f = make_bump(b).unwrap();
                assert!(f.support().corners().count() > 0);
            }
            assert_eq!(bumps, random_interior_bumps(&hs, 50, 9));
        }
    }
}
