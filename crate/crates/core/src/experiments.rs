//! Evaluation of the half-space Hardy-type inequalities on a group.
//!
//! Each evaluation integrates all of its terms over one shared node set and
//! returns a [`QuotientReport`]. Tolerances: Monte Carlo results may dip
//! `3 * stderr` below their bound; deterministic results may dip by
//! `max(3 * stderr, 1e-3 * scale)`, where `scale` is the size of the terms
//! being compared.
//!
//! For `H^n` the homogeneous dimension is taken as `Q = 2n + 2` everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::group::{GroupKind, GroupSpec};
use crate::hcalc::{
    field_normal_pairings, horizontal_gradient_unchecked, CalcError, DistanceCalculus, HalfSpace,
    ScalarField, DEFAULT_STEP,
};
use crate::quadrature::{integrate_many, IntegralEstimate, QuadConfig, QuadError, QuadMethod};
use crate::trials::{ground_transform, TrialError};

pub const Q_CONVENTION: &str = "homogeneous";
const DETERMINISTIC_RTOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("trivial trial function: denominator integral is {0}")]
    TrivialTrial(f64),
    #[error("exponent out of range: {0}")]
    Domain(String),
    #[error("{0} requires a Heisenberg group")]
    RequiresHeisenberg(&'static str),
    #[error("Hardy remainder is negative beyond tolerance ({value} < -{tolerance}); quadrature is unreliable")]
    Inconsistent { value: f64, tolerance: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Calculus(#[from] CalcError),
    #[error(transparent)]
    Trial(#[from] TrialError),
}

/// Closed-form constants attached to the exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    /// `((p-1)/p)^p`
    pub sharp_hardy: f64,
    /// `-((p-1)/p)^{p-1}`
    pub beta_star: f64,
    /// `(2^{p-1} - 1)^{-1}`
    pub remainder_cp: f64,
    /// `Qp/(Q-p)`, present when `Q` was given and `2 <= p < Q`.
    pub sobolev_exponent: Option<f64>,
}

pub fn constants(p: f64, homogeneous_dim: Option<usize>) -> Result<Constants, ExperimentError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(ExperimentError::Domain(format!("p must exceed 1, got {p}")));
    }
    let r = (p - 1.0) / p;
    let sobolev_exponent = match homogeneous_dim {
        None => None,
        Some(q) => {
            let q = q as f64;
            if !(2.0..q).contains(&p) {
                return Err(ExperimentError::Domain(format!(
                    "Sobolev exponent needs 2 <= p < Q = {q}, got p = {p}"
                )));
            }
            Some(q * p / (q - p))
        }
    };
    Ok(Constants {
        sharp_hardy: r.powf(p),
        beta_star: -r.powf(p - 1.0),
        remainder_cp: 1.0 / (2f64.powf(p - 1.0) - 1.0),
        sobolev_exponent,
    })
}

/// Coefficient `-(p-1)(|beta|^{p/(p-1)} + beta)` of the angle-weighted term.
pub fn beta_coefficient(p: f64, beta: f64) -> f64 {
    -(p - 1.0) * (beta.abs().powf(p / (p - 1.0)) + beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    Quotient,
    Margin,
}

/// One inequality evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotientReport {
    pub inequality_id: String,
    pub label: String,
    pub p: f64,
    pub group: String,
    pub normal: Vec<f64>,
    pub offset: f64,
    pub trial: String,
    pub numerator: IntegralEstimate,
    pub denominator: IntegralEstimate,
    pub kind: ValueKind,
    /// Quotient or margin, depending on `kind`.
    pub value: f64,
    pub bound: f64,
    /// `value - bound` for quotients, `value` for margins.
    pub margin: f64,
    /// Uncertainty of `value`.
    pub stderr: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seed: u64,
    pub q_convention: &'static str,
    pub config_digest: String,
}

impl QuotientReport {
    pub fn evaluations(&self) -> u64 {
        self.numerator.evaluations.max(self.denominator.evaluations)
    }
}

/// Group, half-space and quadrature shared by a batch of evaluations.
#[derive(Debug, Clone)]
pub struct Setting {
    pub group: GroupSpec,
    pub half_space: HalfSpace,
    pub quad: QuadConfig,
    /// Finite-difference step for fields without an exact gradient.
    pub step: f64,
    pub config_digest: String,
    calculus: DistanceCalculus,
}

impl Setting {
    pub fn new(
        group: GroupSpec,
        half_space: HalfSpace,
        quad: QuadConfig,
    ) -> Result<Self, ExperimentError> {
        quad.validate()?;
        let calculus = DistanceCalculus::new(&group, &half_space)?;
        Ok(Setting {
            group,
            half_space,
            quad,
            step: DEFAULT_STEP,
            config_digest: String::new(),
            calculus,
        })
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.quad.seed = seed;
        self
    }

    pub fn calculus(&self) -> &DistanceCalculus {
        &self.calculus
    }

    fn monte_carlo_like(&self) -> bool {
        self.quad.method == QuadMethod::MonteCarlo
            || (self.quad.method == QuadMethod::BoundaryGraded && self.group.total_dim() > 4)
    }

    fn tolerance(&self, stderr: f64, scale: f64) -> f64 {
        if self.monte_carlo_like() {
            3.0 * stderr
        } else {
            (3.0 * stderr).max(DETERMINISTIC_RTOL * scale.abs())
        }
    }

    fn check_field(&self, u: &ScalarField) -> Result<(), ExperimentError> {
        if u.dim() != self.group.total_dim() {
            return Err(CalcError::DimensionMismatch {
                expected: self.group.total_dim(),
                found: u.dim(),
            }
            .into());
        }
        Ok(())
    }

    fn heisenberg_n(&self, what: &'static str) -> Result<usize, ExperimentError> {
        match self.group.kind() {
            GroupKind::Heisenberg { n } => Ok(n),
            _ => Err(ExperimentError::RequiresHeisenberg(what)),
        }
    }

    /// `|grad_G u|`, `W / dist` and `|u|` at `x` (which lies in `{dist > 0}`).
    fn local_terms(&self, u: &ScalarField, x: &[f64]) -> (f64, f64, f64) {
        let g = horizontal_gradient_unchecked(&self.group, u, x, self.step);
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w = field_normal_pairings(&self.group, &self.half_space, x)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        (grad_norm, w / self.half_space.distance(x), u.value(x).abs())
    }

    fn integrate<F>(
        &self,
        u: &ScalarField,
        outputs: usize,
        f: F,
    ) -> Result<Vec<IntegralEstimate>, ExperimentError>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        Ok(integrate_many(
            f,
            outputs,
            u.support(),
            &self.half_space,
            &self.quad,
        )?)
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        id: &str,
        p: f64,
        u: &ScalarField,
        numerator: IntegralEstimate,
        denominator: IntegralEstimate,
        kind: ValueKind,
        value: f64,
        bound: f64,
        stderr: f64,
        scale: f64,
    ) -> QuotientReport {
        let margin = match kind {
            ValueKind::Quotient => value - bound,
            ValueKind::Margin => value,
        };
        let tolerance = self.tolerance(stderr, scale);
        QuotientReport {
            inequality_id: id.to_string(),
            label: "verification".to_string(),
            p,
            group: self.group.name().to_string(),
            normal: self.half_space.normal().to_vec(),
            offset: self.half_space.offset(),
            trial: u.id().to_string(),
            numerator,
            denominator,
            kind,
            value,
            bound,
            margin,
            stderr,
            tolerance,
            passed: margin >= -tolerance,
            seed: self.quad.seed,
            q_convention: Q_CONVENTION,
            config_digest: self.config_digest.clone(),
        }
    }

    /// `int |grad_G u|^p / int (W^p / dist^p) |u|^p` against `((p-1)/p)^p`.
    pub fn hardy_quotient(
        &self,
        u: &ScalarField,
        p: f64,
    ) -> Result<QuotientReport, ExperimentError> {
        let c = constants(p, None)?;
        self.check_field(u)?;
        let est = self.integrate(u, 2, |x, out| {
            let (g, w_over_d, au) = self.local_terms(u, x);
            out[0] = g.powf(p);
            out[1] = (w_over_d * au).powf(p);
        })?;
        let (num, den) = (est[0], est[1]);
        if !(den.value > 0.0) {
            return Err(ExperimentError::TrivialTrial(den.value));
        }
        let q = num.value / den.value;
        let stderr = quotient_stderr(q, num, den);
        Ok(self.report(
            "hardy",
            p,
            u,
            num,
            den,
            ValueKind::Quotient,
            q,
            c.sharp_hardy,
            stderr,
            c.sharp_hardy,
        ))
    }

    /// Margin of the general stratified inequality for a given `beta`:
    /// `int |grad u|^p - [c(beta) int W^p/dist^p |u|^p + beta int L_p(dist)/dist^{p-1} |u|^p]`.
    pub fn general_hardy_margin(
        &self,
        u: &ScalarField,
        p: f64,
        beta: f64,
    ) -> Result<QuotientReport, ExperimentError> {
        constants(p, None)?;
        self.check_field(u)?;
        let harmonic = self.calculus.is_p_harmonic();
        let est = self.integrate(u, 3, |x, out| {
            let (g, w_over_d, au) = self.local_terms(u, x);
            out[0] = g.powf(p);
            out[1] = (w_over_d * au).powf(p);
            out[2] = if harmonic {
                0.0
            } else {
                let d = self.half_space.distance(x);
                self.calculus.p_sub_laplacian(x, p) * au.powf(p) / d.powf(p - 1.0)
            };
        })?;
        let (lhs, weighted, laplacian) = (est[0], est[1], est[2]);
        if !(weighted.value > 0.0) {
            return Err(ExperimentError::TrivialTrial(weighted.value));
        }
        let coef = beta_coefficient(p, beta);
        let bound = coef * weighted.value + beta * laplacian.value;
        let margin = lhs.value - bound;
        let stderr = (lhs.stderr.powi(2)
            + (coef * weighted.stderr).powi(2)
            + (beta * laplacian.stderr).powi(2))
        .sqrt();
        let scale = lhs.value.abs().max(bound.abs());
        let mut r = self.report(
            "general-hardy",
            p,
            u,
            lhs,
            weighted,
            ValueKind::Margin,
            margin,
            bound,
            stderr,
            scale,
        );
        r.label = format!("beta={beta}");
        Ok(r)
    }

    /// Slack `E_p[u] - C_p int dist^{p-1} |grad_H v|^p` with `u = dist^{(p-1)/p} v`.
    pub fn remainder_check(
        &self,
        u: &ScalarField,
        p: f64,
    ) -> Result<QuotientReport, ExperimentError> {
        self.heisenberg_n("remainder check")?;
        if p < 2.0 {
            return Err(ExperimentError::Domain(format!(
                "remainder estimate needs p >= 2, got {p}"
            )));
        }
        let c = constants(p, None)?;
        self.check_field(u)?;
        let v = ground_transform(u, &self.half_space, p)?;
        let est = self.integrate(u, 3, |x, out| {
            let (g, w_over_d, au) = self.local_terms(u, x);
            out[0] = g.powf(p);
            out[1] = (w_over_d * au).powf(p);
            let gv = horizontal_gradient_unchecked(&self.group, &v, x, self.step);
            let gv_norm = gv.iter().map(|t| t * t).sum::<f64>().sqrt();
            out[2] = self.half_space.distance(x).powf(p - 1.0) * gv_norm.powf(p);
        })?;
        let (grad, weighted, rhs) = (est[0], est[1], est[2]);
        if !(grad.value > 0.0) {
            return Err(ExperimentError::TrivialTrial(grad.value));
        }
        let energy = IntegralEstimate {
            value: grad.value - c.sharp_hardy * weighted.value,
            stderr: (grad.stderr.powi(2) + (c.sharp_hardy * weighted.stderr).powi(2)).sqrt(),
            evaluations: grad.evaluations,
        };
        let slack = energy.value - c.remainder_cp * rhs.value;
        let stderr = (energy.stderr.powi(2) + (c.remainder_cp * rhs.stderr).powi(2)).sqrt();
        Ok(self.report(
            "remainder",
            p,
            u,
            energy,
            rhs,
            ValueKind::Margin,
            slack,
            0.0,
            stderr,
            grad.value,
        ))
    }

    /// `S[u] = E_p[u]^{1/p} / (int |u|^{p*})^{1/p*}` on `H^n`, `p* = Qp/(Q-p)`, `Q = 2n+2`.
    pub fn hardy_sobolev_ratio(
        &self,
        u: &ScalarField,
        p: f64,
    ) -> Result<QuotientReport, ExperimentError> {
        self.heisenberg_n("Hardy-Sobolev ratio")?;
        let c = constants(p, Some(self.group.homogeneous_dim()))?;
        let p_star = c.sobolev_exponent.unwrap_or(f64::NAN);
        self.check_field(u)?;
        let est = self.integrate(u, 3, |x, out| {
            let (g, w_over_d, au) = self.local_terms(u, x);
            out[0] = g.powf(p);
            out[1] = (w_over_d * au).powf(p);
            out[2] = au.powf(p_star);
        })?;
        let (grad, weighted, lebesgue) = (est[0], est[1], est[2]);
        if !(lebesgue.value > 0.0) {
            return Err(ExperimentError::TrivialTrial(lebesgue.value));
        }
        let energy = IntegralEstimate {
            value: grad.value - c.sharp_hardy * weighted.value,
            stderr: (grad.stderr.powi(2) + (c.sharp_hardy * weighted.stderr).powi(2)).sqrt(),
            evaluations: grad.evaluations,
        };
        let tolerance = self.tolerance(energy.stderr, grad.value);
        if energy.value < -tolerance {
            return Err(ExperimentError::Inconsistent {
                value: energy.value,
                tolerance,
            });
        }
        let e = energy.value.max(0.0);
        let s = e.powf(1.0 / p) / lebesgue.value.powf(1.0 / p_star);
        // first-order propagation through both powers
        let rel = ((energy.stderr / (p * e.max(f64::MIN_POSITIVE))).powi(2)
            + (lebesgue.stderr / (p_star * lebesgue.value)).powi(2))
        .sqrt();
        let mut r = self.report(
            "sobolev",
            p,
            u,
            energy,
            lebesgue,
            ValueKind::Quotient,
            s,
            0.0,
            s * rel,
            0.0,
        );
        r.passed = s > 0.0;
        r.label = format!("p*={p_star}");
        Ok(r)
    }

    /// `int |grad_H u|^2 >= int (|x|^2 + |y|^2) / t^2 |u|^2` on `H^n` with the half-space `t > 0`.
    pub fn luan_young_check(&self, u: &ScalarField) -> Result<QuotientReport, ExperimentError> {
        let n = self.heisenberg_n("Luan-Young check")?;
        if self.half_space != HalfSpace::t_axis(2 * n + 1) {
            return Err(ExperimentError::Domain(
                "Luan-Young check uses nu = t-axis, d = 0".into(),
            ));
        }
        self.check_field(u)?;
        let est = self.integrate(u, 2, |x, out| {
            let g = horizontal_gradient_unchecked(&self.group, u, x, self.step);
            out[0] = g.iter().map(|v| v * v).sum();
            let r2: f64 = x[..2 * n].iter().map(|v| v * v).sum();
            let t = x[2 * n];
            let uv = u.value(x);
            out[1] = r2 * uv * uv / (t * t);
        })?;
        let (lhs, rhs) = (est[0], est[1]);
        if !(rhs.value > 0.0) {
            return Err(ExperimentError::TrivialTrial(rhs.value));
        }
        let margin = lhs.value - rhs.value;
        let stderr = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
        Ok(self.report(
            "luan-young",
            2.0,
            u,
            lhs,
            rhs,
            ValueKind::Margin,
            margin,
            0.0,
            stderr,
            lhs.value,
        ))
    }

    /// Hardy quotients along a family, in order. The label is "verification" for
    /// `nu = (1, 0, ..., 0)`, `d = 0` and "probe" otherwise.
    pub fn sharpness_sweep(
        &self,
        fields: &[ScalarField],
        p: f64,
    ) -> Result<Vec<QuotientReport>, ExperimentError> {
        let label = if self.half_space == HalfSpace::x1_axis(self.group.total_dim()) {
            "verification"
        } else {
            "probe"
        };
        let reports: Vec<QuotientReport> = fields
            .par_iter()
            .map(|u| {
                let mut r = self.hardy_quotient(u, p)?;
                r.inequality_id = "sharpness".into();
                r.label = label.into();
                Ok(r)
            })
            .collect::<Result<_, ExperimentError>>()?;
        Ok(reports)
    }
}

fn quotient_stderr(q: f64, num: IntegralEstimate, den: IntegralEstimate) -> f64 {
    let rel = |e: IntegralEstimate| {
        if e.value != 0.0 {
            e.stderr / e.value.abs()
        } else {
            0.0
        }
    };
    q.abs() * (rel(num).powi(2) + rel(den).powi(2)).sqrt()
}

/// `|(1/4) W^2 / dist^2 - (|x|^2 + |y|^2) / t^2|` on `H^n` with `nu` = t-axis.
pub fn luan_young_weight_gap(spec: &GroupSpec, x: &[f64]) -> f64 {
    let dim = spec.total_dim();
    let hs = HalfSpace::t_axis(dim);
    let w2: f64 = field_normal_pairings(spec, &hs, x)
        .iter()
        .map(|v| v * v)
        .sum();
    let t = x[dim - 1];
    let r2: f64 = x[..dim - 1].iter().map(|v| v * v).sum();
    (0.25 * w2 / (t * t) - r2 / (t * t)).abs()
}

/// Largest non-increase violation in a sequence (0 when monotone nonincreasing).
pub fn nonincreasing_violation(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| (w[1] - w[0]).max(0.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub samples: u64,
    pub violations: u64,
    /// Smallest `(lhs - rhs) / scale` observed.
    pub worst_relative: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub seed: u64,
}

/// Samples `|A+B|^p - |A|^p >= C_p |B|^p + p |A|^{p-2} A.B` for random `A, B` in
/// dimensions 1..=5 and `p` uniform in `[p_min, p_max]`. A violation is a
/// relative shortfall below `-1e-12`.
///
/// Vectors mix a random direction with magnitudes spread over six decades,
/// and one sample in eight takes `B` nearly parallel or antiparallel to `A`.
pub fn bft_inequality_fuzz(
    p_min: f64,
    p_max: f64,
    samples: u64,
    seed: u64,
) -> Result<FuzzReport, ExperimentError> {
    if !(p_min >= 2.0) || !(p_max >= p_min) {
        return Err(ExperimentError::Domain(format!(
            "fuzz needs 2 <= p_min <= p_max, got [{p_min}, {p_max}]"
        )));
    }
    const CHUNK: u64 = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(u64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let mut violations = 0;
            let mut worst = f64::INFINITY;
            let mut a = [0.0; 5];
            let mut b = [0.0; 5];
            for _ in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let dim = rng.random_range(1..=5);
                let p = if p_max > p_min {
                    rng.random_range(p_min..=p_max)
                } else {
                    p_min
                };
                let sa = 10f64.powf(rng.random_range(-3.0..3.0));
                let sb = 10f64.powf(rng.random_range(-3.0..3.0));
                for i in 0..dim {
                    a[i] = sa * rng.random_range(-1.0..1.0);
                    b[i] = sb * rng.random_range(-1.0..1.0);
                }
                if rng.random_range(0..8) == 0 {
                    let k = rng.random_range(-3.0..3.0);
                    for i in 0..dim {
                        b[i] = k * a[i] * (1.0 + 1e-6 * rng.random_range(-1.0..1.0));
                    }
                }
                let rel = bft_relative_gap(&a[..dim], &b[..dim], p);
                worst = worst.min(rel);
                if rel < -1e-12 {
                    violations += 1;
                }
            }
            (violations, worst)
        })
        .collect();
    let (violations, worst_relative) = partial
        .iter()
        .fold((0, f64::INFINITY), |(v, w), &(pv, pw)| (v + pv, w.min(pw)));
    Ok(FuzzReport {
        samples,
        violations,
        worst_relative,
        p_min,
        p_max,
        seed,
    })
}

/// `(lhs - rhs) / scale` for the elementary vector inequality.
pub fn bft_relative_gap(a: &[f64], b: &[f64], p: f64) -> f64 {
    let cp = 1.0 / (2f64.powf(p - 1.0) - 1.0);
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    let (na, nb, ns) = (norm(a), norm(b), norm(&sum));
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cross = if na == 0.0 {
        0.0
    } else {
        p * na.powf(p - 2.0) * ab
    };
    let lhs = ns.powf(p) - na.powf(p);
    let rhs = cp * nb.powf(p) + cross;
    let scale = ns.powf(p).max(na.powf(p)).max(nb.powf(p)).max(cross.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs) / scale
    }
}

/// Per-job quadrature seed derived from the batch seed (SplitMix64 finalizer).
pub fn job_seed(batch_seed: u64, job: u64) -> u64 {
    let mut z = batch_seed ^ job.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
