//! Integration over `box ∩ { dist > 0 }` for integrands that may blow up
//! like `dist^gamma` (`gamma > -1`) at the boundary hyperplane.
//!
//! Three methods:
//!
//! * `tensor-gauss`: Gauss–Legendre on the box axes; nodes with `dist <= 0`
//!   contribute zero. Error estimate is the gap to the half-resolution rule.
//! * `monte-carlo`: uniform samples in the box, standard error from the
//!   sample variance.
//! * `boundary-graded`: coordinates are rotated so the first axis is the
//!   normal `nu`. Along it the distance range `(0, b]` is split into
//!   geometric panels `[b r^{k+1}, b r^k]` and the innermost panel
//!   `(0, b r^L]` uses `dist = b r^L w^m`, so no node ever lands on the
//!   boundary. Transverse axes use tensor Gauss–Legendre when the group
//!   dimension is at most 4 and Monte Carlo otherwise.
//!
//! All randomness is counter-based (ChaCha8 keyed by the seed, positioned by
//! node index) and partial sums are reduced in fixed chunk order, so results
//! do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hcalc::{dot, AxisBox, HalfSpace};

const CHUNK: usize = 512;
/// Largest group dimension integrated with a transverse tensor rule.
const MAX_TENSOR_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("non-finite integrand value {value} at {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },
    #[error("invalid quadrature configuration: {0}")]
    InvalidConfig(String),
    #[error("integration box must be bounded and match the half-space dimension")]
    InvalidBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadMethod {
    TensorGauss,
    MonteCarlo,
    BoundaryGraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadConfig {
    pub method: QuadMethod,
    pub points_per_axis: usize,
    pub sample_count: usize,
    pub seed: u64,
    /// Exponent `m` of the innermost-panel substitution `dist = c w^m`.
    pub grading_exponent: u32,
    /// Number of geometric panels `L` between the innermost panel and the far side.
    pub grading_levels: usize,
    /// Panel ratio `r` in `(0, 1)`.
    pub grading_ratio: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            method: QuadMethod::BoundaryGraded,
            points_per_axis: 32,
            sample_count: 200_000,
            seed: 42,
            grading_exponent: 4,
            grading_levels: 32,
            grading_ratio: 0.1,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<(), QuadError> {
        let bad = |m: &str| Err(QuadError::InvalidConfig(m.to_string()));
        if self.points_per_axis < 2 {
            return bad("points_per_axis must be >= 2");
        }
        if self.sample_count < 1 {
            return bad("sample_count must be >= 1");
        }
        if self.grading_exponent < 1 {
            return bad("grading_exponent must be >= 1");
        }
        if !(self.grading_ratio > 0.0 && self.grading_ratio < 1.0) {
            return bad("grading_ratio must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    pub value: f64,
    /// Monte Carlo standard error, or the gap to the half-resolution rule.
    pub stderr: f64,
    pub evaluations: u64,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// One-dimensional rule as parallel node/weight arrays.
#[derive(Debug, Clone)]
struct Rule1d {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule1d {
    fn gauss(n: usize, a: f64, b: f64) -> Self {
        let (z, w) = gauss_legendre(n);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        Rule1d {
            nodes: z.iter().map(|v| mid + half * v).collect(),
            weights: w.iter().map(|v| half * v).collect(),
        }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Distance rule on `(lo, hi]` with `lo >= 0`: geometric panels, graded innermost panel when `lo == 0`.
    fn graded(n: usize, lo: f64, hi: f64, cfg: &QuadConfig) -> Self {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut push = |r: Rule1d| {
            nodes.extend(r.nodes);
            weights.extend(r.weights);
        };
        let mut upper = hi;
        for _ in 0..cfg.grading_levels {
            let lower = (upper * cfg.grading_ratio).max(lo);
            push(Rule1d::gauss(n, lower, upper));
            upper = lower;
            if upper <= lo {
                break;
            }
        }
        if upper > lo {
            if lo > 0.0 {
                push(Rule1d::gauss(n, lo, upper));
            } else {
                // dist = upper * w^m on w in (0, 1)
                let m = cfg.grading_exponent as i32;
                let base = Rule1d::gauss(n, 0.0, 1.0);
                push(Rule1d {
                    nodes: base.nodes.iter().map(|w| upper * w.powi(m)).collect(),
                    weights: base
                        .nodes
                        .iter()
                        .zip(&base.weights)
                        .map(|(w, wt)| wt * upper * m as f64 * w.powi(m - 1))
                        .collect(),
                });
            }
        }
        Rule1d { nodes, weights }
    }
}

/// Orthonormal frame whose first vector is `nu` (Householder reflection).
fn normal_frame(nu: &[f64]) -> Vec<Vec<f64>> {
    let n = nu.len();
    let mut v: Vec<f64> = nu.to_vec();
    v[0] -= 1.0;
    let vv = dot(&v, &v);
    (0..n)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    if vv == 0.0 {
                        id
                    } else {
                        id - 2.0 * v[i] * v[j] / vv
                    }
                })
                .collect()
        })
        .collect()
}

/// Integrates a vector-valued integrand `f(x, out)` with `outputs` components over
/// `region ∩ { dist > 0 }`, sharing nodes across components.
pub fn integrate_many<F>(
    f: F,
    outputs: usize,
    region: &AxisBox,
    hs: &HalfSpace,
    cfg: &QuadConfig,
) -> Result<Vec<IntegralEstimate>, QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    cfg.validate()?;
    if region.dim() != hs.dim()
        || region.lo.iter().chain(&region.hi).any(|v| !v.is_finite())
        || region.lo.iter().zip(&region.hi).any(|(a, b)| a > b)
    {
        return Err(QuadError::InvalidBox);
    }
    match cfg.method {
        QuadMethod::MonteCarlo => monte_carlo(&f, outputs, region, hs, cfg),
        QuadMethod::TensorGauss => {
            let n = cfg.points_per_axis;
            let fine = tensor_box(&f, outputs, region, hs, n)?;
            let coarse = tensor_box(&f, outputs, region, hs, (n / 2).max(2))?;
            Ok(with_gap(fine, coarse))
        }
        QuadMethod::BoundaryGraded => graded(&f, outputs, region, hs, cfg),
    }
}

pub fn integrate<F>(
    f: F,
    region: &AxisBox,
    hs: &HalfSpace,
    cfg: &QuadConfig,
) -> Result<IntegralEstimate, QuadError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut out = integrate_many(|x, o| o[0] = f(x), 1, region, hs, cfg)?;
    Ok(out.remove(0))
}

/// Two integrals over identical nodes and weights.
pub fn integrate_pair<F, G>(
    f: F,
    g: G,
    region: &AxisBox,
    hs: &HalfSpace,
    cfg: &QuadConfig,
) -> Result<(IntegralEstimate, IntegralEstimate), QuadError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let out = integrate_many(
        |x, o| {
            o[0] = f(x);
            o[1] = g(x);
        },
        2,
        region,
        hs,
        cfg,
    )?;
    Ok((out[0], out[1]))
}

struct Partial {
    sums: Vec<f64>,
    squares: Vec<f64>,
    count: u64,
    error: Option<QuadError>,
}

impl Partial {
    fn new(k: usize) -> Self {
        Partial {
            sums: vec![0.0; k],
            squares: vec![0.0; k],
            count: 0,
            error: None,
        }
    }
}

/// Runs `node(i, point) -> Option<weight>` over `0..total` in fixed-size chunks and reduces in chunk order.
/// Points outside the domain return `None` and are not evaluated.
fn reduce_nodes<F, N>(
    f: &F,
    outputs: usize,
    total: usize,
    dim: usize,
    node: N,
) -> Result<Partial, QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
    N: Fn(usize, &mut [f64]) -> Option<f64> + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial::new(outputs);
            let mut x = vec![0.0; dim];
            let mut out = vec![0.0; outputs];
            for i in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let Some(w) = node(i, &mut x) else { continue };
                out.fill(0.0);
                f(&x, &mut out);
                part.count += 1;
                for (k, &v) in out.iter().enumerate() {
                    if !v.is_finite() {
                        part.error = Some(QuadError::NonFinite {
                            point: x.clone(),
                            value: v,
                        });
                        return part;
                    }
                    part.sums[k] += w * v;
                }
            }
            part
        })
        .collect();
    fold_partials(partials, outputs)
}

fn fold_partials(partials: Vec<Partial>, outputs: usize) -> Result<Partial, QuadError> {
    let mut acc = Partial::new(outputs);
    for p in partials {
        if let Some(e) = p.error {
            return Err(e);
        }
        for k in 0..outputs {
            acc.sums[k] += p.sums[k];
            acc.squares[k] += p.squares[k];
        }
        acc.count += p.count;
    }
    Ok(acc)
}

fn decode(mut i: usize, sizes: &[usize], idx: &mut [usize]) {
    for (slot, &s) in idx.iter_mut().zip(sizes).rev() {
        *slot = i % s;
        i /= s;
    }
}

fn tensor_box<F>(
    f: &F,
    outputs: usize,
    region: &AxisBox,
    hs: &HalfSpace,
    n: usize,
) -> Result<(Vec<f64>, u64), QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = region.dim();
    let rules: Vec<Rule1d> = (0..dim)
        .map(|i| Rule1d::gauss(n, region.lo[i], region.hi[i]))
        .collect();
    let sizes: Vec<usize> = rules.iter().map(Rule1d::len).collect();
    let total: usize = sizes.iter().product();
    let part = reduce_nodes(f, outputs, total, dim, |i, x| {
        let mut idx = vec![0; dim];
        decode(i, &sizes, &mut idx);
        let mut w = 1.0;
        for (d, &j) in idx.iter().enumerate() {
            x[d] = rules[d].nodes[j];
            w *= rules[d].weights[j];
        }
        (hs.distance(x) > 0.0).then_some(w)
    })?;
    Ok((part.sums, part.count))
}

fn with_gap(fine: (Vec<f64>, u64), coarse: (Vec<f64>, u64)) -> Vec<IntegralEstimate> {
    let evals = fine.1 + coarse.1;
    fine.0
        .iter()
        .zip(&coarse.0)
        .map(|(&v, &c)| IntegralEstimate {
            value: v,
            stderr: (v - c).abs(),
            evaluations: evals.max(1),
        })
        .collect()
}

/// Uniform deviates for sample `i`: the ChaCha8 stream is positioned at word `2 * dim * i`.
/// `mc_reduce` draws the same values by positioning once per chunk.
#[cfg(test)]
fn sample_uniform(seed: u64, i: usize, dim: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos((2 * dim * i) as u128);
    for o in out.iter_mut() {
        *o = rng.random::<f64>();
    }
}

fn mc_estimates(part: Partial, volume: f64, samples: usize) -> Vec<IntegralEstimate> {
    let nf = samples as f64;
    part.sums
        .iter()
        .zip(&part.squares)
        .map(|(&s, &q)| {
            let mean = s / nf;
            let var = if samples > 1 {
                ((q / nf - mean * mean).max(0.0)) * nf / (nf - 1.0)
            } else {
                0.0
            };
            IntegralEstimate {
                value: volume * mean,
                stderr: volume * (var / nf).sqrt(),
                evaluations: part.count.max(1),
            }
        })
        .collect()
}

/// Monte Carlo where each sample contributes `g(u)` for a uniform point `u` in `[0,1]^dim`.
fn mc_reduce<F, G>(
    f: &F,
    outputs: usize,
    samples: usize,
    dim: usize,
    seed: u64,
    sample_value: G,
) -> Result<Partial, QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
    G: Fn(&[f64], &F, &mut [f64], &mut u64) -> Result<(), QuadError> + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial::new(outputs);
            let mut u = vec![0.0; dim];
            let mut vals = vec![0.0; outputs];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_word_pos((2 * dim * c * CHUNK) as u128);
            for _ in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                for v in u.iter_mut() {
                    *v = rng.random::<f64>();
                }
                vals.fill(0.0);
                if let Err(e) = sample_value(&u, f, &mut vals, &mut part.count) {
                    part.error = Some(e);
                    return part;
                }
                for k in 0..outputs {
                    part.sums[k] += vals[k];
                    part.squares[k] += vals[k] * vals[k];
                }
            }
            part
        })
        .collect();
    fold_partials(partials, outputs)
}

fn monte_carlo<F>(
    f: &F,
    outputs: usize,
    region: &AxisBox,
    hs: &HalfSpace,
    cfg: &QuadConfig,
) -> Result<Vec<IntegralEstimate>, QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = region.dim();
    let part = mc_reduce(
        f,
        outputs,
        cfg.sample_count,
        dim,
        cfg.seed,
        |u, f, vals, count| {
            let x: Vec<f64> = (0..dim)
                .map(|d| region.lo[d] + u[d] * (region.hi[d] - region.lo[d]))
                .collect();
            if hs.distance(&x) <= 0.0 {
                return Ok(());
            }
            f(&x, vals);
            *count += 1;
            check_finite(&x, vals)
        },
    )?;
    Ok(mc_estimates(part, region.volume(), cfg.sample_count))
}

fn check_finite(x: &[f64], vals: &[f64]) -> Result<(), QuadError> {
    match vals.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(QuadError::NonFinite {
            point: x.to_vec(),
            value,
        }),
        None => Ok(()),
    }
}

fn graded<F>(
    f: &F,
    outputs: usize,
    region: &AxisBox,
    hs: &HalfSpace,
    cfg: &QuadConfig,
) -> Result<Vec<IntegralEstimate>, QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = region.dim();
    let frame = normal_frame(hs.normal());
    // coordinate ranges in the rotated frame, from the box corners
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for corner in region.corners() {
        for (j, e) in frame.iter().enumerate() {
            let c = dot(&corner, e);
            lo[j] = lo[j].min(c);
            hi[j] = hi[j].max(c);
        }
    }
    let d = hs.offset();
    let (dist_lo, dist_hi) = ((lo[0] - d).max(0.0), hi[0] - d);
    if dist_hi <= 0.0 {
        return Ok(vec![
            IntegralEstimate {
                value: 0.0,
                stderr: 0.0,
                evaluations: 1
            };
            outputs
        ]);
    }
    let axis_aligned = frame
        .iter()
        .all(|e| e.iter().all(|&v| v == 0.0 || v.abs() == 1.0));
    let to_point = |coords: &[f64], x: &mut [f64]| -> bool {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = frame.iter().zip(coords).map(|(e, c)| e[i] * c).sum();
        }
        (axis_aligned || region.contains(x)) && hs.distance(x) > 0.0
    };

    if dim <= MAX_TENSOR_DIM {
        let run = |n: usize| -> Result<(Vec<f64>, u64), QuadError> {
            let mut rules = vec![Rule1d::graded(n, dist_lo, dist_hi, cfg)];
            for j in 1..dim {
                rules.push(Rule1d::gauss(n, lo[j], hi[j]));
            }
            let sizes: Vec<usize> = rules.iter().map(Rule1d::len).collect();
            let total: usize = sizes.iter().product();
            let part = reduce_nodes(f, outputs, total, dim, |i, x| {
                let mut idx = vec![0; dim];
                decode(i, &sizes, &mut idx);
                let mut coords = vec![0.0; dim];
                let mut w = 1.0;
                for (j, &k) in idx.iter().enumerate() {
                    coords[j] = rules[j].nodes[k];
                    w *= rules[j].weights[k];
                }
                coords[0] += d;
                to_point(&coords, x).then_some(w)
            })?;
            Ok((part.sums, part.count))
        };
        let n = cfg.points_per_axis;
        let fine = run(n)?;
        let coarse = run((n / 2).max(2))?;
        return Ok(with_gap(fine, coarse));
    }

    // Monte Carlo over the transverse coordinates, graded rule along nu for each sample
    let normal_rule = Rule1d::graded(cfg.points_per_axis, dist_lo, dist_hi, cfg);
    let transverse_volume: f64 = (1..dim).map(|j| hi[j] - lo[j]).product();
    let part = mc_reduce(
        f,
        outputs,
        cfg.sample_count,
        dim - 1,
        cfg.seed,
        |u, f, vals, count| {
            let mut coords = vec![0.0; dim];
            for j in 1..dim {
                coords[j] = lo[j] + u[j - 1] * (hi[j] - lo[j]);
            }
            let mut x = vec![0.0; dim];
            let mut tmp = vec![0.0; outputs];
            for (s, w) in normal_rule.nodes.iter().zip(&normal_rule.weights) {
                coords[0] = s + d;
                if !to_point(&coords, &mut x) {
                    continue;
                }
                tmp.fill(0.0);
                f(&x, &mut tmp);
                *count += 1;
                check_finite(&x, &tmp)?;
                for (v, t) in vals.iter_mut().zip(&tmp) {
                    *v += w * t;
                }
            }
            Ok(())
        },
    )?;
    Ok(mc_estimates(part, transverse_volume, cfg.sample_count))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> AxisBox {
        AxisBox::cube(3, 0.0, 1.0)
    }

    fn methods() -> Vec<QuadConfig> {
        vec![
            QuadConfig::default(),
            QuadConfig {
                method: QuadMethod::TensorGauss,
                ..QuadConfig::default()
            },
            QuadConfig {
                method: QuadMethod::MonteCarlo,
                ..QuadConfig::default()
            },
        ]
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [2usize, 5, 16, 33] {
            let (z, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for k in 0..2 * n {
                let q: f64 = z.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 {
                    0.0
                } else {
                    2.0 / (k as f64 + 1.0)
                };
                assert!((q - exact).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn volume_of_unit_cube() {
        let hs = HalfSpace::t_axis(3);
        for cfg in methods() {
            let est = integrate(|_| 1.0, &unit_cube(), &hs, &cfg).unwrap();
            assert!(
                (est.value - 1.0).abs() <= 1e-12 + 3.0 * est.stderr,
                "{cfg:?}: {est:?}"
            );
            assert!(est.evaluations > 0);
        }
    }

    #[test]
    fn product_integral() {
        let hs = HalfSpace::t_axis(3);
        for cfg in methods() {
            let est = integrate(|x| x[0] * x[0] * x[1], &unit_cube(), &hs, &cfg).unwrap();
            let tol = if cfg.method == QuadMethod::MonteCarlo {
                4.0 * est.stderr
            } else {
                1e-12
            };
            assert!((est.value - 1.0 / 6.0).abs() <= tol, "{cfg:?}: {est:?}");
            let est = integrate(|x| x[0] * x[0] * x[1] * x[1], &unit_cube(), &hs, &cfg).unwrap();
            let tol = if cfg.method == QuadMethod::MonteCarlo {
                4.0 * est.stderr
            } else {
                1e-12
            };
            assert!((est.value - 1.0 / 9.0).abs() <= tol, "{cfg:?}: {est:?}");
        }
    }

    #[test]
    fn inverse_square_root_singularity() {
        let hs = HalfSpace::t_axis(3);
        let est = integrate(
            |x| hs.distance(x).powf(-0.5),
            &unit_cube(),
            &hs,
            &QuadConfig::default(),
        )
        .unwrap();
        assert!((est.value - 2.0).abs() < 1e-10, "{est:?}");
    }

    #[test]
    fn graded_power_singularities() {
        // int_{[0,1]^3} t^gamma (1 + x y) = (1 + 1/4) / (gamma + 1)
        let hs = HalfSpace::t_axis(3);
        for gamma in [-0.9, -0.75, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0] {
            let est = integrate(
                |x| hs.distance(x).powf(gamma) * (1.0 + x[0] * x[1]),
                &unit_cube(),
                &hs,
                &QuadConfig::default(),
            )
            .unwrap();
            let exact = 1.25 / (gamma + 1.0);
            assert!(
                ((est.value - exact) / exact).abs() < 1e-3,
                "gamma={gamma}: {} vs {exact}",
                est.value
            );
        }
    }

    #[test]
    fn graded_rule_never_touches_boundary() {
        let hs = HalfSpace::t_axis(3);
        let region = AxisBox::new(vec![0.0, 0.0, -1.0], vec![1.0, 1.0, 1.0]);
        let est = integrate(
            |x| {
                assert!(hs.distance(x) > 0.0);
                1.0 / hs.distance(x).sqrt()
            },
            &region,
            &hs,
            &QuadConfig::default(),
        )
        .unwrap();
        assert!((est.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn integrand_never_sees_nonpositive_distance() {
        let hs = HalfSpace::new(vec![1.0, 0.5, 0.0], 0.0).unwrap();
        let region = AxisBox::cube(3, -1.0, 1.0);
        for cfg in methods() {
            let est = integrate(
                |x| if hs.distance(x) > 0.0 { 1.0 } else { f64::NAN },
                &region,
                &hs,
                &cfg,
            )
            .unwrap();
            // the box indicator is discontinuous in the rotated frame, as in the half-cube test
            let tol = if cfg.method == QuadMethod::MonteCarlo {
                4.0 * est.stderr
            } else {
                2e-2
            };
            assert!((est.value - 4.0).abs() <= tol, "{cfg:?}: {est:?}");
        }
    }

    #[test]
    fn oblique_normal_half_cube() {
        // nu = (1,1,1)/sqrt(3), d = sqrt(3)/2: the plane x+y+z = 3/2 halves the unit cube
        let hs = HalfSpace::new(vec![1.0, 1.0, 1.0], 3f64.sqrt() / 2.0).unwrap();
        let cfg = QuadConfig {
            points_per_axis: 48,
            ..QuadConfig::default()
        };
        let est = integrate(|_| 1.0, &unit_cube(), &hs, &cfg).unwrap();
        // indicator of the cube is discontinuous in the rotated frame
        assert!((est.value - 0.5).abs() < 2e-2, "{est:?}");
        let mc = QuadConfig {
            method: QuadMethod::MonteCarlo,
            ..QuadConfig::default()
        };
        let est = integrate(|_| 1.0, &unit_cube(), &hs, &mc).unwrap();
        assert!((est.value - 0.5).abs() < 4.0 * est.stderr);
    }

    #[test]
    fn high_dimensional_graded_uses_monte_carlo() {
        let hs = HalfSpace::t_axis(5);
        let region = AxisBox::cube(5, 0.0, 1.0);
        let cfg = QuadConfig {
            sample_count: 4000,
            ..QuadConfig::default()
        };
        let est = integrate(
            |x| hs.distance(x).powf(-0.5) * (1.0 + x[0]),
            &region,
            &hs,
            &cfg,
        )
        .unwrap();
        assert!(est.stderr > 0.0);
        assert!((est.value - 3.0).abs() < 4.0 * est.stderr + 1e-9, "{est:?}");
    }

    #[test]
    fn points_outside_half_space_contribute_nothing() {
        let hs = HalfSpace::t_axis(3);
        let region = AxisBox::new(vec![0.0, 0.0, -1.0], vec![1.0, 1.0, 1.0]);
        for cfg in methods() {
            let est = integrate(|_| 1.0, &region, &hs, &cfg).unwrap();
            let tol = if cfg.method == QuadMethod::MonteCarlo {
                4.0 * est.stderr
            } else {
                0.1
            };
            assert!((est.value - 1.0).abs() <= tol, "{cfg:?}: {est:?}");
        }
        let below = AxisBox::new(vec![0.0, 0.0, -2.0], vec![1.0, 1.0, -1.0]);
        assert_eq!(
            integrate(|_| 1.0, &below, &hs, &QuadConfig::default())
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn pair_shares_nodes() {
        let hs = HalfSpace::t_axis(3);
        let g = |x: &[f64]| (x[0] + 2.0 * x[1]).cos() / hs.distance(x).sqrt();
        for cfg in methods() {
            let (a, b) = integrate_pair(g, g, &unit_cube(), &hs, &cfg).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            let (a, b) = integrate_pair(|x| 2.0 * g(x), g, &unit_cube(), &hs, &cfg).unwrap();
            assert_eq!(a.value.to_bits(), (2.0 * b.value).to_bits());
            let (_, vol) = integrate_pair(g, |_| 1.0, &unit_cube(), &hs, &cfg).unwrap();
            let direct = integrate(|_| 1.0, &unit_cube(), &hs, &cfg).unwrap();
            assert_eq!(vol.value.to_bits(), direct.value.to_bits());
        }
    }

    #[test]
    fn linearity_on_shared_nodes() {
        let hs = HalfSpace::t_axis(3);
        let f = |x: &[f64]| x[0].exp();
        let g = |x: &[f64]| x[1] * x[2];
        for cfg in methods() {
            let (a, b) = integrate_pair(f, g, &unit_cube(), &hs, &cfg).unwrap();
            let c = integrate(|x| 3.0 * f(x) - 0.5 * g(x), &unit_cube(), &hs, &cfg).unwrap();
            assert!((c.value - (3.0 * a.value - 0.5 * b.value)).abs() < 1e-13);
        }
    }

    #[test]
    fn monte_carlo_stderr_halves_when_samples_quadruple() {
        let hs = HalfSpace::t_axis(3);
        let f = |x: &[f64]| (x[0] * x[1]).sin() + x[2] * x[2];
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let small = QuadConfig {
                method: QuadMethod::MonteCarlo,
                sample_count: 5_000,
                seed,
                ..QuadConfig::default()
            };
            let big = QuadConfig {
                sample_count: 20_000,
                ..small.clone()
            };
            let a = integrate(f, &unit_cube(), &hs, &small).unwrap();
            let b = integrate(f, &unit_cube(), &hs, &big).unwrap();
            ratios.push(a.stderr / b.stderr);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean ratio {mean}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let hs = HalfSpace::t_axis(3);
        let f = |x: &[f64]| (x[0] - x[1]).exp() * hs.distance(x).powf(-0.3);
        for cfg in methods() {
            let single = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap();
            let many = rayon::ThreadPoolBuilder::new()
                .num_threads(4)
                .build()
                .unwrap();
            let a = single.install(|| integrate(f, &unit_cube(), &hs, &cfg).unwrap());
            let b = many.install(|| integrate(f, &unit_cube(), &hs, &cfg).unwrap());
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        }
    }

    #[test]
    fn counter_based_samples() {
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        sample_uniform(42, 1000, 3, &mut a);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 * 3 {
            let _: f64 = rng.random();
        }
        for v in b.iter_mut() {
            *v = rng.random();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_sample_is_reported() {
        let hs = HalfSpace::t_axis(3);
        for cfg in methods() {
            let err = integrate(
                |x| if x[0] > 0.5 { f64::NAN } else { 1.0 },
                &unit_cube(),
                &hs,
                &cfg,
            )
            .unwrap_err();
            match err {
                QuadError::NonFinite { point, .. } => assert!(point[0] > 0.5),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_config_and_box() {
        let hs = HalfSpace::t_axis(3);
        let bad = QuadConfig {
            points_per_axis: 1,
            ..QuadConfig::default()
        };
        assert!(matches!(
            integrate(|_| 1.0, &unit_cube(), &hs, &bad),
            Err(QuadError::InvalidConfig(_))
        ));
        let bad = QuadConfig {
            sample_count: 0,
            ..QuadConfig::default()
        };
        assert!(integrate(|_| 1.0, &unit_cube(), &hs, &bad).is_err());
        let bad = QuadConfig {
            grading_exponent: 0,
            ..QuadConfig::default()
        };
        assert!(integrate(|_| 1.0, &unit_cube(), &hs, &bad).is_err());
        let open = AxisBox::new(vec![0.0; 3], vec![1.0, 1.0, f64::INFINITY]);
        assert!(matches!(
            integrate(|_| 1.0, &open, &hs, &QuadConfig::default()),
            Err(QuadError::InvalidBox)
        ));
    }

    #[test]
    fn config_defaults_from_empty_toml() {
        let cfg: QuadConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, QuadConfig::default());
        assert_eq!(cfg.method, QuadMethod::BoundaryGraded);
        assert_eq!(cfg.sample_count, 200_000);
        assert_eq!(cfg.grading_exponent, 4);
        assert_eq!(cfg.seed, 42);
        let mc: QuadConfig = toml::from_str("method = \"monte-carlo\"\nsample_count = 10").unwrap();
        assert_eq!(mc.method, QuadMethod::MonteCarlo);
    }
}
