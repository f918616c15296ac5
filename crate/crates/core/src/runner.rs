//! Runs one experiment command against a configuration.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, TrialFamily};
use crate::experiments::{
    bft_inequality_fuzz, constants, job_seed, nonincreasing_violation, ExperimentError,
    QuotientReport, Setting,
};
use crate::group::{GroupKind, GroupSpec};
use crate::hcalc::{HalfSpace, ScalarField};
use crate::identities::identity_suite;
use crate::report::{Report, Row};
use crate::trials::{
    inverse_ground_transform, make_bump, random_interior_bumps, sharpness_trial, BumpSpec,
    SharpnessSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Identities,
    Hardy,
    GeneralHardy,
    Remainder,
    Sharpness,
    Sobolev,
    BftFuzz,
    LuanYoung,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Identities => "identities",
            Command::Hardy => "hardy",
            Command::GeneralHardy => "general-hardy",
            Command::Remainder => "remainder",
            Command::Sharpness => "sharpness",
            Command::Sobolev => "sobolev",
            Command::BftFuzz => "bft-fuzz",
            Command::LuanYoung => "luan-young",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl RunError {
    /// Process exit code: 3 for configuration problems, 2 for numerical contract failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 3,
            RunError::Experiment(ExperimentError::Inconsistent { .. }) => 2,
            RunError::Experiment(ExperimentError::Quadrature(_)) => 2,
            RunError::Experiment(_) => 3,
        }
    }
}

struct Context {
    group: GroupSpec,
    half_space: HalfSpace,
    digest: String,
}

fn context(cfg: &ExperimentConfig) -> Result<Context, ConfigError> {
    cfg.validate()?;
    let group = cfg.group_spec()?;
    let half_space = cfg.half_space(group.total_dim())?;
    half_space.check(&group)?;
    Ok(Context {
        group,
        half_space,
        digest: cfg.digest(),
    })
}

fn setting(
    cfg: &ExperimentConfig,
    ctx: &Context,
    half_space: HalfSpace,
) -> Result<Setting, RunError> {
    let mut s = Setting::new(ctx.group.clone(), half_space, cfg.quadrature.clone())?
        .with_digest(ctx.digest.clone());
    s.step = cfg.experiment.step;
    Ok(s)
}

fn bump_specs(cfg: &ExperimentConfig, hs: &HalfSpace) -> Result<Vec<BumpSpec>, ConfigError> {
    if cfg.trial.bumps.is_empty() {
        return Ok(random_interior_bumps(hs, cfg.trial.count, cfg.seed()));
    }
    for b in &cfg.trial.bumps {
        b.require_interior(hs)
            .map_err(|e| ConfigError::Invalid(format!("bump at {:?}: {e}", b.center)))?;
    }
    Ok(cfg.trial.bumps.clone())
}

/// Trial functions for one exponent, in configuration order.
pub fn build_trials(
    cfg: &ExperimentConfig,
    hs: &HalfSpace,
    p: f64,
) -> Result<Vec<ScalarField>, ConfigError> {
    let invalid = |e: crate::trials::TrialError| ConfigError::Invalid(e.to_string());
    match cfg.trial.family {
        TrialFamily::Sharpness => sharpness_family(cfg, hs, p),
        TrialFamily::Bump => bump_specs(cfg, hs)?
            .iter()
            .map(|b| make_bump(b).map_err(invalid))
            .collect(),
        TrialFamily::Ground => bump_specs(cfg, hs)?
            .iter()
            .map(|b| {
                make_bump(b)
                    .and_then(|v| inverse_ground_transform(&v, hs, p))
                    .map_err(invalid)
            })
            .collect(),
    }
}

fn sharpness_family(
    cfg: &ExperimentConfig,
    hs: &HalfSpace,
    p: f64,
) -> Result<Vec<ScalarField>, ConfigError> {
    cfg.trial
        .epsilons
        .iter()
        .map(|&eps| {
            let spec =
                SharpnessSpec::centered_on_boundary(p, eps, hs.clone(), cfg.trial.cutoff_radius);
            sharpness_trial(&spec).map_err(|e| ConfigError::Invalid(e.to_string()))
        })
        .collect()
}

/// Evaluates `eval` on every (p, trial) job with a per-job quadrature seed.
fn run_jobs<F>(
    cfg: &ExperimentConfig,
    base: &Setting,
    trials: &[(f64, Vec<ScalarField>)],
    eval: F,
) -> Result<Vec<QuotientReport>, RunError>
where
    F: Fn(&Setting, &ScalarField, f64) -> Result<Vec<QuotientReport>, ExperimentError> + Sync,
{
    let jobs: Vec<(f64, &ScalarField)> = trials
        .iter()
        .flat_map(|(p, fields)| fields.iter().map(move |u| (*p, u)))
        .collect();
    let nested: Vec<Vec<QuotientReport>> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, (p, u))| {
            let s = base.clone().with_seed(job_seed(cfg.seed(), j as u64));
            eval(&s, u, *p)
        })
        .collect::<Result<_, _>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn trials_per_p(
    cfg: &ExperimentConfig,
    hs: &HalfSpace,
) -> Result<Vec<(f64, Vec<ScalarField>)>, ConfigError> {
    cfg.p_values
        .iter()
        .map(|&p| Ok((p, build_trials(cfg, hs, p)?)))
        .collect()
}

fn quotient_rows(reports: &[QuotientReport]) -> Vec<Row> {
    reports.iter().map(Row::from_quotient).collect()
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Report, RunError> {
    let rows = match command {
        Command::Identities => {
            cfg.validate()?;
            let digest = cfg.digest();
            let suites: Vec<_> = cfg
                .experiment
                .identity_ranks
                .par_iter()
                .map(|&n| {
                    identity_suite(
                        n,
                        cfg.experiment.identity_points,
                        job_seed(cfg.seed(), n as u64),
                        cfg.experiment.step,
                    )
                })
                .collect::<Result<_, _>>()
                .map_err(ConfigError::Calc)?;
            suites
                .iter()
                .flatten()
                .map(|c| Row::from_identity(c, cfg.seed(), &digest))
                .collect()
        }
        Command::BftFuzz => {
            cfg.validate()?;
            let e = &cfg.experiment;
            let f = bft_inequality_fuzz(e.fuzz_p_min, e.fuzz_p_max, e.fuzz_samples, cfg.seed())?;
            vec![Row::from_fuzz(&f, &cfg.digest())]
        }
        Command::Hardy => {
            let ctx = context(cfg)?;
            let base = setting(cfg, &ctx, ctx.half_space.clone())?;
            let trials = trials_per_p(cfg, &ctx.half_space)?;
            quotient_rows(&run_jobs(cfg, &base, &trials, |s, u, p| {
                Ok(vec![s.hardy_quotient(u, p)?])
            })?)
        }
        Command::GeneralHardy => {
            let ctx = context(cfg)?;
            let base = setting(cfg, &ctx, ctx.half_space.clone())?;
            let trials = trials_per_p(cfg, &ctx.half_space)?;
            let reports = run_jobs(cfg, &base, &trials, |s, u, p| {
                let betas = if cfg.experiment.betas.is_empty() {
                    vec![constants(p, None)?.beta_star]
                } else {
                    cfg.experiment.betas.clone()
                };
                betas
                    .iter()
                    .map(|&b| s.general_hardy_margin(u, p, b))
                    .collect()
            })?;
            quotient_rows(&reports)
        }
        Command::Remainder => {
            let ctx = context(cfg)?;
            let base = setting(cfg, &ctx, ctx.half_space.clone())?;
            let trials = trials_per_p(cfg, &ctx.half_space)?;
            quotient_rows(&run_jobs(cfg, &base, &trials, |s, u, p| {
                Ok(vec![s.remainder_check(u, p)?])
            })?)
        }
        Command::Sharpness => {
            let ctx = context(cfg)?;
            let base = setting(cfg, &ctx, ctx.half_space.clone())?;
            let mut rows = Vec::new();
            for (j, &p) in cfg.p_values.iter().enumerate() {
                let fields = sharpness_family(cfg, &ctx.half_space, p)?;
                let s = base.clone().with_seed(job_seed(cfg.seed(), j as u64));
                let reports = s.sharpness_sweep(&fields, p)?;
                let quotients: Vec<f64> = reports.iter().map(|r| r.value).collect();
                rows.extend(quotient_rows(&reports));
                if let Some(last) = reports.last() {
                    let mut trend = Row::from_quotient(last);
                    trend.csv.inequality_id = "sharpness-trend".into();
                    trend.csv.quotient_or_margin = nonincreasing_violation(&quotients);
                    trend.csv.bound = 0.0;
                    trend.csv.numerator = None;
                    trend.csv.denominator = None;
                    trend.csv.stderr = reports.iter().map(|r| r.stderr).fold(0.0, f64::max);
                    trend.tolerance = 3.0 * trend.csv.stderr;
                    trend.trial = "epsilon sweep".into();
                    trend.passed = trend.csv.quotient_or_margin <= trend.tolerance;
                    rows.push(trend);
                }
            }
            rows
        }
        Command::Sobolev => {
            let ctx = context(cfg)?;
            let base = setting(cfg, &ctx, ctx.half_space.clone())?;
            let trials = trials_per_p(cfg, &ctx.half_space)?;
            let lambda = cfg.experiment.sobolev_scale;
            let reports = run_jobs(cfg, &base, &trials, |s, u, p| {
                let mut r = s.hardy_sobolev_ratio(u, p)?;
                let mut scaled =
                    s.hardy_sobolev_ratio(&scale_amplitude(u, lambda, cfg.experiment.step), p)?;
                scaled.inequality_id = "sobolev-scaled".into();
                scaled.bound = r.value;
                scaled.margin = (scaled.value - r.value).abs();
                let tol = (3.0 * (r.stderr + scaled.stderr)).max(1e-9 * r.value.abs());
                scaled.tolerance = tol;
                scaled.passed = scaled.margin <= tol;
                r.passed = r.passed && r.value.is_finite();
                Ok(vec![r, scaled])
            })?;
            let mut rows = quotient_rows(&reports);
            for &p in &cfg.p_values {
                let best = reports
                    .iter()
                    .filter(|r| r.inequality_id == "sobolev" && r.p == p)
                    .min_by(|a, b| a.value.total_cmp(&b.value));
                if let Some(best) = best {
                    let mut row = Row::from_quotient(best);
                    row.csv.inequality_id = "sobolev-infimum".into();
                    rows.push(row);
                }
            }
            rows
        }
        Command::LuanYoung => {
            let ctx = context(cfg)?;
            if !matches!(ctx.group.kind(), GroupKind::Heisenberg { .. }) {
                return Err(ExperimentError::RequiresHeisenberg("Luan-Young check").into());
            }
            let hs = HalfSpace::t_axis(ctx.group.total_dim());
            let base = setting(cfg, &ctx, hs.clone())?;
            let trials = vec![(2.0, build_trials(cfg, &hs, 2.0)?)];
            quotient_rows(&run_jobs(cfg, &base, &trials, |s, u, _| {
                Ok(vec![s.luan_young_check(u)?])
            })?)
        }
    };
    Ok(Report::new(command.name(), cfg, rows))
}

/// `lambda * u`.
pub fn scale_amplitude(u: &ScalarField, lambda: f64, step: f64) -> ScalarField {
    let (a, b) = (u.clone(), u.clone());
    ScalarField::new(
        format!("{lambda}*{}", u.id()),
        u.support().clone(),
        move |x| lambda * a.value(x),
    )
    .with_gradient(move |x, out| {
        b.gradient(x, step, out);
        out.iter_mut().for_each(|g| *g *= lambda);
    })
}
