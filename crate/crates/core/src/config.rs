//! TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::{GroupError, GroupSpec};
use crate::hcalc::{CalcError, HalfSpace, DEFAULT_STEP};
use crate::quadrature::{QuadConfig, QuadError};
use crate::trials::BumpSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupBlock {
    /// `heisenberg:N`, `abelian:N`, or a path to a JSON group definition.
    pub name: String,
}

impl Default for GroupBlock {
    fn default() -> Self {
        GroupBlock {
            name: "heisenberg:1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalfSpaceBlock {
    /// `t-axis` or `x1-axis`; ignored when `normal` is set.
    pub preset: Option<String>,
    pub normal: Option<Vec<f64>>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialFamily {
    #[default]
    Bump,
    Ground,
    Sharpness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialBlock {
    pub family: TrialFamily,
    /// Number of random interior bumps when `bumps` is empty.
    pub count: usize,
    pub bumps: Vec<BumpSpec>,
    pub epsilons: Vec<f64>,
    pub cutoff_radius: f64,
}

impl Default for TrialBlock {
    fn default() -> Self {
        TrialBlock {
            family: TrialFamily::Bump,
            count: 10,
            bumps: Vec::new(),
            epsilons: vec![0.5, 0.2, 0.1, 0.05],
            cutoff_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    /// Values of beta for the general inequality; empty means the optimal one.
    pub betas: Vec<f64>,
    pub fuzz_samples: u64,
    pub fuzz_p_min: f64,
    pub fuzz_p_max: f64,
    /// Finite-difference step.
    pub step: f64,
    pub identity_points: usize,
    pub identity_ranks: Vec<usize>,
    /// Dilation applied to the amplitude of each Sobolev trial.
    pub sobolev_scale: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            betas: Vec::new(),
            fuzz_samples: 1_000_000,
            fuzz_p_min: 2.0,
            fuzz_p_max: 5.0,
            step: DEFAULT_STEP,
            identity_points: 1000,
            identity_ranks: vec![1, 2, 3],
            sobolev_scale: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p_values: Vec<f64>,
    pub group: GroupBlock,
    pub halfspace: HalfSpaceBlock,
    pub trial: TrialBlock,
    /// `quadrature.seed` is the batch seed; each job derives its own.
    pub quadrature: QuadConfig,
    pub experiment: ExperimentBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p_values: vec![2.0],
            group: GroupBlock::default(),
            halfspace: HalfSpaceBlock::default(),
            trial: TrialBlock::default(),
            quadrature: QuadConfig::default(),
            experiment: ExperimentBlock::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> u64 {
        self.quadrature.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.quadrature.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.p_values.is_empty() {
            return invalid("p_values is empty".into());
        }
        if let Some(p) = self
            .p_values
            .iter()
            .find(|p| !(**p > 1.0) || !p.is_finite())
        {
            return invalid(format!("p must exceed 1, got {p}"));
        }
        if let Some(e) = self.trial.epsilons.iter().find(|e| !(**e > 0.0)) {
            return invalid(format!("epsilons must be positive, got {e}"));
        }
        if !(self.trial.cutoff_radius > 0.0) {
            return invalid(format!(
                "cutoff_radius must be positive, got {}",
                self.trial.cutoff_radius
            ));
        }
        if self.trial.bumps.is_empty() && self.trial.count == 0 {
            return invalid("trial.count is zero and no bumps are listed".into());
        }
        let e = &self.experiment;
        if !(e.step > 0.0) {
            return invalid(format!("step must be positive, got {}", e.step));
        }
        if !(e.fuzz_p_min >= 2.0 && e.fuzz_p_max >= e.fuzz_p_min) {
            return invalid(format!(
                "fuzz p-range [{}, {}] must satisfy 2 <= min <= max",
                e.fuzz_p_min, e.fuzz_p_max
            ));
        }
        if !(e.sobolev_scale > 0.0) {
            return invalid(format!(
                "sobolev_scale must be positive, got {}",
                e.sobolev_scale
            ));
        }
        if e.identity_ranks.contains(&0) {
            return invalid("identity_ranks must be positive".into());
        }
        self.quadrature.validate()?;
        Ok(())
    }

    pub fn group_spec(&self) -> Result<GroupSpec, ConfigError> {
        Ok(GroupSpec::from_name(&self.group.name)?)
    }

    pub fn half_space(&self, dim: usize) -> Result<HalfSpace, ConfigError> {
        let b = &self.halfspace;
        let hs = match (&b.normal, &b.preset) {
            (Some(nu), _) => HalfSpace::new(nu.clone(), b.offset)?,
            (None, preset) => {
                let name = preset.as_deref().unwrap_or("t-axis");
                let base = HalfSpace::preset(name, dim).ok_or_else(|| {
                    ConfigError::Invalid(format!("unknown half-space preset '{name}'"))
                })?;
                HalfSpace::new(base.normal().to_vec(), b.offset)?
            }
        };
        if hs.dim() != dim {
            return Err(ConfigError::Invalid(format!(
                "half-space normal has {} components, group has dimension {dim}",
                hs.dim()
            )));
        }
        Ok(hs)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
