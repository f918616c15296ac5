//! Horizontal calculus, half-space Hardy-type inequalities and singular
//! quadrature on stratified Lie groups, with the Heisenberg group as the
//! main worked case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod group;
pub mod hcalc;
pub mod identities;
pub mod polyfield;
pub mod quadrature;
pub mod report;
pub mod runner;
pub mod trials;

pub use config::{ConfigError, ExperimentConfig};
pub use experiments::{
    beta_coefficient, constants, Constants, ExperimentError, QuotientReport, Setting,
};
pub use group::{GroupError, GroupKind, GroupSpec};
pub use hcalc::{AxisBox, CalcError, DistanceCalculus, HalfSpace, ScalarField};
pub use polyfield::{PolyError, Polynomial};
pub use quadrature::{IntegralEstimate, QuadConfig, QuadError, QuadMethod};
pub use report::Report;
pub use runner::{run, Command, RunError};
pub use trials::{BumpSpec, SharpnessSpec, TrialError};
