//! CSV and JSON result tables.

use std::io::Write;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{FuzzReport, QuotientReport, Q_CONVENTION};
use crate::identities::IdentityCheck;

/// The fixed CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub inequality_id: String,
    pub p: Option<f64>,
    pub quotient_or_margin: f64,
    pub bound: f64,
    pub numerator: Option<f64>,
    pub denominator: Option<f64>,
    pub stderr: f64,
    pub evaluations: u64,
    pub seed: u64,
    pub config_digest: String,
}

pub const CSV_HEADER: [&str; 10] = [
    "inequality_id",
    "p",
    "quotient_or_margin",
    "bound",
    "numerator",
    "denominator",
    "stderr",
    "evaluations",
    "seed",
    "config_digest",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    #[serde(flatten)]
    pub csv: CsvRow,
    pub label: String,
    pub group: String,
    pub trial: String,
    pub normal: Option<Vec<f64>>,
    pub offset: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl Row {
    pub fn from_quotient(r: &QuotientReport) -> Self {
        Row {
            csv: CsvRow {
                inequality_id: r.inequality_id.clone(),
                p: Some(r.p),
                quotient_or_margin: r.value,
                bound: r.bound,
                numerator: Some(r.numerator.value),
                denominator: Some(r.denominator.value),
                stderr: r.stderr,
                evaluations: r.evaluations(),
                seed: r.seed,
                config_digest: r.config_digest.clone(),
            },
            label: r.label.clone(),
            group: r.group.clone(),
            trial: r.trial.clone(),
            normal: Some(r.normal.clone()),
            offset: Some(r.offset),
            tolerance: r.tolerance,
            passed: r.passed,
        }
    }

    pub fn from_identity(c: &IdentityCheck, seed: u64, digest: &str) -> Self {
        Row {
            csv: CsvRow {
                inequality_id: format!("identity:{}[{}]", c.name, c.group),
                p: None,
                quotient_or_margin: c.max_residual,
                bound: c.threshold,
                numerator: None,
                denominator: None,
                stderr: 0.0,
                evaluations: c.samples as u64,
                seed,
                config_digest: digest.to_string(),
            },
            label: "max-residual".into(),
            group: c.group.clone(),
            trial: String::new(),
            normal: None,
            offset: None,
            tolerance: 0.0,
            passed: c.passed,
        }
    }

    /// Worst relative gap against the violation threshold; numerator and
    /// denominator hold the violation and sample counts.
    pub fn from_fuzz(f: &FuzzReport, digest: &str) -> Self {
        Row {
            csv: CsvRow {
                inequality_id: "bft-fuzz".into(),
                p: None,
                quotient_or_margin: f.worst_relative,
                bound: -1e-12,
                numerator: Some(f.violations as f64),
                denominator: Some(f.samples as f64),
                stderr: 0.0,
                evaluations: f.samples,
                seed: f.seed,
                config_digest: digest.to_string(),
            },
            label: format!("p in [{}, {}]", f.p_min, f.p_max),
            group: String::new(),
            trial: "random vectors, dims 1-5".into(),
            normal: None,
            offset: None,
            tolerance: 0.0,
            passed: f.violations == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub config_digest: String,
    pub q_convention: &'static str,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig, rows: Vec<Row>) -> Self {
        Report {
            command: command.to_string(),
            config_digest: config.digest(),
            q_convention: Q_CONVENTION,
            config: config.clone(),
            rows,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.serialize(&r.csv)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::IntegralEstimate;

    fn sample() -> Report {
        let cfg = ExperimentConfig::default();
        let est = IntegralEstimate {
            value: 2.0,
            stderr: 0.01,
            evaluations: 100,
        };
        let q = QuotientReport {
            inequality_id: "hardy".into(),
            label: "verification".into(),
            p: 2.0,
            group: "H1".into(),
            normal: vec![0.0, 0.0, 1.0],
            offset: 0.0,
            trial: "bump".into(),
            numerator: est,
            denominator: est,
            kind: crate::experiments::ValueKind::Quotient,
            value: 1.0,
            bound: 0.25,
            margin: 0.75,
            stderr: 0.007,
            tolerance: 0.021,
            passed: true,
            seed: 5,
            q_convention: Q_CONVENTION,
            config_digest: cfg.digest(),
        };
        Report::new("hardy", &cfg, vec![Row::from_quotient(&q)])
    }

    #[test]
    fn csv_has_fixed_columns() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 10);
        assert_eq!(row[0], "hardy");
        assert_eq!(row[2], "1.0");
    }

    #[test]
    fn json_mirrors_csv_and_echoes_config() {
        let mut buf = Vec::new();
        sample().write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let row = &v["rows"][0];
        for col in CSV_HEADER {
            assert!(row.get(col).is_some(), "missing {col}");
        }
        assert_eq!(v["config"]["group"]["name"], "heisenberg:1");
        assert_eq!(v["q_convention"], "homogeneous");
    }
}
