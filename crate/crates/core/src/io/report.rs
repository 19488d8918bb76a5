//! JSON and CSV renderings of analysis and simulation output.

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::forest::ForestPayload;
use crate::diagnostics::{InfluenceReport, MismatchReport};
use crate::model::{AnalysisResult, Estimate};
use crate::simulation::ScenarioMetrics;

/// Version of every JSON document written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Orientation note carried by every output.
pub const ORIENTATION: &str = "gamma = effect(A) - effect(B); ratios are OR(A) / OR(B)";

#[derive(Debug, Clone, Serialize)]
pub struct InputSummary {
    pub studies: usize,
    pub two_arm_studies: usize,
    pub label_a: String,
    pub label_b: String,
    pub excluded_single_subgroup: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub orientation: &'static str,
    pub input: InputSummary,
    pub results: Vec<AnalysisResult<f64>>,
    pub forest: ForestPayload,
}

impl AnalysisReport {
    pub fn new(
        input: InputSummary,
        results: Vec<AnalysisResult<f64>>,
        forest: ForestPayload,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: crate::VERSION,
            orientation: ORIENTATION,
            input,
            results,
            forest,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub orientation: &'static str,
    pub study_ids: Vec<String>,
    pub mismatch: MismatchReport<f64>,
    pub leave_one_out: Option<InfluenceReport<f64>>,
}

impl DiagnosticsReport {
    pub fn new(
        study_ids: Vec<String>,
        mismatch: MismatchReport<f64>,
        leave_one_out: Option<InfluenceReport<f64>>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: crate::VERSION,
            orientation: ORIENTATION,
            study_ids,
            mismatch,
            leave_one_out,
        }
    }
}

fn cells(e: Option<Estimate<f64>>) -> [String; 3] {
    match e {
        Some(e) => {
            let (p, lo, hi) = e.exp();
            [p.to_string(), lo.to_string(), hi.to_string()]
        }
        None => [String::new(), String::new(), String::new()],
    }
}

/// One row per result, ratios on the odds scale.
pub fn results_csv(results: &[AnalysisResult<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "variant",
        "or_a",
        "or_a_lower",
        "or_a_upper",
        "or_b",
        "or_b_lower",
        "or_b_upper",
        "ror",
        "ror_lower",
        "ror_upper",
        "gamma_a_minus_b",
        "gamma_se",
        "collapsible",
    ])
    .expect("in-memory write");
    for r in results {
        let mut row = vec![r.method.name().to_string(), r.variant.clone()];
        row.extend(cells(r.beta_a));
        row.extend(cells(r.beta_b));
        row.extend(cells(Some(r.gamma)));
        row.push(r.gamma.point.to_string());
        row.push(r.gamma.std_err.to_string());
        row.push(r.collapsible.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Provenance block for simulation outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool_version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(seed: u64, config_bytes: &[u8]) -> Self {
        Self {
            tool_version: crate::VERSION,
            seed,
            config_sha256: sha256_hex(config_bytes),
        }
    }

    /// `#`-prefixed header lines for CSV files.
    pub fn csv_header(&self) -> String {
        format!(
            "# tool_version: {}\n# seed: {}\n# config_sha256: {}\n",
            self.tool_version, self.seed, self.config_sha256
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport<'a> {
    pub schema_version: u32,
    pub provenance: &'a Provenance,
    pub orientation: &'static str,
    pub scenarios: &'a [ScenarioMetrics],
}

pub fn simulation_json(provenance: &Provenance, scenarios: &[ScenarioMetrics]) -> String {
    let r = SimulationReport {
        schema_version: SCHEMA_VERSION,
        provenance,
        orientation: ORIENTATION,
        scenarios,
    };
    serde_json::to_string_pretty(&r).expect("metrics serialize")
}

/// One row per scenario and method.
pub fn simulation_csv(provenance: &Provenance, scenarios: &[ScenarioMetrics]) -> String {
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "k",
        "prevalence_scheme",
        "tau1",
        "tau2",
        "delta",
        "reps",
        "method",
        "n_ok",
        "n_failed",
        "coverage_gamma",
        "coverage_gamma_mcse",
        "coverage_beta",
        "coverage_beta_mcse",
        "bias_gamma",
        "bias_gamma_mcse",
        "mean_width_gamma",
        "mean_width_beta",
        "width_ratio_gamma",
        "width_ratio_beta",
        "mean_mismatch",
        "sd_mismatch",
    ])
    .expect("in-memory write");
    for s in scenarios {
        let c = &s.config;
        for m in &s.methods {
            w.write_record([
                s.label.clone(),
                c.k.to_string(),
                c.prevalence_scheme.name().to_string(),
                c.tau1.to_string(),
                c.tau2().to_string(),
                c.delta.to_string(),
                s.reps.to_string(),
                m.method.clone(),
                m.n_ok.to_string(),
                m.n_failed.to_string(),
                m.coverage_gamma.to_string(),
                m.coverage_gamma_mcse.to_string(),
                opt(m.coverage_beta),
                opt(m.coverage_beta_mcse),
                m.bias_gamma.to_string(),
                m.bias_gamma_mcse.to_string(),
                m.mean_width_gamma.to_string(),
                opt(m.mean_width_beta),
                opt(m.width_ratio_gamma),
                opt(m.width_ratio_beta),
                opt(m.mean_mismatch),
                opt(m.sd_mismatch),
            ])
            .expect("in-memory write");
        }
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
    provenance.csv_header() + &body
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn provenance_header_is_commented() {
        let p = Provenance::new(42, b"{}");
        assert!(p.csv_header().lines().all(|l| l.starts_with("# ")));
        assert!(p.csv_header().contains("seed: 42"));
    }
}
