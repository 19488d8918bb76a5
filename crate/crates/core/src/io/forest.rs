//! Numbers behind a forest plot: per-study subgroup and interaction odds
//! ratios with their intervals and weights, plus one summary row per
//! analysis. Drawing is left to external tools.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AnalysisResult, Estimate, MetaDataset, SubgroupEstimate, WeightScheme};
use crate::swada::{compute_weights, restrict_to_two_arm};

/// An odds ratio (or ratio of odds ratios) with its 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl From<Estimate<f64>> for Interval {
    fn from(e: Estimate<f64>) -> Self {
        let (estimate, lower, upper) = e.exp();
        Self {
            estimate,
            lower,
            upper,
        }
    }
}

fn subgroup(e: &SubgroupEstimate<f64>) -> Option<Interval> {
    e.is_present()
        .then(|| Estimate::wald(e.effect(), e.std_err()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub study_id: String,
    pub n_a: u64,
    pub n_b: u64,
    pub or_a: Option<Interval>,
    pub or_b: Option<Interval>,
    pub ror: Option<Interval>,
    /// Normalized weight of this study under each common-weight scheme.
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSummary {
    pub label: String,
    pub or_a: Option<Interval>,
    pub or_b: Option<Interval>,
    pub ror: Interval,
    pub collapsible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestPayload {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ForestRow>,
    pub summaries: Vec<ForestSummary>,
}

pub fn forest_payload(data: &MetaDataset<f64>, results: &[AnalysisResult<f64>]) -> ForestPayload {
    let scheme_weights: Vec<(WeightScheme, Vec<f64>)> = WeightScheme::COMMON
        .iter()
        .filter_map(|&s| {
            let w = compute_weights(data, s, None)
                .and_then(|w| restrict_to_two_arm(data, &w))
                .ok()?;
            Some((s, w.weights))
        })
        .collect();
    let rows = data
        .studies
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let c = s.contrast();
            ForestRow {
                study_id: s.study_id.clone(),
                n_a: s.arm_a.n(),
                n_b: s.arm_b.n(),
                or_a: subgroup(&s.arm_a),
                or_b: subgroup(&s.arm_b),
                ror: c
                    .is_present()
                    .then(|| Estimate::wald(c.g, c.std_err).into()),
                weights: scheme_weights
                    .iter()
                    .map(|(sch, w)| (sch.name().to_string(), w[j]))
                    .collect(),
            }
        })
        .collect();
    let summaries = results
        .iter()
        .map(|r| ForestSummary {
            label: r.label(),
            or_a: r.beta_a.map(Interval::from),
            or_b: r.beta_b.map(Interval::from),
            ror: r.gamma.into(),
            collapsible: r.collapsible,
        })
        .collect();
    ForestPayload {
        label_a: data.label_a.clone(),
        label_b: data.label_b.clone(),
        rows,
        summaries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_ad;
    use crate::heterogeneity::Pooling;
    use crate::model::StudyRecord;

    #[test]
    fn summary_rows_are_exponentiated_results() {
        let o = |y: f64, s: f64, n| SubgroupEstimate::observed(y, s, n);
        let data = MetaDataset::new(vec![
            StudyRecord::new("a", o(-0.4, 0.3, 50), o(-1.0, 0.4, 30)),
            StudyRecord::new("b", o(0.1, 0.2, 80), o(-0.6, 0.3, 40)),
            StudyRecord::new("c", o(-0.2, 0.25, 60), SubgroupEstimate::Absent),
        ]);
        let ad = estimate_ad(&data, Pooling::RE).unwrap();
        let p = forest_payload(&data, std::slice::from_ref(&ad));
        assert_eq!(p.rows.len(), 3);
        assert!(p.rows[2].or_b.is_none() && p.rows[2].ror.is_none());
        assert_eq!(p.rows[2].weights["equal"], 0.0);
        let s = &p.summaries[0];
        assert_eq!(s.ror.estimate, ad.gamma.point.exp());
        assert_eq!(s.ror.lower, ad.gamma.ci_lower.exp());
        let ror_a = p.rows[0].ror.unwrap().estimate;
        assert!((ror_a - (0.6f64).exp()).abs() < 1e-12);
    }
}
