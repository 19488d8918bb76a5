use std::collections::BTreeMap;

use super::contrast_sample;
use crate::error::{Error, Result};
use crate::heterogeneity::{Pooling, UnivariateSample};
use crate::model::{AnalysisResult, Estimate, MetaDataset, Method, WeightVector};
use crate::scalar::Scalar;

/// Centered collapsible model: mean `(phi + gamma/2, phi - gamma/2)` for
/// `(A, B)` with one common weight per study. The level heterogeneity is
/// estimated from the study midpoints and the interaction heterogeneity from
/// the contrasts; with the prevalence fixed at 1/2 the two are uncorrelated.
pub fn fit_centered_collapsible<T: Scalar>(
    data: &MetaDataset<T>,
    weights: &WeightVector<T>,
    pooling: Pooling,
) -> Result<AnalysisResult<T>> {
    if weights.len() != data.k() {
        return Err(Error::Dimension(format!(
            "{} weights for {} studies",
            weights.len(),
            data.k()
        )));
    }
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    for (s, &w) in data.studies.iter().zip(&weights.weights) {
        if w != T::zero() && !s.has_both() {
            return Err(Error::IncompatibleWeights(s.study_id.clone()));
        }
    }
    let (mid, mid_var): (Vec<T>, Vec<T>) = data
        .studies
        .iter()
        .map(|s| {
            if s.has_both() {
                (
                    half * (s.arm_a.effect() + s.arm_b.effect()),
                    quarter * (s.arm_a.variance() + s.arm_b.variance()),
                )
            } else {
                (T::zero(), T::infinity())
            }
        })
        .unzip();
    let tau2_level = pooling.tau2(&UnivariateSample {
        effects: mid.clone(),
        variances: mid_var,
    })?;
    let tau2_gamma = pooling.tau2(&contrast_sample(data))?;

    let (mut phi, mut gamma) = (T::zero(), T::zero());
    let (mut v_phi, mut v_gamma, mut cov) = (T::zero(), T::zero(), T::zero());
    for ((s, &w), &m) in data.studies.iter().zip(&weights.weights).zip(&mid) {
        if w == T::zero() {
            continue;
        }
        let (va, vb) = (s.arm_a.variance(), s.arm_b.variance());
        let w2 = w * w;
        phi += w * m;
        gamma += w * (s.arm_a.effect() - s.arm_b.effect());
        v_phi += w2 * (tau2_level + quarter * (va + vb));
        v_gamma += w2 * (va + vb + tau2_gamma);
        cov += w2 * half * (va - vb);
    }
    let se = |x: T| x.max(T::zero()).sqrt();
    let beta_a = Estimate::wald(phi + half * gamma, se(v_phi + quarter * v_gamma + cov));
    let beta_b = Estimate::wald(phi - half * gamma, se(v_phi + quarter * v_gamma - cov));
    let mut tau_estimates = BTreeMap::new();
    tau_estimates.insert("tau2_level".to_string(), tau2_level);
    tau_estimates.insert("tau2_gamma".to_string(), tau2_gamma);
    Ok(AnalysisResult {
        method: Method::CenteredCollapsible,
        variant: weights.scheme.name().to_string(),
        beta_a: Some(beta_a),
        beta_b: Some(beta_b),
        gamma: Estimate::wald(gamma, se(v_gamma)),
        tau_estimates,
        weights_a: Some(weights.clone()),
        weights_b: Some(weights.clone()),
        weights_gamma: Some(weights.clone()),
        collapsible: true,
    })
}
