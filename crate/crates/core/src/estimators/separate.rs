use std::collections::BTreeMap;

use super::{contrast_sample, subgroup_sample, Arm};
use crate::error::{Error, Result};
use crate::heterogeneity::{pool_univariate, Pooling};
use crate::model::{AnalysisResult, Estimate, MetaDataset, Method, WeightScheme, WeightVector};
use crate::scalar::Scalar;

/// Difference of averages: each subgroup column is pooled on its own and the
/// interaction is the difference of the two pooled means.
pub fn estimate_da<T: Scalar>(
    data: &MetaDataset<T>,
    pooling: Pooling,
) -> Result<AnalysisResult<T>> {
    let mut pools = Vec::with_capacity(2);
    for (arm, label) in [(Arm::A, &data.label_a), (Arm::B, &data.label_b)] {
        let sample = subgroup_sample(data, arm);
        if sample.usable_count() == 0 {
            return Err(Error::SubgroupHasNoData(label.clone()));
        }
        let tau2 = pooling.tau2(&sample)?;
        let pooled = pool_univariate(&sample, tau2, None)?;
        pools.push((pooled, tau2));
    }
    let (pb, tb) = pools.pop().expect("two pools");
    let (pa, ta) = pools.pop().expect("two pools");
    let gamma = Estimate::wald(pa.point - pb.point, pa.std_err.hypot(pb.std_err));
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
    let collapsible = pa
        .weights_used
        .iter()
        .zip(&pb.weights_used)
        .all(|(&a, &b)| (a - b).abs() <= tol);
    let mut tau_estimates = BTreeMap::new();
    tau_estimates.insert("tau2_a".to_string(), ta);
    tau_estimates.insert("tau2_b".to_string(), tb);
    Ok(AnalysisResult {
        method: Method::DifferenceOfAverages,
        variant: pooling.label(),
        beta_a: Some(Estimate::wald(pa.point, pa.std_err)),
        beta_b: Some(Estimate::wald(pb.point, pb.std_err)),
        gamma,
        tau_estimates,
        weights_a: Some(WeightVector {
            weights: pa.weights_used,
            scheme: WeightScheme::InverseVariance,
            tau2_used: ta,
        }),
        weights_b: Some(WeightVector {
            weights: pb.weights_used,
            scheme: WeightScheme::InverseVariance,
            tau2_used: tb,
        }),
        weights_gamma: None,
        collapsible,
    })
}

/// Average difference: inverse-variance pool of the within-study contrasts.
/// Studies lacking a subgroup get zero weight.
pub fn estimate_ad<T: Scalar>(
    data: &MetaDataset<T>,
    pooling: Pooling,
) -> Result<AnalysisResult<T>> {
    let sample = contrast_sample(data);
    if sample.usable_count() == 0 {
        return Err(Error::NoTwoArmStudy);
    }
    let tau2 = pooling.tau2(&sample)?;
    let pooled = pool_univariate(&sample, tau2, None)?;
    let mut out = AnalysisResult::gamma_only(
        Method::AverageDifference,
        pooling.label(),
        Estimate::wald(pooled.point, pooled.std_err),
    );
    out.tau_estimates.insert("tau2_gamma".to_string(), tau2);
    out.weights_gamma = Some(WeightVector {
        weights: pooled.weights_used,
        scheme: WeightScheme::InteractionRe,
        tau2_used: tau2,
    });
    Ok(out)
}
