//! Mismatch between the difference of averages and the average difference.
//!
//! Both interaction estimates are linear in the stacked observations
//! `y = (y_A1, y_B1, ..., y_Ak, y_Bk)`, so their difference is a single
//! linear functional `D y` with exact variance `D S D'`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{contrast_sample, subgroup_sample, Arm};
use crate::heterogeneity::{inverse_variance_weights, Pooling};
use crate::model::{MetaDataset, WeightScheme, WeightVector};
use crate::scalar::Scalar;
use crate::swada::{compute_weights, restrict_to_two_arm};

/// Observation covariance used for `Var(delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovarianceModel<T> {
    SamplingOnly,
    WithTau { tau2_a: T, tau2_b: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport<T> {
    pub delta_hat: T,
    pub var_delta: T,
    /// Coefficients on `(y_A1, y_B1, ..., y_Ak, y_Bk)`.
    pub d_matrix: Vec<T>,
    pub per_study_contribution: Vec<T>,
    pub covariance: CovarianceModel<T>,
}

/// How one side of the comparison chooses its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSpec {
    /// Separate inverse-variance weights (per column for DA, on contrasts for AD).
    InverseVariance(Pooling),
    /// One common-weight scheme, restricted to two-arm studies.
    Scheme(WeightScheme),
}

/// Builds `D`, evaluates `delta = D y` and `Var(delta) = D S D'`.
pub fn mismatch<T: Scalar>(
    data: &MetaDataset<T>,
    da_weights: (&WeightVector<T>, &WeightVector<T>),
    ad_weights: &WeightVector<T>,
    covariance: CovarianceModel<T>,
) -> Result<MismatchReport<T>> {
    let k = data.k();
    let (wa, wb) = da_weights;
    for (name, w) in [
        ("DA subgroup A", wa),
        ("DA subgroup B", wb),
        ("AD", ad_weights),
    ] {
        if w.len() != k {
            return Err(Error::Dimension(format!(
                "{name} weights have length {}, expected {k}",
                w.len()
            )));
        }
    }
    let (ta, tb) = match covariance {
        CovarianceModel::SamplingOnly => (T::zero(), T::zero()),
        CovarianceModel::WithTau { tau2_a, tau2_b } => (tau2_a, tau2_b),
    };
    let mut d = Vec::with_capacity(2 * k);
    let mut contrib = Vec::with_capacity(k);
    let mut delta_hat = T::zero();
    let mut var = T::zero();
    for (j, s) in data.studies.iter().enumerate() {
        let c = ad_weights.weights[j];
        let da = wa.weights[j] - c;
        let db = c - wb.weights[j];
        let mut part = T::zero();
        for (coef, arm, tau2, pos) in [(da, &s.arm_a, ta, 2 * j), (db, &s.arm_b, tb, 2 * j + 1)] {
            if coef == T::zero() {
                continue;
            }
            if !arm.is_present() {
                return Err(Error::WeightOnAbsent(pos));
            }
            part += coef * arm.effect();
            var += coef * coef * (arm.variance() + tau2);
        }
        d.push(da);
        d.push(db);
        delta_hat += part;
        contrib.push(part);
    }
    Ok(MismatchReport {
        delta_hat,
        var_delta: var,
        d_matrix: d,
        per_study_contribution: contrib,
        covariance,
    })
}

/// Resolved weights for both sides plus the covariance model they imply.
pub struct ResolvedWeights<T> {
    pub da: (WeightVector<T>, WeightVector<T>),
    pub ad: WeightVector<T>,
    pub covariance: CovarianceModel<T>,
}

pub fn resolve_weights<T: Scalar>(
    data: &MetaDataset<T>,
    da: WeightsSpec,
    ad: WeightsSpec,
) -> Result<ResolvedWeights<T>> {
    let mut covariance = CovarianceModel::SamplingOnly;
    let da_pair = match da {
        WeightsSpec::InverseVariance(pooling) => {
            let col = |arm| -> Result<(WeightVector<T>, T)> {
                let s = subgroup_sample(data, arm);
                let t = pooling.tau2(&s)?;
                let w = inverse_variance_weights(&s.variances, t).map_err(|_| {
                    Error::SubgroupHasNoData(if arm == Arm::A {
                        data.label_a.clone()
                    } else {
                        data.label_b.clone()
                    })
                })?;
                Ok((
                    WeightVector {
                        weights: w,
                        scheme: WeightScheme::InverseVariance,
                        tau2_used: t,
                    },
                    t,
                ))
            };
            let (a, ta) = col(Arm::A)?;
            let (b, tb) = col(Arm::B)?;
            if ta > T::zero() || tb > T::zero() {
                covariance = CovarianceModel::WithTau {
                    tau2_a: ta,
                    tau2_b: tb,
                };
            }
            (a, b)
        }
        WeightsSpec::Scheme(s) => {
            let w = restrict_to_two_arm(data, &compute_weights(data, s, None)?)?;
            (w.clone(), w)
        }
    };
    let ad_w = match ad {
        WeightsSpec::InverseVariance(pooling) => {
            let s = contrast_sample(data);
            if s.usable_count() == 0 {
                return Err(Error::NoTwoArmStudy);
            }
            let t = pooling.tau2(&s)?;
            WeightVector {
                weights: inverse_variance_weights(&s.variances, t)?,
                scheme: WeightScheme::InteractionRe,
                tau2_used: t,
            }
        }
        WeightsSpec::Scheme(s) => restrict_to_two_arm(data, &compute_weights(data, s, None)?)?,
    };
    Ok(ResolvedWeights {
        da: da_pair,
        ad: ad_w,
        covariance,
    })
}

pub fn mismatch_for<T: Scalar>(
    data: &MetaDataset<T>,
    da: WeightsSpec,
    ad: WeightsSpec,
) -> Result<MismatchReport<T>> {
    let r = resolve_weights(data, da, ad)?;
    mismatch(data, (&r.da.0, &r.da.1), &r.ad, r.covariance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEntry<T> {
    pub study_id: String,
    /// `Var(delta without j) / Var(delta)`, with 0/0 read as 1.
    pub variance_ratio: T,
    /// `delta without j - delta`.
    pub delta_shift: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport<T> {
    pub full: MismatchReport<T>,
    pub entries: Vec<InfluenceEntry<T>>,
}

impl<T: Scalar> InfluenceReport<T> {
    /// Index of the study whose removal moves delta the most.
    pub fn most_influential(&self) -> Option<usize> {
        (0..self.entries.len()).max_by(|&i, &j| {
            self.entries[i]
                .delta_shift
                .abs()
                .partial_cmp(&self.entries[j].delta_shift.abs())
                .expect("finite shifts")
        })
    }
}

/// Recomputes weights and the mismatch with each study left out in turn.
pub fn loo_influence<T: Scalar>(
    data: &MetaDataset<T>,
    da: WeightsSpec,
    ad: WeightsSpec,
) -> Result<InfluenceReport<T>> {
    if data.k() < 3 {
        return Err(Error::InsufficientStudies {
            needed: 3,
            found: data.k(),
        });
    }
    let full = mismatch_for(data, da, ad)?;
    let entries = (0..data.k())
        .map(|j| {
            let r = mismatch_for(&data.without(j), da, ad)?;
            let variance_ratio = if full.var_delta == T::zero() && r.var_delta == T::zero() {
                T::one()
            } else {
                r.var_delta / full.var_delta
            };
            Ok(InfluenceEntry {
                study_id: data.studies[j].study_id.clone(),
                variance_ratio,
                delta_shift: r.delta_hat - full.delta_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InfluenceReport { full, entries })
}

/// Expected DA interaction bias under a linear prevalence effect `delta`:
/// `delta * sum p_j (w_Aj - w_Bj)`.
pub fn aggregation_bias_expectation<T: Scalar>(
    prevalences: &[T],
    w_a: &[T],
    w_b: &[T],
    delta: T,
) -> Result<T> {
    if prevalences.len() != w_a.len() || w_a.len() != w_b.len() {
        return Err(Error::Dimension(
            "prevalences and weights must align".into(),
        ));
    }
    let s = prevalences
        .iter()
        .zip(w_a)
        .zip(w_b)
        .fold(T::zero(), |acc, ((&p, &a), &b)| acc + p * (a - b));
    Ok(delta * s)
}

/// Bias of the midpoint of collapsible subgroup means: `gamma_w / 2`.
pub fn subgroup_mean_bias<T: Scalar>(gamma_w: T) -> T {
    T::lit(0.5) * gamma_w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_bias_hand_example() {
        let b = aggregation_bias_expectation::<f64>(&[0.2, 0.8], &[0.5, 0.5], &[0.8, 0.2], 3.0)
            .unwrap();
        assert!((b - 0.54).abs() < 1e-15);
        assert_eq!(
            aggregation_bias_expectation(&[0.2, 0.8], &[0.5, 0.5], &[0.5, 0.5], 3.0).unwrap(),
            0.0
        );
        assert_eq!(
            aggregation_bias_expectation(&[0.2, 0.8], &[0.5, 0.5], &[0.8, 0.2], 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn subgroup_mean_bias_is_half_gamma() {
        assert_eq!(subgroup_mean_bias(-1.0), -0.5);
        assert_eq!(subgroup_mean_bias(0.0), 0.0);
        assert_eq!(subgroup_mean_bias(4.0), 2.0);
    }
}
