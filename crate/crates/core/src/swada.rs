//! Common-weight ("same weighting across different analyses") pooling.
//!
//! One weight per study is applied to subgroup A, subgroup B and the
//! contrast alike, so the difference of the pooled subgroup means equals the
//! pooled contrast. The weighting schemes only differ in how that single
//! weight vector is chosen.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{contrast_sample, subgroup_sample, Arm};
use crate::heterogeneity::{inverse_variance_weights, weighted_pool, Pooling};
use crate::model::{AnalysisResult, Estimate, MetaDataset, Method, WeightScheme, WeightVector};
use crate::optimize::{bfgs, BfgsOptions};
use crate::scalar::Scalar;

/// Number of starting points for the determinant minimization.
pub const MTV_STARTS: usize = 16;
/// Objective values closer than this are treated as ties.
pub const MTV_TIE_TOL: f64 = 1e-9;

fn require_two_arm<T: Scalar>(data: &MetaDataset<T>) -> Result<()> {
    if data.two_arm_count() == 0 {
        Err(Error::NoTwoArmStudy)
    } else {
        Ok(())
    }
}

/// Weights for `scheme`. `tau2` overrides the heterogeneity variance used
/// by the variance-based schemes; by default `interaction_re` uses the REML
/// estimate on the contrasts and `min_iv` and `min_total_variance` use zero.
pub fn compute_weights<T: Scalar>(
    data: &MetaDataset<T>,
    scheme: WeightScheme,
    tau2: Option<T>,
) -> Result<WeightVector<T>> {
    let k = data.k();
    if k == 0 {
        return Err(Error::InsufficientStudies {
            needed: 1,
            found: 0,
        });
    }
    let from_raw = |raw: Vec<T>, tau2_used: T| -> Result<WeightVector<T>> {
        if !(raw.iter().copied().sum::<T>() > T::zero()) {
            return Err(Error::NoTwoArmStudy);
        }
        Ok(WeightVector::normalized(raw, scheme, tau2_used))
    };
    match scheme {
        WeightScheme::Equal => Ok(WeightVector {
            weights: vec![T::one() / T::lit(k as f64); k],
            scheme,
            tau2_used: T::zero(),
        }),
        WeightScheme::StudySize => {
            let raw = data
                .studies
                .iter()
                .map(|s| T::lit(s.n_total as f64))
                .collect();
            from_raw(raw, T::zero())
        }
        WeightScheme::SmallerSubgroup => {
            require_two_arm(data)?;
            let raw = data
                .studies
                .iter()
                .map(|s| {
                    if s.has_both() {
                        T::lit(s.arm_a.n().min(s.arm_b.n()) as f64)
                    } else {
                        T::zero()
                    }
                })
                .collect();
            from_raw(raw, T::zero())
        }
        WeightScheme::InteractionRe => {
            require_two_arm(data)?;
            let sample = contrast_sample(data);
            let t = match tau2 {
                Some(t) => t,
                None => Pooling::RE.tau2(&sample)?,
            };
            Ok(WeightVector {
                weights: inverse_variance_weights(&sample.variances, t)?,
                scheme,
                tau2_used: t,
            })
        }
        WeightScheme::MinIv => {
            require_two_arm(data)?;
            let t = tau2.unwrap_or(T::zero());
            min_iv(data, [t, t, t], scheme)
        }
        WeightScheme::MinTotalVariance => {
            weights_min_total_variance(data, tau2.unwrap_or(T::zero()))
        }
        WeightScheme::InverseVariance | WeightScheme::Custom => Err(Error::Config(format!(
            "`{scheme}` is not a common-weight scheme"
        ))),
    }
}

fn min_iv<T: Scalar>(
    data: &MetaDataset<T>,
    tau2: [T; 3],
    scheme: WeightScheme,
) -> Result<WeightVector<T>> {
    let raw = data
        .studies
        .iter()
        .map(|s| {
            if !s.has_both() {
                return T::zero();
            }
            let va = s.arm_a.variance() + tau2[0];
            let vb = s.arm_b.variance() + tau2[1];
            let vg = s.arm_a.variance() + s.arm_b.variance() + tau2[2];
            T::one() / va.max(vb).max(vg)
        })
        .collect();
    Ok(WeightVector::normalized(raw, scheme, tau2[2]))
}

/// Minimum of the three random-effects precisions per study, each column
/// using its own heterogeneity estimate under `pooling`.
pub fn weights_min_iv_re<T: Scalar>(
    data: &MetaDataset<T>,
    pooling: Pooling,
) -> Result<WeightVector<T>> {
    require_two_arm(data)?;
    let ta = pooling.tau2(&subgroup_sample(data, Arm::A))?;
    let tb = pooling.tau2(&subgroup_sample(data, Arm::B))?;
    let tg = pooling.tau2(&contrast_sample(data))?;
    min_iv(data, [ta, tb, tg], WeightScheme::MinIv)
}

/// `ln(sum w^2 a) + ln(sum w^2 b)` over two-arm studies: the log determinant
/// of the covariance of the common-weight subgroup means, whose A and B
/// components are uncorrelated.
pub fn total_variance_objective<T: Scalar>(data: &MetaDataset<T>, weights: &[T], tau2: T) -> T {
    let (mut sa, mut sb) = (T::zero(), T::zero());
    for (s, &w) in data.studies.iter().zip(weights) {
        if s.has_both() {
            sa += w * w * (s.arm_a.variance() + tau2);
            sb += w * w * (s.arm_b.variance() + tau2);
        }
    }
    sa.ln() + sb.ln()
}

fn softmax<T: Scalar>(theta: &[T]) -> Vec<T> {
    let m = theta.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = theta.iter().map(|&t| (t - m).exp()).collect();
    let total: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// FNV-1a over the study ids, mixed with the start index.
fn start_seed<T: Scalar>(data: &MetaDataset<T>, start: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in &data.studies {
        for b in s.study_id.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h ^ (start as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// D-optimal common weights on the probability simplex, restricted to
/// two-arm studies.
pub fn weights_min_total_variance<T: Scalar>(
    data: &MetaDataset<T>,
    tau2: T,
) -> Result<WeightVector<T>> {
    let idx: Vec<usize> = (0..data.k())
        .filter(|&j| data.studies[j].has_both())
        .collect();
    if idx.len() < 2 {
        return Err(Error::InsufficientStudies {
            needed: 2,
            found: idx.len(),
        });
    }
    let a: Vec<T> = idx
        .iter()
        .map(|&j| data.studies[j].arm_a.variance() + tau2)
        .collect();
    let b: Vec<T> = idx
        .iter()
        .map(|&j| data.studies[j].arm_b.variance() + tau2)
        .collect();
    let two = T::lit(2.0);
    let fg = |theta: &[T]| {
        let w = softmax(theta);
        let sa: T = w.iter().zip(&a).map(|(&w, &a)| w * w * a).sum();
        let sb: T = w.iter().zip(&b).map(|(&w, &b)| w * w * b).sum();
        let dfdw: Vec<T> = (0..w.len())
            .map(|i| two * w[i] * (a[i] / sa + b[i] / sb))
            .collect();
        let mean: T = w.iter().zip(&dfdw).map(|(&w, &d)| w * d).sum();
        let grad = w.iter().zip(&dfdw).map(|(&w, &d)| w * (d - mean)).collect();
        (sa.ln() + sb.ln(), grad)
    };
    let opts = BfgsOptions {
        max_iter: 2000,
        grad_tol: T::lit(1e-7),
    };
    let mut best: Option<(T, Vec<T>)> = None;
    let tie = T::lit(MTV_TIE_TOL);
    for start in 0..MTV_STARTS {
        let theta0: Vec<T> = if start == 0 {
            a.iter().zip(&b).map(|(&a, &b)| -(a + b).ln()).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(start_seed(data, start));
            (0..idx.len())
                .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                .collect()
        };
        let out = bfgs(fg, &theta0, opts);
        if !out.value.is_finite() {
            continue;
        }
        // a later start must beat the incumbent by more than the tie tolerance
        if best.as_ref().is_none_or(|(v, _)| out.value < *v - tie) {
            best = Some((out.value, softmax(&out.x)));
        }
    }
    let (_, w) = best.ok_or_else(|| {
        Error::NonConvergence("determinant minimization failed at every start".into())
    })?;
    let mut weights = vec![T::zero(); data.k()];
    for (&j, &wj) in idx.iter().zip(&w) {
        weights[j] = wj;
    }
    Ok(WeightVector {
        weights,
        scheme: WeightScheme::MinTotalVariance,
        tau2_used: tau2,
    })
}

/// What to do with positive weight on studies that report one subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleSubgroupPolicy {
    /// Refuse to pool.
    Strict,
    /// Drop those studies and renormalize the remaining weights.
    #[default]
    ExcludeAndRenormalize,
    /// Use the weights for subgroup means where each arm is present and
    /// renormalized two-arm weights for the interaction. Not collapsible.
    SubgroupOnlyWeights,
}

/// Zeroes weights on single-subgroup studies and renormalizes.
pub fn restrict_to_two_arm<T: Scalar>(
    data: &MetaDataset<T>,
    weights: &WeightVector<T>,
) -> Result<WeightVector<T>> {
    let raw: Vec<T> = data
        .studies
        .iter()
        .zip(&weights.weights)
        .map(|(s, &w)| if s.has_both() { w } else { T::zero() })
        .collect();
    if !(raw.iter().copied().sum::<T>() > T::zero()) {
        return Err(Error::NoTwoArmStudy);
    }
    if raw == weights.weights {
        return Ok(weights.clone());
    }
    Ok(WeightVector::normalized(
        raw,
        weights.scheme,
        weights.tau2_used,
    ))
}

fn check_weights<T: Scalar>(data: &MetaDataset<T>, weights: &WeightVector<T>) -> Result<()> {
    if weights.len() != data.k() {
        return Err(Error::Dimension(format!(
            "{} weights for {} studies",
            weights.len(),
            data.k()
        )));
    }
    if weights
        .weights
        .iter()
        .any(|&w| !(w >= T::zero()) || !w.is_finite())
    {
        return Err(Error::InvalidWeights(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let total: T = weights.weights.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(4.0 * data.k() as f64)) {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Heterogeneity variances used for common-weight interval widths.
fn swada_taus<T: Scalar>(data: &MetaDataset<T>, pooling: Pooling) -> Result<BTreeMap<String, T>> {
    let mut taus = BTreeMap::new();
    taus.insert(
        "tau2_a".to_string(),
        pooling.tau2(&subgroup_sample(data, Arm::A))?,
    );
    taus.insert(
        "tau2_b".to_string(),
        pooling.tau2(&subgroup_sample(data, Arm::B))?,
    );
    taus.insert(
        "tau2_gamma".to_string(),
        pooling.tau2(&contrast_sample(data))?,
    );
    Ok(taus)
}

/// Pools all three quantities with one weight vector. Every positively
/// weighted study must report both subgroups.
pub fn pool_swada<T: Scalar>(
    data: &MetaDataset<T>,
    weights: &WeightVector<T>,
    pooling: Pooling,
) -> Result<AnalysisResult<T>> {
    check_weights(data, weights)?;
    for (s, &w) in data.studies.iter().zip(&weights.weights) {
        if w > T::zero() && !s.has_both() {
            return Err(Error::IncompatibleWeights(s.study_id.clone()));
        }
    }
    let taus = swada_taus(data, pooling)?;
    let w = &weights.weights;
    let sa = subgroup_sample(data, Arm::A);
    let sb = subgroup_sample(data, Arm::B);
    let sg = contrast_sample(data);
    let (a, se_a) = weighted_pool(&sa.effects, &sa.variances, taus["tau2_a"], w)?;
    let (b, se_b) = weighted_pool(&sb.effects, &sb.variances, taus["tau2_b"], w)?;
    let (g, se_g) = weighted_pool(&sg.effects, &sg.variances, taus["tau2_gamma"], w)?;
    Ok(AnalysisResult {
        method: Method::Swada,
        variant: weights.scheme.name().to_string(),
        beta_a: Some(Estimate::wald(a, se_a)),
        beta_b: Some(Estimate::wald(b, se_b)),
        gamma: Estimate::wald(g, se_g),
        tau_estimates: taus,
        weights_a: Some(weights.clone()),
        weights_b: Some(weights.clone()),
        weights_gamma: Some(weights.clone()),
        collapsible: true,
    })
}

fn renormalized_on<T: Scalar>(
    weights: &WeightVector<T>,
    keep: impl Fn(usize) -> bool,
) -> Option<WeightVector<T>> {
    let raw: Vec<T> = weights
        .weights
        .iter()
        .enumerate()
        .map(|(j, &w)| if keep(j) { w } else { T::zero() })
        .collect();
    (raw.iter().copied().sum::<T>() > T::zero())
        .then(|| WeightVector::normalized(raw, weights.scheme, weights.tau2_used))
}

pub fn pool_swada_with_policy<T: Scalar>(
    data: &MetaDataset<T>,
    weights: &WeightVector<T>,
    pooling: Pooling,
    policy: SingleSubgroupPolicy,
) -> Result<AnalysisResult<T>> {
    match policy {
        SingleSubgroupPolicy::Strict => pool_swada(data, weights, pooling),
        SingleSubgroupPolicy::ExcludeAndRenormalize => {
            check_weights(data, weights)?;
            pool_swada(data, &restrict_to_two_arm(data, weights)?, pooling)
        }
        SingleSubgroupPolicy::SubgroupOnlyWeights => {
            check_weights(data, weights)?;
            let taus = swada_taus(data, pooling)?;
            let st = &data.studies;
            let wa = renormalized_on(weights, |j| st[j].arm_a.is_present())
                .ok_or_else(|| Error::SubgroupHasNoData(data.label_a.clone()))?;
            let wb = renormalized_on(weights, |j| st[j].arm_b.is_present())
                .ok_or_else(|| Error::SubgroupHasNoData(data.label_b.clone()))?;
            let wg = restrict_to_two_arm(data, weights)?;
            let sa = subgroup_sample(data, Arm::A);
            let sb = subgroup_sample(data, Arm::B);
            let sg = contrast_sample(data);
            let (a, se_a) = weighted_pool(&sa.effects, &sa.variances, taus["tau2_a"], &wa.weights)?;
            let (b, se_b) = weighted_pool(&sb.effects, &sb.variances, taus["tau2_b"], &wb.weights)?;
            let (g, se_g) =
                weighted_pool(&sg.effects, &sg.variances, taus["tau2_gamma"], &wg.weights)?;
            let collapsible = wa.weights == wb.weights && wa.weights == wg.weights;
            Ok(AnalysisResult {
                method: Method::Swada,
                variant: format!("{}-subgroup-only", weights.scheme.name()),
                beta_a: Some(Estimate::wald(a, se_a)),
                beta_b: Some(Estimate::wald(b, se_b)),
                gamma: Estimate::wald(g, se_g),
                tau_estimates: taus,
                weights_a: Some(wa),
                weights_b: Some(wb),
                weights_gamma: Some(wg),
                collapsible,
            })
        }
    }
}
