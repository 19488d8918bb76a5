//! Two-stage within-trial estimator.
//!
//! Stage 1 pools the contrasts (the AD estimate). Stage 2 shifts every B
//! observation up by the pooled contrast, so all observations estimate the
//! A-level mean, and pools the stacked observations by GLS. Because the shift
//! reuses the stage-1 estimate, the stacked observations are correlated and
//! satisfy one exact linear constraint; both are carried through the exact
//! covariance of the linear map.

use serde::{Deserialize, Serialize};

use super::estimate_ad;
use crate::error::Result;
use crate::heterogeneity::{Pooling, UnivariateSample};
use crate::linalg::Mat;
use crate::model::{AnalysisResult, Estimate, MetaDataset, Method};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2 {
    /// Full covariance of the shifted observations.
    #[default]
    Propagated,
    /// Independent observations; B entries get `s_B^2 + Var(gamma)`.
    Naive,
}

pub fn fit_within_trial<T: Scalar>(
    data: &MetaDataset<T>,
    pooling: Pooling,
) -> Result<AnalysisResult<T>> {
    fit_within_trial_with(data, pooling, Stage2::Propagated)
}

pub fn fit_within_trial_with<T: Scalar>(
    data: &MetaDataset<T>,
    pooling: Pooling,
    stage2: Stage2,
) -> Result<AnalysisResult<T>> {
    Ok(within_trial_detail(data, pooling, stage2)?.0)
}

/// The result plus, per study, the coefficients `(a_A, a_B)` expressing
/// `beta_a` as a linear combination of the observed effects.
pub(crate) fn within_trial_detail<T: Scalar>(
    data: &MetaDataset<T>,
    pooling: Pooling,
    stage2: Stage2,
) -> Result<(AnalysisResult<T>, Vec<[T; 2]>)> {
    let ad = estimate_ad(data, pooling)?;
    let gamma = ad.gamma.point;
    let var_gamma = ad.gamma.std_err * ad.gamma.std_err;
    let c = &ad
        .weights_gamma
        .as_ref()
        .expect("AD reports weights")
        .weights;
    let tau2_gamma = ad.tau_estimates["tau2_gamma"];

    // observation list in study order: (study, arm)
    let mut obs = Vec::new();
    let mut pos = vec![[usize::MAX; 2]; data.k()];
    for (j, s) in data.studies.iter().enumerate() {
        for (arm, e) in [&s.arm_a, &s.arm_b].into_iter().enumerate() {
            if e.is_present() {
                pos[j][arm] = obs.len();
                obs.push((j, arm));
            }
        }
    }
    let n = obs.len();
    let y: Vec<T> = obs
        .iter()
        .map(|&(j, a)| arm_of(data, j, a).effect())
        .collect();
    let v: Vec<T> = obs
        .iter()
        .map(|&(j, a)| arm_of(data, j, a).variance())
        .collect();

    // d picks out gamma-hat: d'y = sum c_j (y_Aj - y_Bj)
    let mut d = vec![T::zero(); n];
    for (j, &cj) in c.iter().enumerate() {
        if cj > T::zero() {
            d[pos[j][0]] = cj;
            d[pos[j][1]] = -cj;
        }
    }
    // z = M y with M = I + e_B d'
    let mut m = Mat::identity(n);
    for (i, &(_, a)) in obs.iter().enumerate() {
        if a == 1 {
            for (l, &dl) in d.iter().enumerate() {
                m[(i, l)] += dl;
            }
        }
    }
    let z = m.matvec(&y);

    let diag: Vec<T> = obs
        .iter()
        .zip(&v)
        .map(|(&(_, a), &vi)| if a == 1 { vi + var_gamma } else { vi })
        .collect();
    let tau2_level = pooling.tau2(&UnivariateSample {
        effects: z.clone(),
        variances: diag.clone(),
    })?;

    let mut cov_y = Mat::zeros(n, n);
    for (i, &(j, a)) in obs.iter().enumerate() {
        let p = data.studies[j].prevalence_b;
        let q = T::one() - p;
        for (l, &(j2, a2)) in obs.iter().enumerate() {
            if j != j2 {
                continue;
            }
            cov_y[(i, l)] = if a == a2 {
                let share = if a == 0 { p * p } else { q * q };
                v[i] + tau2_level + tau2_gamma * share
            } else {
                tau2_level - tau2_gamma * p * q
            };
        }
    }

    let (h, se_a, se_b) = match stage2 {
        Stage2::Propagated => {
            let mut vz = m.matmul(&cov_y).matmul(&m.transpose());
            for i in 0..n {
                for l in 0..n {
                    vz[(i, l)] += d[i] * d[l];
                }
            }
            let vinv = match vz.spd_inverse_logdet() {
                Ok((inv, _)) => inv,
                Err(_) => vz.inverse()?,
            };
            let raw = vinv.matvec(&vec![T::one(); n]);
            let total: T = raw.iter().copied().sum();
            let h: Vec<T> = raw.into_iter().map(|x| x / total).collect();
            // beta_a = h'M y and beta_b = beta_a - d'y
            let la = m.transpose().matvec(&h);
            let lb: Vec<T> = la.iter().zip(&d).map(|(&a, &b)| a - b).collect();
            let se = |l: &[T]| cov_y.quad_form(l).max(T::zero()).sqrt();
            (la.clone(), se(&la), se(&lb))
        }
        Stage2::Naive => {
            let w: Vec<T> = diag.iter().map(|&x| T::one() / (x + tau2_level)).collect();
            let total: T = w.iter().copied().sum();
            let h: Vec<T> = w.iter().map(|&x| x / total).collect();
            let se_a = (T::one() / total).sqrt();
            (
                m.transpose().matvec(&h),
                se_a,
                (se_a * se_a + var_gamma).sqrt(),
            )
        }
    };
    let phi = h.iter().zip(&y).fold(T::zero(), |s, (&a, &b)| s + a * b);

    let mut coef = vec![[T::zero(); 2]; data.k()];
    for (i, &(j, a)) in obs.iter().enumerate() {
        coef[j][a] = h[i];
    }
    let mut tau_estimates = ad.tau_estimates.clone();
    tau_estimates.insert("tau2_level".to_string(), tau2_level);
    let variant = match stage2 {
        Stage2::Propagated => pooling.label(),
        Stage2::Naive => format!("{}-naive", pooling.label()),
    };
    let result = AnalysisResult {
        method: Method::WithinTrial,
        variant,
        beta_a: Some(Estimate::wald(phi, se_a)),
        beta_b: Some(Estimate::wald(phi - gamma, se_b)),
        gamma: ad.gamma,
        tau_estimates,
        weights_a: None,
        weights_b: None,
        weights_gamma: ad.weights_gamma,
        collapsible: true,
    };
    Ok((result, coef))
}

fn arm_of<T: Scalar>(
    data: &MetaDataset<T>,
    j: usize,
    arm: usize,
) -> &crate::model::SubgroupEstimate<T> {
    if arm == 0 {
        &data.studies[j].arm_a
    } else {
        &data.studies[j].arm_b
    }
}
