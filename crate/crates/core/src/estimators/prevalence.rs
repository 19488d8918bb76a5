use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gls::{Block, Fit, Likelihood, Obs, Problem, SigmaStructure};
use super::{contrast_sample, subgroup_sample, Arm};
use crate::error::{Error, Result};
use crate::heterogeneity::Pooling;
use crate::linalg::Mat;
use crate::model::{AnalysisResult, Estimate, MetaDataset, Method};
use crate::scalar::Scalar;

/// Prevalence spread below which the prevalence slope is dropped.
pub const CONSTANT_PREVALENCE_VAR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrevAdjOptions {
    pub likelihood: Likelihood,
    /// `Tau1Tau2` for the random-effects model, `Zero` for common effects.
    pub structure: SigmaStructure,
}

impl Default for PrevAdjOptions {
    fn default() -> Self {
        Self {
            likelihood: Likelihood::Reml,
            structure: SigmaStructure::Tau1Tau2,
        }
    }
}

/// Fit of the mean `(phi + delta p, phi + delta p - gamma_w)` for `(A, B)`.
#[derive(Debug, Clone)]
pub struct PrevAdjFit<T> {
    pub phi: T,
    /// `None` when prevalence is constant across studies.
    pub delta: Option<T>,
    pub gamma_w: T,
    /// Between-study standard deviation of the subgroup level.
    pub tau1: T,
    /// Between-study standard deviation of the interaction.
    pub tau2: T,
    /// Covariance of `(phi, delta, gamma_w)`, or of `(phi, gamma_w)` without delta.
    pub vcov_params: Mat<T>,
    pub converged: bool,
    pub loglik: T,
    /// Prevalence at which subgroup effects are reported.
    pub mean_prevalence: T,
    pub(crate) hat: Vec<Mat<T>>,
}

impl<T: Scalar> PrevAdjFit<T> {
    /// Interaction implied by between-study prevalence variation alone.
    pub fn gamma_agg(&self) -> Option<T> {
        self.delta.map(|d| self.gamma_w - d)
    }

    fn n_beta(&self) -> usize {
        if self.delta.is_some() {
            3
        } else {
            2
        }
    }

    /// Coefficients of `(beta_a, beta_b, gamma)` on the fixed-effect vector.
    pub(crate) fn contrasts(&self) -> [Vec<T>; 3] {
        let p = self.mean_prevalence;
        if self.delta.is_some() {
            [
                vec![T::one(), p, T::zero()],
                vec![T::one(), p, -T::one()],
                vec![T::zero(), T::zero(), T::one()],
            ]
        } else {
            [
                vec![T::one(), T::zero()],
                vec![T::one(), -T::one()],
                vec![T::zero(), T::one()],
            ]
        }
    }

    fn estimate(&self, c: &[T]) -> Estimate<T> {
        let beta: Vec<T> = match self.delta {
            Some(d) => vec![self.phi, d, self.gamma_w],
            None => vec![self.phi, self.gamma_w],
        };
        debug_assert_eq!(c.len(), self.n_beta());
        let point = c.iter().zip(&beta).fold(T::zero(), |s, (&a, &b)| s + a * b);
        Estimate::wald(point, self.vcov_params.quad_form(c).max(T::zero()).sqrt())
    }

    /// Per study, the coefficients mapping that study's observed arms to
    /// `(beta_a, beta_b, gamma)`.
    pub(crate) fn linear_maps(&self) -> Vec<Mat<T>> {
        let c = self.contrasts();
        let cm = Mat::from_rows(&c);
        self.hat.iter().map(|h| cm.matmul(h)).collect()
    }

    pub fn to_result(&self) -> AnalysisResult<T> {
        let [ca, cb, cg] = self.contrasts();
        let mut tau_estimates = BTreeMap::new();
        tau_estimates.insert("tau2_1".to_string(), self.tau1 * self.tau1);
        tau_estimates.insert("tau2_2".to_string(), self.tau2 * self.tau2);
        if let Some(d) = self.delta {
            tau_estimates.insert("delta".to_string(), d);
        }
        AnalysisResult {
            method: Method::PrevalenceAdjusted,
            variant: if self.delta.is_some() {
                "with_delta".into()
            } else {
                "constant_prevalence".into()
            },
            beta_a: Some(self.estimate(&ca)),
            beta_b: Some(self.estimate(&cb)),
            gamma: self.estimate(&cg),
            tau_estimates,
            weights_a: None,
            weights_b: None,
            weights_gamma: None,
            collapsible: true,
        }
    }
}

pub fn fit_prevalence_adjusted<T: Scalar>(data: &MetaDataset<T>) -> Result<PrevAdjFit<T>> {
    fit_prevalence_adjusted_with(data, PrevAdjOptions::default())
}

pub fn fit_prevalence_adjusted_with<T: Scalar>(
    data: &MetaDataset<T>,
    opts: PrevAdjOptions,
) -> Result<PrevAdjFit<T>> {
    if data.two_arm_count() == 0 {
        return Err(Error::NoTwoArmStudy);
    }
    let prev = data.prevalences();
    let k = T::lit(prev.len() as f64);
    let mean_p = prev.iter().copied().sum::<T>() / k;
    let var_p = prev.iter().map(|&p| (p - mean_p) * (p - mean_p)).sum::<T>() / k;
    let with_delta = var_p >= T::lit(CONSTANT_PREVALENCE_VAR);
    if with_delta && data.k() < 3 {
        return Err(Error::InsufficientStudies {
            needed: 3,
            found: data.k(),
        });
    }
    let design = |p: T, arm: usize| {
        let g = if arm == 0 { T::zero() } else { -T::one() };
        if with_delta {
            vec![T::one(), p, g]
        } else {
            vec![T::one(), g]
        }
    };
    let blocks = data
        .studies
        .iter()
        .map(|s| {
            let p = s.prevalence_b;
            let mut obs = Vec::with_capacity(2);
            if s.arm_a.is_present() {
                obs.push(Obs {
                    arm: 0,
                    y: s.arm_a.effect(),
                    s2: s.arm_a.variance(),
                    x: design(p, 0),
                });
            }
            if s.arm_b.is_present() {
                obs.push(Obs {
                    arm: 1,
                    y: s.arm_b.effect(),
                    s2: s.arm_b.variance(),
                    x: design(p, 1),
                });
            }
            Block { obs, p }
        })
        .collect();
    let pr = Problem {
        blocks,
        n_beta: if with_delta { 3 } else { 2 },
        structure: opts.structure,
        likelihood: opts.likelihood,
    };

    let l = T::lit;
    let starts = if opts.structure == SigmaStructure::Zero {
        vec![]
    } else {
        let t1 = Pooling::RE
            .tau2(&subgroup_sample(data, Arm::A))
            .unwrap_or(T::zero())
            .max(l(0.01))
            .sqrt();
        let t2 = Pooling::RE
            .tau2(&contrast_sample(data))
            .unwrap_or(T::zero())
            .max(l(0.01))
            .sqrt();
        vec![
            vec![t1, t2],
            vec![l(0.3), l(0.15)],
            vec![l(0.05), l(0.3)],
            vec![l(0.05), l(0.05)],
        ]
    };
    let fit: Fit<T> = pr.fit(&starts)?;
    if !fit.converged {
        return Err(Error::NonConvergence(format!(
            "prevalence-adjusted fit stopped with gradient max-norm {}",
            fit.grad_max_norm
        )));
    }
    let (tau1, tau2) = match opts.structure {
        SigmaStructure::Tau1Tau2 => (fit.theta[0].abs(), fit.theta[1].abs()),
        _ => (T::zero(), T::zero()),
    };
    let (phi, delta, gamma_w) = if with_delta {
        (fit.beta[0], Some(fit.beta[1]), fit.beta[2])
    } else {
        (fit.beta[0], None, fit.beta[1])
    };
    Ok(PrevAdjFit {
        phi,
        delta,
        gamma_w,
        tau1,
        tau2,
        vcov_params: fit.vcov,
        converged: true,
        loglik: fit.loglik,
        mean_prevalence: mean_p,
        hat: fit.hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StudyRecord, SubgroupEstimate};

    fn study(id: &str, ya: f64, yb: f64, na: u64, nb: u64) -> StudyRecord<f64> {
        let se = |n: u64| 4.0 / (n as f64).sqrt();
        StudyRecord::new(
            id,
            SubgroupEstimate::observed(ya, se(na), na),
            SubgroupEstimate::observed(yb, se(nb), nb),
        )
    }

    #[test]
    fn noise_free_data_recovers_mean_structure() {
        let splits = [(80, 20), (50, 50), (30, 70), (65, 35)];
        let studies = splits
            .iter()
            .enumerate()
            .map(|(i, &(na, nb))| {
                let p = nb as f64 / (na + nb) as f64;
                let a = 2.0 + 3.0 * p;
                study(&format!("s{i}"), a, a - 1.0, na, nb)
            })
            .collect();
        let f = fit_prevalence_adjusted(&MetaDataset::new(studies)).unwrap();
        assert!((f.phi - 2.0).abs() < 1e-8);
        assert!((f.delta.unwrap() - 3.0).abs() < 1e-8);
        assert!((f.gamma_w - 1.0).abs() < 1e-8);
        assert!((f.gamma_agg().unwrap() - (-2.0)).abs() < 1e-8);
    }

    #[test]
    fn constant_prevalence_drops_delta() {
        let studies = (0..4)
            .map(|i| study(&format!("s{i}"), 0.7, 0.2, 50, 50))
            .collect();
        let f = fit_prevalence_adjusted(&MetaDataset::new(studies)).unwrap();
        assert!(f.delta.is_none());
        assert!((f.phi - 0.7).abs() < 1e-8);
        assert!((f.gamma_w - 0.5).abs() < 1e-8);
        let r = f.to_result();
        assert!(r.collapsibility_gap().unwrap().abs() < 1e-14);
    }
}
