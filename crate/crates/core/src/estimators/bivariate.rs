use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gls::{self, Block, Fit, Likelihood, Obs, Problem, SigmaStructure};
use super::{subgroup_sample, Arm};
use crate::error::{Error, Result};
use crate::heterogeneity::Pooling;
use crate::linalg::Mat;
use crate::model::{AnalysisResult, Estimate, MetaDataset, Method};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VhasOptions {
    pub structure: SigmaStructure,
    pub likelihood: Likelihood,
}

impl Default for VhasOptions {
    fn default() -> Self {
        Self {
            structure: SigmaStructure::Full,
            likelihood: Likelihood::Ml,
        }
    }
}

/// Bivariate fit with mean `(phi, phi - gamma)` for subgroups `(A, B)`.
#[derive(Debug, Clone)]
pub struct BivariateFit<T> {
    pub phi: T,
    pub gamma: T,
    /// Between-study covariance of the `(A, B)` effects.
    pub sigma: Mat<T>,
    /// Profile log-likelihood at the optimum, without the `-n/2 ln(2 pi)` constant.
    pub loglik: T,
    pub converged: bool,
    pub grad_max_norm: T,
    /// Covariance of `(phi, gamma)`.
    pub vcov_params: Mat<T>,
    pub options: VhasOptions,
    pub(crate) hat: Vec<Mat<T>>,
}

fn problem<T: Scalar>(data: &MetaDataset<T>, opts: VhasOptions) -> Problem<T> {
    let blocks = data
        .studies
        .iter()
        .map(|s| {
            let mut obs = Vec::with_capacity(2);
            if s.arm_a.is_present() {
                obs.push(Obs {
                    arm: 0,
                    y: s.arm_a.effect(),
                    s2: s.arm_a.variance(),
                    x: vec![T::one(), T::zero()],
                });
            }
            if s.arm_b.is_present() {
                obs.push(Obs {
                    arm: 1,
                    y: s.arm_b.effect(),
                    s2: s.arm_b.variance(),
                    x: vec![T::one(), -T::one()],
                });
            }
            Block {
                obs,
                p: s.prevalence_b,
            }
        })
        .collect();
    Problem {
        blocks,
        n_beta: 2,
        structure: opts.structure,
        likelihood: opts.likelihood,
    }
}

fn starts<T: Scalar>(data: &MetaDataset<T>, structure: SigmaStructure) -> Vec<Vec<T>> {
    let tau = |arm| {
        let s = subgroup_sample(data, arm);
        Pooling::RE
            .tau2(&s)
            .unwrap_or(T::zero())
            .max(T::lit(0.01))
            .sqrt()
    };
    let l = T::lit;
    match structure {
        SigmaStructure::Zero => vec![],
        SigmaStructure::Full => {
            let (a, b) = (tau(Arm::A), tau(Arm::B));
            vec![
                vec![a, b, T::zero()],
                vec![a, b, l(1.0)],
                vec![a, b, l(-1.0)],
                vec![l(0.3), l(0.3), T::zero()],
                vec![l(0.05), l(0.05), l(0.5)],
            ]
        }
        SigmaStructure::Tau1Tau2 => {
            let a = tau(Arm::A).max(tau(Arm::B));
            vec![
                vec![a, a * l(0.5)],
                vec![l(0.3), l(0.15)],
                vec![l(0.05), l(0.3)],
                vec![l(0.05), l(0.05)],
            ]
        }
    }
}

pub fn fit_vhas<T: Scalar>(
    data: &MetaDataset<T>,
    structure: SigmaStructure,
) -> Result<BivariateFit<T>> {
    fit_vhas_with(
        data,
        VhasOptions {
            structure,
            ..VhasOptions::default()
        },
    )
}

pub fn fit_vhas_with<T: Scalar>(
    data: &MetaDataset<T>,
    opts: VhasOptions,
) -> Result<BivariateFit<T>> {
    if data.two_arm_count() == 0 {
        return Err(Error::NoTwoArmStudy);
    }
    if opts.structure != SigmaStructure::Zero && data.k() < 2 {
        return Err(Error::InsufficientStudies {
            needed: 2,
            found: data.k(),
        });
    }
    let pr = problem(data, opts);
    let fit: Fit<T> = pr.fit(&starts(data, opts.structure))?;
    let (sigma, _) = match opts.structure {
        // prevalence only matters for the structured form; report it at p = 1/2
        SigmaStructure::Tau1Tau2 => gls::sigma(opts.structure, &fit.theta, T::lit(0.5)),
        _ => gls::sigma(opts.structure, &fit.theta, T::zero()),
    };
    Ok(BivariateFit {
        phi: fit.beta[0],
        gamma: fit.beta[1],
        sigma,
        loglik: fit.loglik,
        converged: fit.converged,
        grad_max_norm: fit.grad_max_norm,
        vcov_params: fit.vcov,
        options: opts,
        hat: fit.hat,
    })
}

/// Profile log-likelihood of the bivariate model at the given optimizer
/// parameters (`[tau_a, tau_b, atanh-scaled rho]` or `[tau1, tau2]`).
pub fn vhas_profile_loglik<T: Scalar>(
    data: &MetaDataset<T>,
    opts: VhasOptions,
    theta: &[T],
) -> Result<T> {
    problem(data, opts).loglik(theta)
}

impl<T: Scalar> BivariateFit<T> {
    /// Per study, the coefficients of the observed arms (A first) in `phi`.
    pub(crate) fn phi_coefficients(&self) -> Vec<Vec<T>> {
        self.hat
            .iter()
            .map(|h| (0..h.cols()).map(|c| h[(0, c)]).collect())
            .collect()
    }

    /// Variance components: `[tau_a^2, tau_b^2, rho]` or `[tau1^2, tau2^2]`.
    pub fn components(&self) -> Vec<T> {
        match self.options.structure {
            SigmaStructure::Zero => vec![],
            SigmaStructure::Full => {
                let (a, b) = (self.sigma[(0, 0)], self.sigma[(1, 1)]);
                let rho = if a > T::zero() && b > T::zero() {
                    self.sigma[(0, 1)] / (a * b).sqrt()
                } else {
                    T::zero()
                };
                vec![a, b, rho]
            }
            SigmaStructure::Tau1Tau2 => {
                // at p = 1/2: var_a = t1 + t2/4 and cov = t1 - t2/4
                let (v, c) = (self.sigma[(0, 0)], self.sigma[(0, 1)]);
                let half = T::lit(0.5);
                vec![half * (v + c), T::lit(2.0) * (v - c)]
            }
        }
    }

    pub fn to_result(&self) -> Result<AnalysisResult<T>> {
        if !self.converged {
            return Err(Error::NonConvergence(format!(
                "bivariate fit stopped with gradient max-norm {}",
                self.grad_max_norm
            )));
        }
        let v = &self.vcov_params;
        let se_phi = v[(0, 0)].sqrt();
        let se_gamma = v[(1, 1)].sqrt();
        let se_b = (v[(0, 0)] + v[(1, 1)] - T::lit(2.0) * v[(0, 1)])
            .max(T::zero())
            .sqrt();
        let mut tau_estimates = BTreeMap::new();
        let names: &[&str] = match self.options.structure {
            SigmaStructure::Zero => &[],
            SigmaStructure::Full => &["tau2_a", "tau2_b", "rho"],
            SigmaStructure::Tau1Tau2 => &["tau2_1", "tau2_2"],
        };
        for (n, c) in names.iter().zip(self.components()) {
            tau_estimates.insert(n.to_string(), c);
        }
        let variant = match self.options.structure {
            SigmaStructure::Full => "full",
            SigmaStructure::Tau1Tau2 => "tau1_tau2",
            SigmaStructure::Zero => "zero",
        };
        Ok(AnalysisResult {
            method: Method::Vhas,
            variant: variant.into(),
            beta_a: Some(Estimate::wald(self.phi, se_phi)),
            beta_b: Some(Estimate::wald(self.phi - self.gamma, se_b)),
            gamma: Estimate::wald(self.gamma, se_gamma),
            tau_estimates,
            weights_a: None,
            weights_b: None,
            weights_gamma: None,
            collapsible: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StudyRecord, SubgroupEstimate};

    fn two(id: &str, ya: f64, yb: f64, v: f64) -> StudyRecord<f64> {
        StudyRecord::new(
            id,
            SubgroupEstimate::observed(ya, v.sqrt(), 10),
            SubgroupEstimate::observed(yb, v.sqrt(), 10),
        )
    }

    #[test]
    fn saturated_single_study() {
        let d = MetaDataset::new(vec![two("a", 0.4, -0.2, 0.3)]);
        let f = fit_vhas(&d, SigmaStructure::Zero).unwrap();
        assert!((f.phi - 0.4).abs() < 1e-14);
        assert!((f.gamma - 0.6).abs() < 1e-14);
    }

    #[test]
    fn two_studies_without_heterogeneity_give_column_means() {
        let d = MetaDataset::new(vec![two("a", 0.4, -0.2, 1.0), two("b", 1.0, 0.6, 1.0)]);
        let f = fit_vhas(&d, SigmaStructure::Zero).unwrap();
        assert!((f.phi - 0.7).abs() < 1e-14);
        assert!((f.gamma - (0.7 - 0.2)).abs() < 1e-14);
    }

    #[test]
    fn full_fit_reaches_stationary_point() {
        let d = MetaDataset::new(vec![
            two("a", 0.4, -0.2, 0.2),
            two("b", 1.3, 0.6, 0.1),
            two("c", -0.5, -0.1, 0.3),
            two("d", 0.9, 0.0, 0.15),
            two("e", 0.2, 0.4, 0.25),
        ]);
        let f = fit_vhas(&d, SigmaStructure::Full).unwrap();
        assert!(f.converged);
        assert!(f.grad_max_norm < 1e-6);
        let r = f.to_result().unwrap();
        assert!(r.collapsibility_gap().unwrap().abs() < 1e-14);
    }
}
