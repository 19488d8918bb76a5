//! Model-based estimator families.

mod bivariate;
mod centered;
pub(crate) mod gls;
mod prevalence;
mod separate;
mod within_trial;

pub use bivariate::{fit_vhas, fit_vhas_with, vhas_profile_loglik, BivariateFit, VhasOptions};
pub use centered::fit_centered_collapsible;
pub use gls::{Likelihood, SigmaStructure};
pub use prevalence::{
    fit_prevalence_adjusted, fit_prevalence_adjusted_with, PrevAdjFit, PrevAdjOptions,
};
pub use separate::{estimate_ad, estimate_da};
pub(crate) use within_trial::within_trial_detail;
pub use within_trial::{fit_within_trial, fit_within_trial_with, Stage2};

use crate::heterogeneity::UnivariateSample;
use crate::model::MetaDataset;
use crate::scalar::Scalar;

/// Which subgroup column of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    A,
    B,
}

/// One subgroup column as a univariate sample; absent arms carry infinite variance.
pub fn subgroup_sample<T: Scalar>(data: &MetaDataset<T>, arm: Arm) -> UnivariateSample<T> {
    let (effects, variances) = data
        .studies
        .iter()
        .map(|s| {
            let e = if arm == Arm::A { &s.arm_a } else { &s.arm_b };
            (e.effect(), e.variance())
        })
        .unzip();
    UnivariateSample { effects, variances }
}

/// Within-study contrasts as a univariate sample.
pub fn contrast_sample<T: Scalar>(data: &MetaDataset<T>) -> UnivariateSample<T> {
    let (effects, variances) = data
        .contrasts()
        .into_iter()
        .map(|c| (c.g, c.variance()))
        .unzip();
    UnivariateSample { effects, variances }
}
