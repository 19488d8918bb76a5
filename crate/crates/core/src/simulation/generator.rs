//! Replicate datasets from the prevalence-dependent subgroup model.
//!
//! Study `j` with realized B prevalence `p_j` has subgroup effects
//!
//! ```text
//! A_j = phi + delta p_j + s_j + u_j - p_j v_j
//! B_j = A_j - gamma_w + v_j
//! ```
//!
//! with `u_j ~ N(0, tau1^2)` and `v_j ~ N(0, tau2^2)`. The study mean
//! `(1 - p) A + p B` then carries `u_j` alone, and the marginal subgroup
//! means are `phi + delta p_j` and `phi + delta p_j - gamma_w`.
//!
//! Each study also draws a baseline `alpha_j` and a subgroup main effect
//! `beta1_j`, both uniform on [0, 0.5]. They act on the control-arm outcome
//! level and so cancel from treatment log odds ratios; by default they are
//! only recorded. With `study_shifts` enabled, their centered sum `s_j` is
//! added to both subgroup effects as a stress test.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{PrevalenceScheme, ScenarioConfig};
use super::rng::{stream, Purpose};
use crate::model::{se_from_uisd, MetaDataset, StudyRecord, SubgroupEstimate};

/// Smallest simulated study.
pub const MIN_STUDY_SIZE: u64 = 10;

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Log-normal sizes whose logs share a common factor with weight `rho`.
pub fn gen_study_sizes<R: Rng>(k: usize, mu: f64, sigma: f64, rho: f64, rng: &mut R) -> Vec<u64> {
    let shared = std_normal(rng);
    (0..k)
        .map(|_| {
            let own = std_normal(rng);
            let z = rho.sqrt() * shared + (1.0 - rho).sqrt() * own;
            ((mu + sigma * z).exp().round() as u64).max(MIN_STUDY_SIZE)
        })
        .collect()
}

pub fn gen_prevalences<R: Rng>(scheme: PrevalenceScheme, k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| match scheme {
            PrevalenceScheme::Const50 => 0.5,
            PrevalenceScheme::Const25 => 0.25,
            PrevalenceScheme::Unif3070 => rng.random_range(0.3..0.7),
            PrevalenceScheme::Unif1090 => rng.random_range(0.1..0.9),
            PrevalenceScheme::Tri1050 => {
                // inverse CDF of the triangle on [0.1, 0.5] with its mode at 0.1
                let u: f64 = rng.random();
                0.5 - 0.4 * (1.0 - u).sqrt()
            }
        })
        .collect()
}

/// Ground truth for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub phi: f64,
    pub delta: f64,
    pub gamma_w: f64,
    /// Realized prevalence `n_B / n` per study.
    pub prevalences: Vec<f64>,
    /// Marginal subgroup means `phi + delta p_j` and that minus `gamma_w`.
    pub marginal_a: Vec<f64>,
    pub marginal_b: Vec<f64>,
    /// Study-specific true effects, including random effects and shifts.
    pub study_a: Vec<f64>,
    pub study_b: Vec<f64>,
    /// Control-arm baseline and subgroup main effect per study.
    pub baseline: Vec<f64>,
    pub subgroup_main: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: MetaDataset<f64>,
    pub truth: Truth,
}

/// Generation switches used by tests to isolate parts of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenOptions {
    pub sampling_noise: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            sampling_noise: true,
        }
    }
}

pub fn gen_replicate(cfg: &ScenarioConfig, replicate: u64) -> Replicate {
    gen_replicate_with(cfg, replicate, GenOptions::default())
}

pub fn gen_replicate_with(cfg: &ScenarioConfig, replicate: u64, opts: GenOptions) -> Replicate {
    let k = cfg.k;
    let seed = cfg.seed;
    let sizes = gen_study_sizes(
        k,
        cfg.size_mu,
        cfg.size_sigma,
        cfg.size_rho,
        &mut stream(seed, replicate, Purpose::Sizes),
    );
    let target_p = gen_prevalences(
        cfg.prevalence_scheme,
        k,
        &mut stream(seed, replicate, Purpose::Prevalence),
    );
    let mut re = stream(seed, replicate, Purpose::RandomEffects);
    let mut shifts = stream(seed, replicate, Purpose::Shifts);
    let mut noise = stream(seed, replicate, Purpose::Noise);
    let (tau1, tau2) = (cfg.tau1, cfg.tau2());

    let mut studies = Vec::with_capacity(k);
    let mut truth = Truth {
        phi: cfg.phi,
        delta: cfg.delta,
        gamma_w: cfg.gamma_w,
        prevalences: Vec::with_capacity(k),
        marginal_a: Vec::with_capacity(k),
        marginal_b: Vec::with_capacity(k),
        study_a: Vec::with_capacity(k),
        study_b: Vec::with_capacity(k),
        baseline: Vec::with_capacity(k),
        subgroup_main: Vec::with_capacity(k),
    };
    for j in 0..k {
        let n = sizes[j];
        let n_b = ((n as f64) * target_p[j]).round() as u64;
        let n_a = n - n_b;
        let p = n_b as f64 / n as f64;

        let u = tau1 * std_normal(&mut re);
        let v = tau2 * std_normal(&mut re);
        let alpha: f64 = shifts.random_range(0.0..0.5);
        let beta1: f64 = shifts.random_range(0.0..0.5);
        let s = if cfg.study_shifts {
            alpha + beta1 - 0.5
        } else {
            0.0
        };
        let mean_a = cfg.phi + cfg.delta * p;
        let true_a = mean_a + s + u - p * v;
        let true_b = true_a - cfg.gamma_w + v;

        let mut arm = |truth: f64, n_arm: u64| {
            // both draws are taken even for an empty arm so streams stay aligned
            let e = std_normal(&mut noise);
            if n_arm == 0 {
                return SubgroupEstimate::Absent;
            }
            let se = se_from_uisd(cfg.uisd, n_arm, 1.0);
            let y = if opts.sampling_noise {
                truth + se * e
            } else {
                truth
            };
            SubgroupEstimate::observed(y, se, n_arm)
        };
        let a = arm(true_a, n_a);
        let b = arm(true_b, n_b);
        studies.push(StudyRecord::new(format!("S{:03}", j + 1), a, b));

        truth.prevalences.push(p);
        truth.marginal_a.push(mean_a);
        truth.marginal_b.push(mean_a - cfg.gamma_w);
        truth.study_a.push(true_a);
        truth.study_b.push(true_b);
        truth.baseline.push(alpha);
        truth.subgroup_main.push(beta1);
    }
    Replicate {
        data: MetaDataset::new(studies),
        truth,
    }
}
