//! Monte Carlo driver: replicates run in parallel, results are collected in
//! replicate order and reduced sequentially, so the metrics do not depend on
//! the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BetaTarget, ScenarioConfig, SimMethod};
use super::generator::{gen_replicate, Replicate, Truth};
use crate::diagnostics::aggregation_bias_expectation;
use crate::error::{Error, Result};
use crate::estimators::within_trial_detail;
use crate::estimators::{
    estimate_ad, estimate_da, fit_centered_collapsible, fit_prevalence_adjusted, fit_vhas,
    SigmaStructure, Stage2,
};
use crate::heterogeneity::Pooling;
use crate::model::{Estimate, WeightScheme};
use crate::swada::{
    compute_weights, pool_swada_with_policy, restrict_to_two_arm, SingleSubgroupPolicy,
};

/// Interval estimates from one method on one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub gamma: Estimate<f64>,
    /// Subgroup-A interval and the true value it targets.
    pub beta_a: Option<(Estimate<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    /// One entry per configured method, `None` where the fit failed.
    pub outcomes: Vec<Option<Outcome>>,
    /// CE difference of averages minus CE average difference.
    pub mismatch_ce: f64,
    /// Expected DA bias for this replicate's CE and RE inverse-variance weights.
    pub expected_bias_ce: f64,
    pub expected_bias_re: f64,
    pub gamma_da_ce: f64,
    pub gamma_da_re: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Values of the true marginal means at the observed arms of each study, in
/// the order the estimators stack them (A before B).
fn observed_truth(rep: &Replicate, j: usize) -> Vec<f64> {
    let s = &rep.data.studies[j];
    let mut v = Vec::with_capacity(2);
    if s.arm_a.is_present() {
        v.push(rep.truth.marginal_a[j]);
    }
    if s.arm_b.is_present() {
        v.push(rep.truth.marginal_b[j]);
    }
    v
}

fn beta_target(cfg: &ScenarioConfig, truth: &Truth, weighted: f64) -> f64 {
    match cfg.beta_target {
        BetaTarget::MethodWeighted => weighted,
        BetaTarget::MeanPrevalence => {
            let p = truth.prevalences.iter().sum::<f64>() / truth.prevalences.len() as f64;
            truth.phi + truth.delta * p
        }
    }
}

/// Runs one method on one replicate.
pub fn evaluate(method: SimMethod, cfg: &ScenarioConfig, rep: &Replicate) -> Result<Outcome> {
    let data = &rep.data;
    let truth = &rep.truth;
    let with_beta = |beta: Option<Estimate<f64>>, weighted: f64| {
        beta.map(|b| (b, beta_target(cfg, truth, weighted)))
    };
    Ok(match method {
        SimMethod::DaCe | SimMethod::DaRe => {
            let pooling = if method == SimMethod::DaCe {
                Pooling::CE
            } else {
                Pooling::RE
            };
            let r = estimate_da(data, pooling)?;
            let wa = &r.weights_a.as_ref().expect("DA reports weights").weights;
            Outcome {
                gamma: r.gamma,
                beta_a: with_beta(r.beta_a, dot(wa, &truth.marginal_a)),
            }
        }
        SimMethod::AdCe | SimMethod::AdRe => {
            let pooling = if method == SimMethod::AdCe {
                Pooling::CE
            } else {
                Pooling::RE
            };
            Outcome {
                gamma: estimate_ad(data, pooling)?.gamma,
                beta_a: None,
            }
        }
        SimMethod::Vhas => {
            let fit = fit_vhas(data, SigmaStructure::Full)?;
            let r = fit.to_result()?;
            let weighted = fit
                .phi_coefficients()
                .iter()
                .enumerate()
                .map(|(j, c)| dot(c, &observed_truth(rep, j)))
                .sum();
            Outcome {
                gamma: r.gamma,
                beta_a: with_beta(r.beta_a, weighted),
            }
        }
        SimMethod::WithinTrial => {
            let (r, coef) = within_trial_detail(data, Pooling::RE, Stage2::Propagated)?;
            let weighted = coef
                .iter()
                .enumerate()
                .map(|(j, c)| c[0] * truth.marginal_a[j] + c[1] * truth.marginal_b[j])
                .sum();
            Outcome {
                gamma: r.gamma,
                beta_a: with_beta(r.beta_a, weighted),
            }
        }
        SimMethod::PrevAdjusted => {
            let fit = fit_prevalence_adjusted(data)?;
            if !fit.converged {
                return Err(Error::NonConvergence("prevalence-adjusted fit".into()));
            }
            let r = fit.to_result();
            let weighted = fit
                .linear_maps()
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let row: Vec<f64> = (0..m.cols()).map(|c| m[(0, c)]).collect();
                    dot(&row, &observed_truth(rep, j))
                })
                .sum();
            Outcome {
                gamma: r.gamma,
                beta_a: with_beta(r.beta_a, weighted),
            }
        }
        SimMethod::Centered => {
            let w = restrict_to_two_arm(
                data,
                &compute_weights(data, WeightScheme::InteractionRe, None)?,
            )?;
            let r = fit_centered_collapsible(data, &w, Pooling::RE)?;
            Outcome {
                gamma: r.gamma,
                beta_a: with_beta(r.beta_a, dot(&w.weights, &truth.marginal_a)),
            }
        }
        SimMethod::Swada(scheme) => {
            let w = compute_weights(data, scheme, None)?;
            let r = pool_swada_with_policy(
                data,
                &w,
                Pooling::RE,
                SingleSubgroupPolicy::ExcludeAndRenormalize,
            )?;
            let wa = &r.weights_a.as_ref().expect("common weights").weights;
            Outcome {
                gamma: r.gamma,
                beta_a: with_beta(r.beta_a, dot(wa, &truth.marginal_a)),
            }
        }
    })
}

pub fn run_replicate(
    cfg: &ScenarioConfig,
    methods: &[SimMethod],
    replicate: u64,
) -> Result<ReplicateResult> {
    let rep = gen_replicate(cfg, replicate);
    let outcomes = methods
        .iter()
        .map(|&m| evaluate(m, cfg, &rep).ok())
        .collect();
    let da_ce = estimate_da(&rep.data, Pooling::CE)?;
    let da_re = estimate_da(&rep.data, Pooling::RE)?;
    let ad_ce = estimate_ad(&rep.data, Pooling::CE)?;
    let bias = |r: &crate::model::AnalysisResult<f64>| {
        let wa = &r.weights_a.as_ref().expect("DA weights").weights;
        let wb = &r.weights_b.as_ref().expect("DA weights").weights;
        aggregation_bias_expectation(&rep.truth.prevalences, wa, wb, cfg.delta)
    };
    Ok(ReplicateResult {
        outcomes,
        mismatch_ce: da_ce.gamma.point - ad_ce.gamma.point,
        expected_bias_ce: bias(&da_ce)?,
        expected_bias_re: bias(&da_re)?,
        gamma_da_ce: da_ce.gamma.point,
        gamma_da_re: da_re.gamma.point,
    })
}

/// Summary of one method across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub coverage_gamma: f64,
    pub coverage_gamma_mcse: f64,
    pub coverage_beta: Option<f64>,
    pub coverage_beta_mcse: Option<f64>,
    pub mean_gamma: f64,
    pub bias_gamma: f64,
    pub bias_gamma_mcse: f64,
    pub mean_width_gamma: f64,
    pub mean_width_beta: Option<f64>,
    /// Mean per-replicate ratio of the gamma interval width to that of `ad_re`.
    pub width_ratio_gamma: Option<f64>,
    /// Mean per-replicate ratio of the subgroup-A interval width to that of `da_re`.
    pub width_ratio_beta: Option<f64>,
    /// Mean and SD of this method's gamma minus the `ad_re` gamma.
    pub mean_mismatch: Option<f64>,
    pub sd_mismatch: Option<f64>,
}

/// CE difference of averages against CE average difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchSummary {
    pub mean: f64,
    pub sd: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Realized against expected aggregation bias of the difference of averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationBias {
    pub observed: f64,
    pub observed_mcse: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub label: String,
    pub config: ScenarioConfig,
    pub reps: usize,
    pub methods: Vec<MethodMetrics>,
    pub mismatch_ce: MismatchSummary,
    pub aggregation_bias_ce: AggregationBias,
    pub aggregation_bias_re: AggregationBias,
    /// Largest per-replicate gap between the gamma of each listed method and `ad_re`.
    pub max_gap_to_ad: Vec<(String, f64)>,
}

impl ScenarioMetrics {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn proportion(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Collapses replicate results into metrics.
pub fn summarize(
    cfg: &ScenarioConfig,
    methods: &[SimMethod],
    results: &[ReplicateResult],
) -> ScenarioMetrics {
    let idx = |m: SimMethod| methods.iter().position(|&x| x == m);
    let ad_i = idx(SimMethod::AdRe);
    let da_i = idx(SimMethod::DaRe);
    let mut metrics = Vec::with_capacity(methods.len());
    let mut gaps = Vec::new();
    for (i, &m) in methods.iter().enumerate() {
        let ok: Vec<&Outcome> = results
            .iter()
            .filter_map(|r| r.outcomes[i].as_ref())
            .collect();
        let n_ok = ok.len();
        let gammas: Vec<f64> = ok.iter().map(|o| o.gamma.point).collect();
        let (mean_gamma, sd_gamma) = mean_sd(&gammas);
        let (cov_g, cov_g_se) = proportion(
            ok.iter().filter(|o| o.gamma.covers(cfg.gamma_w)).count(),
            n_ok,
        );
        let betas: Vec<&(Estimate<f64>, f64)> =
            ok.iter().filter_map(|o| o.beta_a.as_ref()).collect();
        let (cov_b, cov_b_se) = if betas.is_empty() {
            (None, None)
        } else {
            let (p, se) = proportion(
                betas.iter().filter(|(e, t)| e.covers(*t)).count(),
                betas.len(),
            );
            (Some(p), Some(se))
        };
        let paired =
            |j: Option<usize>, f: &dyn Fn(&Outcome, &Outcome) -> Option<f64>| -> Vec<f64> {
                match j {
                    None => vec![],
                    Some(j) => results
                        .iter()
                        .filter_map(|r| match (&r.outcomes[i], &r.outcomes[j]) {
                            (Some(a), Some(b)) => f(a, b),
                            _ => None,
                        })
                        .collect(),
                }
            };
        let ratio_g = paired(ad_i, &|a, b| Some(a.gamma.width() / b.gamma.width()));
        let ratio_b = paired(da_i, &|a, b| match (a.beta_a, b.beta_a) {
            (Some((x, _)), Some((y, _))) => Some(x.width() / y.width()),
            _ => None,
        });
        let diffs = paired(ad_i, &|a, b| Some(a.gamma.point - b.gamma.point));
        let nonempty = |v: &[f64]| (!v.is_empty()).then(|| mean_sd(v));
        if matches!(
            m,
            SimMethod::WithinTrial
                | SimMethod::PrevAdjusted
                | SimMethod::Swada(WeightScheme::InteractionRe)
        ) && !diffs.is_empty()
        {
            gaps.push((
                m.name(),
                diffs.iter().fold(0.0_f64, |acc, d| acc.max(d.abs())),
            ));
        }
        metrics.push(MethodMetrics {
            method: m.name(),
            n_ok,
            n_failed: results.len() - n_ok,
            coverage_gamma: cov_g,
            coverage_gamma_mcse: cov_g_se,
            coverage_beta: cov_b,
            coverage_beta_mcse: cov_b_se,
            mean_gamma,
            bias_gamma: mean_gamma - cfg.gamma_w,
            bias_gamma_mcse: sd_gamma / (n_ok as f64).sqrt(),
            mean_width_gamma: mean_sd(&ok.iter().map(|o| o.gamma.width()).collect::<Vec<_>>()).0,
            mean_width_beta: nonempty(&betas.iter().map(|(e, _)| e.width()).collect::<Vec<_>>())
                .map(|x| x.0),
            width_ratio_gamma: nonempty(&ratio_g).map(|x| x.0),
            width_ratio_beta: nonempty(&ratio_b).map(|x| x.0),
            mean_mismatch: nonempty(&diffs).map(|x| x.0),
            sd_mismatch: nonempty(&diffs).map(|x| x.1),
        });
    }
    let mm: Vec<f64> = results.iter().map(|r| r.mismatch_ce).collect();
    let (mean, sd) = mean_sd(&mm);
    let agg = |g: &dyn Fn(&ReplicateResult) -> f64, e: &dyn Fn(&ReplicateResult) -> f64| {
        let errs: Vec<f64> = results.iter().map(|r| g(r) - cfg.gamma_w).collect();
        let (m, s) = mean_sd(&errs);
        AggregationBias {
            observed: m,
            observed_mcse: s / (errs.len() as f64).sqrt(),
            expected: results.iter().map(e).sum::<f64>() / results.len() as f64,
        }
    };
    ScenarioMetrics {
        label: cfg.label(),
        config: cfg.clone(),
        reps: results.len(),
        methods: metrics,
        mismatch_ce: MismatchSummary {
            mean,
            sd,
            mean_abs: mm.iter().map(|x| x.abs()).sum::<f64>() / mm.len() as f64,
            max_abs: mm.iter().fold(0.0, |a, x| a.max(x.abs())),
        },
        aggregation_bias_ce: agg(&|r| r.gamma_da_ce, &|r| r.expected_bias_ce),
        aggregation_bias_re: agg(&|r| r.gamma_da_re, &|r| r.expected_bias_re),
        max_gap_to_ad: gaps,
    }
}

/// Runs every replicate of a scenario. `threads = None` uses the global pool.
pub fn run_scenario(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<ScenarioMetrics> {
    cfg.validate()?;
    let methods = cfg.methods()?;
    let work = || -> Result<Vec<ReplicateResult>> {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &methods, r))
            .collect()
    };
    let results = match threads {
        None => work()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
    };
    Ok(summarize(cfg, &methods, &results))
}
