//! Acceptance suite. Prints one PASS/FAIL line per criterion followed by the
//! individual checks, and exits non-zero when any criterion fails.
//!
//! Run with `cargo test -p swada-core --test acceptance`.

mod common;

use std::cell::Cell;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swada_core::diagnostics::{mismatch, mismatch_for, CovarianceModel, WeightsSpec};
use swada_core::estimators::{
    estimate_ad, estimate_da, fit_prevalence_adjusted, fit_vhas, fit_within_trial, SigmaStructure,
};
use swada_core::heterogeneity::{tau_reml, UnivariateSample};
use swada_core::model::{AnalysisResult, MetaDataset, StudyRecord, SubgroupEstimate};
use swada_core::simulation::{run_scenario, PrevalenceScheme, ScenarioConfig, ScenarioMetrics};
use swada_core::swada::{
    compute_weights, pool_swada_with_policy, restrict_to_two_arm, weights_min_iv_re,
    weights_min_total_variance, SingleSubgroupPolicy,
};
use swada_core::{se_from_uisd, Pooling, WeightScheme};

/// Collects sub-check lines for one criterion.
#[derive(Default)]
struct Checks {
    lines: String,
    ok: bool,
}

impl Checks {
    fn new() -> Self {
        Self {
            lines: String::new(),
            ok: true,
        }
    }

    fn check(&mut self, pass: bool, what: impl AsRef<str>) {
        self.ok &= pass;
        let _ = writeln!(
            self.lines,
            "    [{}] {}",
            if pass { "pass" } else { "FAIL" },
            what.as_ref()
        );
    }

    fn info(&mut self, what: impl AsRef<str>) {
        let _ = writeln!(self.lines, "    [info] {}", what.as_ref());
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn ror(r: &AnalysisResult<f64>) -> (f64, f64, f64) {
    r.gamma.exp()
}

fn swada(d: &MetaDataset<f64>, scheme: WeightScheme) -> AnalysisResult<f64> {
    let w = compute_weights(d, scheme, None).expect("weights");
    pool_swada_with_policy(
        d,
        &w,
        Pooling::RE,
        SingleSubgroupPolicy::ExcludeAndRenormalize,
    )
    .expect("swada pool")
}

fn criterion_1() -> Checks {
    let mut c = Checks::new();
    let start = Instant::now();
    let d = common::fixture("react.csv");
    let ce = estimate_da(&d, Pooling::CE).unwrap();
    let re = estimate_da(&d, Pooling::RE).unwrap();
    let ad = estimate_ad(&d, Pooling::RE).unwrap();
    let elapsed = start.elapsed();
    let (ce, re, ad) = (ror(&ce).0, ror(&re).0, ror(&ad).0);
    c.check(
        within(ce, 1.68, 0.05),
        format!("CE DA ROR {ce:.4} (1.68 +/- 0.05)"),
    );
    c.check(
        in_range(re, 1.88, 2.02),
        format!("RE DA ROR {re:.4} in [1.88, 2.02]"),
    );
    c.check(
        within(ad, 3.86, 0.03),
        format!("AD ROR {ad:.4} (3.86 +/- 0.03)"),
    );
    c.check(
        elapsed < Duration::from_secs(1),
        format!("runtime {elapsed:?} < 1 s"),
    );
    c
}

fn criterion_2() -> Checks {
    let mut c = Checks::new();
    let d = common::fixture("react.csv");
    let mut min_three = pool_swada_with_policy(
        &d,
        &weights_min_iv_re(&d, Pooling::RE).unwrap(),
        Pooling::RE,
        SingleSubgroupPolicy::ExcludeAndRenormalize,
    )
    .unwrap();
    min_three.variant = "min_iv_re".into();
    let anchored = [
        ("within-trial", fit_within_trial(&d, Pooling::RE).unwrap()),
        (
            "prevalence-adjusted",
            fit_prevalence_adjusted(&d).unwrap().to_result(),
        ),
        ("interaction-RE", swada(&d, WeightScheme::InteractionRe)),
        ("min-of-three-RE", min_three),
    ];
    for (name, r) in &anchored {
        let (p, lo, hi) = ror(r);
        c.check(
            within(p, 3.86, 0.03) && within(lo, 1.38, 0.1) && within(hi, 10.78, 0.1),
            format!("{name} ROR {p:.4} ({lo:.3}, {hi:.3}) vs 3.86 (1.38, 10.78)"),
        );
    }
    let eq = ror(&swada(&d, WeightScheme::Equal)).0;
    c.check(
        within(eq, 3.31, 0.05),
        format!("equal weights ROR {eq:.4} (3.31 +/- 0.05)"),
    );
    let ss = ror(&swada(&d, WeightScheme::StudySize)).0;
    c.check(
        within(ss, 2.06, 0.05),
        format!("study-size ROR {ss:.4} (2.06 +/- 0.05)"),
    );
    let mtv = ror(&swada(&d, WeightScheme::MinTotalVariance)).0;
    c.check(
        in_range(mtv, 3.7, 3.95),
        format!("min-total-variance ROR {mtv:.4} in [3.7, 3.95]"),
    );
    let wt = fit_within_trial(&d, Pooling::RE).unwrap();
    let niv = wt.beta_b.unwrap().exp().0;
    c.info(format!(
        "within-trial {} OR {niv:.4} (expected 0.25 to 0.28)",
        d.label_b
    ));
    c
}

fn criterion_3() -> Checks {
    let mut c = Checks::new();
    let d = common::fixture("il6.csv");
    // reported as B relative to A, the reciprocal of exp(gamma)
    let b_vs_a = |r: AnalysisResult<f64>| (-r.gamma.point).exp();
    let ce = b_vs_a(estimate_da(&d, Pooling::CE).unwrap());
    let re = b_vs_a(estimate_da(&d, Pooling::RE).unwrap());
    let ad = b_vs_a(estimate_ad(&d, Pooling::RE).unwrap());
    c.check(
        within(ce, 0.73, 0.02),
        format!("CE DA ratio {ce:.4} (0.73 +/- 0.02)"),
    );
    c.check(
        within(re, 0.75, 0.02),
        format!("RE DA ratio {re:.4} (0.75 +/- 0.02)"),
    );
    c.check(
        within(ad, 0.69, 0.02),
        format!("AD ratio {ad:.4} (0.69 +/- 0.02)"),
    );
    c
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn criterion_4() -> Checks {
    let mut c = Checks::new();
    let pooled = Cell::new(0usize);
    let worst = Cell::new(0.0f64);
    let res = runner(1000).run(&common::dataset(2, 12), |d| {
        for scheme in WeightScheme::COMMON {
            for pool in [Pooling::CE, Pooling::RE] {
                let Ok(w) = compute_weights(&d, scheme, None) else {
                    continue;
                };
                let Ok(r) = pool_swada_with_policy(
                    &d,
                    &w,
                    pool,
                    SingleSubgroupPolicy::ExcludeAndRenormalize,
                ) else {
                    continue;
                };
                let gap = r.collapsibility_gap().unwrap().abs();
                pooled.set(pooled.get() + 1);
                worst.set(worst.get().max(gap));
                prop_assert!(gap < 1e-10, "{scheme}: gap {gap}");
            }
        }
        let r = swada(&d, WeightScheme::InteractionRe);
        let ad = estimate_ad(&d, Pooling::RE).unwrap();
        prop_assert_eq!(r.gamma.point.to_bits(), ad.gamma.point.to_bits());
        prop_assert_eq!(r.gamma.std_err.to_bits(), ad.gamma.std_err.to_bits());
        Ok(())
    });
    c.check(
        res.is_ok(),
        format!(
            "1000 datasets, {} successful pools, max |gap| {:.2e} < 1e-10",
            pooled.get(),
            worst.get()
        ),
    );
    c.check(
        res.is_ok(),
        "interaction-RE SWADA gamma bit-identical to RE contrast pool",
    );
    if let Err(e) = res {
        c.info(format!("{e}"));
    }
    c
}

fn constant_prevalence() -> impl Strategy<Value = MetaDataset<f64>> {
    (
        prop::collection::vec((20u64..3000, -1.5f64..1.5, -1.5f64..1.5), 2..12),
        0.1f64..0.9,
        1.0f64..6.0,
    )
        .prop_map(|(rows, p, uisd)| {
            let studies = rows
                .iter()
                .enumerate()
                .map(|(j, &(n, ya, yb))| {
                    let a = SubgroupEstimate::observed(ya, se_from_uisd(uisd, n, 1.0 - p), n);
                    let b = SubgroupEstimate::observed(yb, se_from_uisd(uisd, n, p), n);
                    StudyRecord::new(format!("s{j}"), a, b)
                })
                .collect();
            MetaDataset::new(studies)
        })
}

fn criterion_5() -> Checks {
    let mut c = Checks::new();
    let worst = Cell::new(0.0f64);
    let res = runner(1000).run(&common::dataset(2, 12), |d| {
        for pool in [Pooling::CE, Pooling::RE] {
            let da = estimate_da(&d, pool).unwrap().gamma.point;
            let ad = estimate_ad(&d, pool).unwrap().gamma.point;
            let m = mismatch_for(
                &d,
                WeightsSpec::InverseVariance(pool),
                WeightsSpec::InverseVariance(pool),
            )
            .unwrap();
            let err = (m.delta_hat - (da - ad)).abs();
            worst.set(worst.get().max(err));
            prop_assert!(err < 1e-12, "delta {} vs {}", m.delta_hat, da - ad);
        }
        Ok(())
    });
    c.check(
        res.is_ok(),
        format!(
            "delta_hat = DA - AD on 1000 datasets, max error {:.2e} < 1e-12",
            worst.get()
        ),
    );

    let res = runner(1000).run(&common::dataset(2, 12), |d| {
        for scheme in WeightScheme::COMMON {
            let Ok(w) = compute_weights(&d, scheme, None).and_then(|w| restrict_to_two_arm(&d, &w))
            else {
                continue;
            };
            let m = mismatch(&d, (&w, &w), &w, CovarianceModel::SamplingOnly).unwrap();
            prop_assert!(m.var_delta == 0.0 && m.delta_hat == 0.0);
        }
        Ok(())
    });
    c.check(
        res.is_ok(),
        "Var(delta_hat) = 0 exactly when the weights coincide",
    );

    let worst = Cell::new(0.0f64);
    let res = runner(1000).run(&constant_prevalence(), |d| {
        let m = mismatch_for(
            &d,
            WeightsSpec::InverseVariance(Pooling::CE),
            WeightsSpec::InverseVariance(Pooling::CE),
        )
        .unwrap();
        worst.set(worst.get().max(m.delta_hat.abs()));
        prop_assert!(m.delta_hat.abs() < 1e-12);
        Ok(())
    });
    c.check(
        res.is_ok(),
        format!(
            "constant prevalence with common UISD: max |delta_hat| {:.2e} < 1e-12",
            worst.get()
        ),
    );
    c
}

fn scenario(delta: f64) -> (ScenarioMetrics, Duration) {
    let cfg = ScenarioConfig {
        k: 20,
        prevalence_scheme: PrevalenceScheme::Unif1090,
        tau1: 0.1,
        delta,
        reps: 1000,
        ..ScenarioConfig::default()
    };
    let start = Instant::now();
    let m = run_scenario(&cfg, Some(4)).expect("scenario runs");
    (m, start.elapsed())
}

fn criterion_6(m: &ScenarioMetrics, elapsed: Duration) -> Checks {
    let mut c = Checks::new();
    let b = &m.aggregation_bias_ce;
    c.check(
        (b.observed - b.expected).abs() <= 3.0 * b.observed_mcse,
        format!(
            "CE DA mean(gamma_hat - gamma_w) {:.4} vs expected {:.4}, |diff| {:.4} <= 3 MCSE {:.4}",
            b.observed,
            b.expected,
            (b.observed - b.expected).abs(),
            3.0 * b.observed_mcse
        ),
    );
    let b = &m.aggregation_bias_re;
    c.info(format!(
        "RE DA mean(gamma_hat - gamma_w) {:.4} vs expected {:.4} (MCSE {:.4})",
        b.observed, b.expected, b.observed_mcse
    ));
    let cov = |name: &str| m.method(name).expect("method present").coverage_gamma;
    c.check(
        cov("da_ce") < 0.90,
        format!("DA (CE) gamma coverage {:.3} < 0.90", cov("da_ce")),
    );
    c.info(format!("DA (RE) gamma coverage {:.3}", cov("da_re")));
    for name in ["within_trial", "prev_adjusted", "swada_interaction_re"] {
        let v = cov(name);
        c.check(
            in_range(v, 0.93, 0.97),
            format!("{name} coverage {v:.3} in [0.93, 0.97]"),
        );
    }
    c.check(
        elapsed < Duration::from_secs(300),
        format!("runtime {elapsed:?} < 5 min on 4 threads"),
    );
    c
}

fn criterion_7(m: &ScenarioMetrics) -> Checks {
    let mut c = Checks::new();
    for x in &m.methods {
        // Monte Carlo standard error of a coverage proportion at its nominal value
        let mcse = (0.95 * 0.05 / x.n_ok as f64).sqrt();
        c.check(
            (x.coverage_gamma - 0.95).abs() <= 3.0 * mcse,
            format!(
                "{} coverage {:.3} within 0.95 +/- {:.4}",
                x.method,
                x.coverage_gamma,
                3.0 * mcse
            ),
        );
    }
    let s = &m.mismatch_ce;
    let mcse = s.sd / (m.reps as f64).sqrt();
    c.check(
        s.mean.abs() <= 3.0 * mcse,
        format!(
            "mean CE mismatch {:.4}, |mean| <= 3 MCSE {:.4}",
            s.mean,
            3.0 * mcse
        ),
    );
    c
}

fn criterion_8(m: &ScenarioMetrics) -> Checks {
    let mut c = Checks::new();
    let ratio = |name: &str| {
        m.method(name)
            .and_then(|x| x.width_ratio_gamma)
            .expect("width ratio")
    };
    let eq = ratio("swada_equal");
    c.check(
        in_range(eq, 1.05, 1.25),
        format!("equal weights width ratio {eq:.4} in [1.05, 1.25]"),
    );
    for name in ["swada_study_size", "swada_smaller_subgroup"] {
        let r = ratio(name);
        c.check(
            in_range(r, 1.0, 1.10),
            format!("{name} width ratio {r:.4} in [1.00, 1.10]"),
        );
    }
    for name in ["within_trial", "prev_adjusted", "swada_interaction_re"] {
        let r = ratio(name);
        c.check(
            (r - 1.0).abs() < 1e-6,
            format!("{name} width ratio {r:.10} = 1"),
        );
    }
    c
}

/// Log determinant objective of the common-weight subgroup means, written
/// independently of the library.
fn mtv_objective(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let sa: f64 = w.iter().zip(a).map(|(w, a)| w * w * a).sum();
    let sb: f64 = w.iter().zip(b).map(|(w, b)| w * w * b).sum();
    sa.ln() + sb.ln()
}

fn reml_ll(y: &[f64], v: &[f64], t: f64) -> f64 {
    let w: Vec<f64> = v.iter().map(|v| 1.0 / (v + t)).collect();
    let sw: f64 = w.iter().sum();
    let mu = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    -0.5 * (v.iter().map(|v| (v + t).ln()).sum::<f64>()
        + sw.ln()
        + w.iter()
            .zip(y)
            .map(|(w, y)| w * (y - mu).powi(2))
            .sum::<f64>())
}

/// Full bivariate normal log-likelihood with mean `(phi, phi - gamma)`.
fn bivariate_ll(d: &MetaDataset<f64>, phi: f64, gamma: f64, ta: f64, tb: f64, rho: f64) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    for s in &d.studies {
        let (ra, rb) = (s.arm_a.effect() - phi, s.arm_b.effect() - phi + gamma);
        match (s.arm_a.is_present(), s.arm_b.is_present()) {
            (true, true) => {
                let (a, b, c) = (
                    s.arm_a.variance() + ta * ta,
                    s.arm_b.variance() + tb * tb,
                    rho * ta * tb,
                );
                let det = a * b - c * c;
                let q = (b * ra * ra - 2.0 * c * ra * rb + a * rb * rb) / det;
                ll -= 0.5 * (2.0 * ln2pi + det.ln() + q);
            }
            (true, false) => {
                let a = s.arm_a.variance() + ta * ta;
                ll -= 0.5 * (ln2pi + a.ln() + ra * ra / a);
            }
            (false, true) => {
                let b = s.arm_b.variance() + tb * tb;
                ll -= 0.5 * (ln2pi + b.ln() + rb * rb / b);
            }
            (false, false) => {}
        }
    }
    ll
}

fn two_arm(j: usize, ya: f64, sa: f64, yb: f64, sb: f64) -> StudyRecord<f64> {
    StudyRecord::new(
        format!("s{j}"),
        SubgroupEstimate::observed(ya, sa, 50),
        SubgroupEstimate::observed(yb, sb, 50),
    )
}

fn criterion_9() -> Checks {
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // minimum-total-variance weights against a simplex grid
    let steps = 1000usize;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let se: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)))
            .collect();
        let d = MetaDataset::new(
            se.iter()
                .enumerate()
                .map(|(j, &(a, b))| two_arm(j, 0.0, a, 0.0, b))
                .collect(),
        );
        let (a, b): (Vec<f64>, Vec<f64>) = se.iter().map(|&(a, b)| (a * a, b * b)).unzip();
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=steps {
            for j in 0..=steps - i {
                let w = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                let f = mtv_objective(&w, &a, &b);
                if f < best.0 {
                    best = (f, w);
                }
            }
        }
        let w = weights_min_total_variance(&d, 0.0).unwrap();
        for (x, g) in w.weights.iter().zip(best.1) {
            worst = worst.max((x - g).abs());
        }
    }
    c.check(
        worst <= 0.005,
        format!("min-total-variance weights vs simplex grid, max coordinate gap {worst:.5}"),
    );

    // REML against a fine grid
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let k = rng.random_range(3..10);
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.5)).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..0.5)).collect();
        let t = tau_reml(&UnivariateSample::new(y.clone(), v.clone()).unwrap())
            .unwrap()
            .tau2;
        let grid = 200_000;
        let upper = 5.0;
        let g = (0..=grid)
            .map(|i| upper * i as f64 / grid as f64)
            .map(|t| (t, reml_ll(&y, &v, t)))
            .fold(
                (0.0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            )
            .0;
        worst = worst.max((t - g).abs());
    }
    c.check(
        worst <= 1e-3,
        format!("REML tau^2 vs grid search, max gap {worst:.2e}"),
    );

    // bivariate fit against random search
    let mut all_beaten = true;
    let mut margin = f64::INFINITY;
    for _ in 0..3 {
        let d = MetaDataset::new(
            (0..4)
                .map(|j| {
                    let u: f64 = rng.random_range(-0.5..0.5);
                    two_arm(
                        j,
                        0.3 + u,
                        rng.random_range(0.15..0.4),
                        -0.2 + u,
                        rng.random_range(0.15..0.4),
                    )
                })
                .collect(),
        );
        let f = fit_vhas(&d, SigmaStructure::Full).unwrap();
        let (ta, tb) = (f.sigma[(0, 0)].sqrt(), f.sigma[(1, 1)].sqrt());
        let rho = if ta > 0.0 && tb > 0.0 {
            f.sigma[(0, 1)] / (ta * tb)
        } else {
            0.0
        };
        let at_fit = bivariate_ll(&d, f.phi, f.gamma, ta, tb, rho);
        let best_random = (0..10_000)
            .map(|_| {
                bivariate_ll(
                    &d,
                    f.phi + rng.random_range(-1.0..1.0),
                    f.gamma + rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(-0.999..0.999),
                )
            })
            .fold(f64::NEG_INFINITY, f64::max);
        all_beaten &= at_fit >= best_random;
        margin = margin.min(at_fit - best_random);
    }
    c.check(
        all_beaten,
        format!("bivariate optimum beats 10^4 random points on 3 datasets, min margin {margin:.4}"),
    );
    c
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: u32, title: &str, c: Checks| {
        println!(
            "criterion {n} {}: {title}",
            if c.ok { "PASS" } else { "FAIL" }
        );
        print!("{}", c.lines);
        if !c.ok {
            failed.push(n);
        }
    };
    report(1, "fixture pooled ratios (corticosteroids)", criterion_1());
    report(2, "fixture method table (corticosteroids)", criterion_2());
    report(3, "fixture pooled ratios (IL-6)", criterion_3());
    report(4, "collapsibility of common-weight pooling", criterion_4());
    report(5, "mismatch calculus", criterion_5());
    let (biased, t) = scenario(3.0);
    report(
        6,
        "aggregation bias under a prevalence effect",
        criterion_6(&biased, t),
    );
    let (null, _) = scenario(0.0);
    report(
        7,
        "coverage and mismatch without a prevalence effect",
        criterion_7(&null),
    );
    report(8, "confidence interval width ratios", criterion_8(&null));
    report(9, "oracle equivalences", criterion_9());
    if failed.is_empty() {
        println!("all criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
