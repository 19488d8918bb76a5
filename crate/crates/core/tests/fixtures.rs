mod common;

use common::{close, fixture};
use swada_core::diagnostics::{loo_influence, mismatch_for, WeightsSpec};
use swada_core::estimators::{estimate_ad, estimate_da};
use swada_core::Pooling;

const IV_CE: WeightsSpec = WeightsSpec::InverseVariance(Pooling::CE);

#[test]
fn react_has_eleven_subgroup_estimates() {
    let d = fixture("react.csv");
    assert_eq!(d.k(), 7);
    let finite = d
        .studies
        .iter()
        .flat_map(|s| [&s.arm_a, &s.arm_b])
        .filter(|a| a.is_present() && a.effect().is_finite())
        .count();
    assert_eq!(finite, 11);
    assert_eq!(d.two_arm_count(), 4);
    assert_eq!((d.label_a.as_str(), d.label_b.as_str()), ("IV", "NIV"));
}

#[test]
fn il6_shape() {
    let d = fixture("il6.csv");
    assert_eq!(d.k(), 15);
    assert_eq!(d.two_arm_count(), 10);
    assert!(d.studies.iter().all(|s| s.arm_b.is_present()));
}

#[test]
fn react_mismatch_equals_difference_of_pools() {
    let d = fixture("react.csv");
    let m = mismatch_for(&d, IV_CE, IV_CE).unwrap();
    let da = estimate_da(&d, Pooling::CE).unwrap().gamma.point;
    let ad = estimate_ad(&d, Pooling::CE).unwrap().gamma.point;
    assert!(close(m.delta_hat, da - ad, 1e-12));
    // reference: ln(1.68) - ln(3.86)
    assert!((m.delta_hat - (-0.832)).abs() < 0.03, "{}", m.delta_hat);
    assert!(m.var_delta > 0.0);
    let sum: f64 = m.per_study_contribution.iter().sum();
    assert!(close(sum, m.delta_hat, 1e-12));
}

#[test]
fn recovery_dominates_the_react_mismatch() {
    let d = fixture("react.csv");
    let m = mismatch_for(&d, IV_CE, IV_CE).unwrap();
    let top = (0..d.k())
        .max_by(|&i, &j| {
            let c = &m.per_study_contribution;
            c[i].abs().total_cmp(&c[j].abs())
        })
        .unwrap();
    assert_eq!(d.studies[top].study_id, "RECOVERY");

    let loo = loo_influence(&d, IV_CE, IV_CE).unwrap();
    let j = loo.most_influential().unwrap();
    assert_eq!(loo.entries[j].study_id, "RECOVERY");
}

#[test]
fn leave_one_out_matches_exhaustive_recomputation() {
    let d = fixture("react.csv");
    let loo = loo_influence(&d, IV_CE, IV_CE).unwrap();
    let full = estimate_da(&d, Pooling::CE).unwrap().gamma.point
        - estimate_ad(&d, Pooling::CE).unwrap().gamma.point;
    for (j, e) in loo.entries.iter().enumerate() {
        let sub = d.without(j);
        let delta = estimate_da(&sub, Pooling::CE).unwrap().gamma.point
            - estimate_ad(&sub, Pooling::CE).unwrap().gamma.point;
        assert!(close(e.delta_shift, delta - full, 1e-12), "{}", e.study_id);
    }
}
