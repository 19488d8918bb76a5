//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use swada_core::io::read_csv_file;
use swada_core::model::{MetaDataset, StudyRecord, SubgroupEstimate};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> MetaDataset<f64> {
    read_csv_file(fixture_path(name))
        .expect("fixture parses")
        .data
}

/// Which subgroups a generated study reports.
#[derive(Debug, Clone, Copy)]
pub enum Arms {
    Both,
    OnlyA,
    OnlyB,
}

fn arms() -> impl Strategy<Value = Arms> {
    prop_oneof![6 => Just(Arms::Both), 1 => Just(Arms::OnlyA), 1 => Just(Arms::OnlyB)]
}

/// `(n_total, prevalence_b, y_a, se_a, y_b, se_b, arms)`
type Raw = (u64, f64, f64, f64, f64, f64, Arms);

fn raw_study() -> impl Strategy<Value = Raw> {
    (
        20u64..2000,
        0.05f64..0.95,
        -2.0f64..2.0,
        0.05f64..1.5,
        -2.0f64..2.0,
        0.05f64..1.5,
        arms(),
    )
}

pub fn build(raw: &[Raw]) -> MetaDataset<f64> {
    let studies = raw
        .iter()
        .enumerate()
        .map(|(j, &(n, p, ya, sa, yb, sb, arms))| {
            // the first study always reports both subgroups
            let arms = if j == 0 { Arms::Both } else { arms };
            let nb = ((n as f64 * p).round() as u64).clamp(1, n - 1);
            let a = SubgroupEstimate::observed(ya, sa, n - nb);
            let b = SubgroupEstimate::observed(yb, sb, nb);
            let (a, b) = match arms {
                Arms::Both => (a, b),
                Arms::OnlyA => (
                    SubgroupEstimate::observed(ya, sa, n),
                    SubgroupEstimate::Absent,
                ),
                Arms::OnlyB => (
                    SubgroupEstimate::Absent,
                    SubgroupEstimate::observed(yb, sb, n),
                ),
            };
            StudyRecord::new(format!("s{j}"), a, b)
        })
        .collect();
    MetaDataset::new(studies)
}

/// Datasets with `k` in `lo..=hi`, random single-subgroup studies and at
/// least one study reporting both subgroups.
pub fn dataset(lo: usize, hi: usize) -> impl Strategy<Value = MetaDataset<f64>> {
    prop::collection::vec(raw_study(), lo..=hi).prop_map(|r| build(&r))
}

/// Datasets in which every study reports both subgroups.
pub fn two_arm_dataset(lo: usize, hi: usize) -> impl Strategy<Value = MetaDataset<f64>> {
    prop::collection::vec(raw_study(), lo..=hi).prop_map(|mut r| {
        for s in &mut r {
            s.6 = Arms::Both;
        }
        build(&r)
    })
}

/// Plain inverse-variance mean and standard error, written out directly.
pub fn iv_pool(y: &[f64], v: &[f64]) -> (f64, f64) {
    let mut sw = 0.0;
    let mut swy = 0.0;
    for (&y, &v) in y.iter().zip(v) {
        if v.is_finite() {
            sw += 1.0 / v;
            swy += y / v;
        }
    }
    (swy / sw, (1.0 / sw).sqrt())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
