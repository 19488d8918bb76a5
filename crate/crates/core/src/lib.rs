//! Subgroup and interaction meta-analysis.
//!
//! Each study contributes estimates for two subgroups, A and B, on the log
//! odds-ratio scale. The crate pools them with the usual separate analyses
//! (difference of averages, average difference), with bivariate and
//! two-stage models, and with common-weight schemes that make the subgroup
//! and interaction analyses agree by construction. It also quantifies the
//! mismatch between the separate analyses and runs Monte Carlo scenarios
//! under a prevalence-dependent data generator.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.
//!
//! The interaction is always `gamma = effect(A) - effect(B)`.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod heterogeneity;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod scalar;
pub mod simulation;
pub mod swada;

pub use error::{Error, Result};
pub use heterogeneity::{Model, Pooling, TauMethod};
pub use model::{contrast, se_from_uisd, validate_dataset, Method, WeightScheme};
pub use scalar::Scalar;

pub type SubgroupEstimate = model::SubgroupEstimate<f64>;
pub type StudyRecord = model::StudyRecord<f64>;
pub type ContrastEstimate = model::ContrastEstimate<f64>;
pub type MetaDataset = model::MetaDataset<f64>;
pub type WeightVector = model::WeightVector<f64>;
pub type Estimate = model::Estimate<f64>;
pub type AnalysisResult = model::AnalysisResult<f64>;
pub type UnivariateSample = heterogeneity::UnivariateSample<f64>;
pub type TauEstimate = heterogeneity::TauEstimate<f64>;
pub type BivariateFit = estimators::BivariateFit<f64>;
pub type PrevAdjFit = estimators::PrevAdjFit<f64>;
pub type MismatchReport = diagnostics::MismatchReport<f64>;
pub type InfluenceReport = diagnostics::InfluenceReport<f64>;

/// Crate version, recorded in simulation provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
