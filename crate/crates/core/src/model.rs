//! Domain types shared by every estimator: per-subgroup estimates, study
//! records, datasets, weight vectors and analysis results.
//!
//! Interaction sign convention: `gamma = effect(A) - effect(B)` throughout
//! the crate. Serialized outputs name the field `gamma_a_minus_b`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One subgroup's estimate within a study.
///
/// An absent subgroup behaves as an estimate with infinite standard error:
/// its precision is zero and its placeholder effect (zero) is never read by
/// any estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SubgroupEstimate<T> {
    Observed { effect: T, std_err: T, n: u64 },
    Absent,
}

impl<T: Scalar> SubgroupEstimate<T> {
    pub fn observed(effect: T, std_err: T, n: u64) -> Self {
        Self::Observed { effect, std_err, n }
    }

    #[inline]
    pub fn is_present(&self) -> bool {
        matches!(self, Self::Observed { .. })
    }

    /// Effect on the log-OR scale; the placeholder 0 when absent.
    #[inline]
    pub fn effect(&self) -> T {
        match *self {
            Self::Observed { effect, .. } => effect,
            Self::Absent => T::zero(),
        }
    }

    #[inline]
    pub fn std_err(&self) -> T {
        match *self {
            Self::Observed { std_err, .. } => std_err,
            Self::Absent => T::infinity(),
        }
    }

    #[inline]
    pub fn variance(&self) -> T {
        let s = self.std_err();
        s * s
    }

    /// Inverse variance, exactly zero when absent.
    #[inline]
    pub fn precision(&self) -> T {
        match *self {
            Self::Observed { std_err, .. } => T::one() / (std_err * std_err),
            Self::Absent => T::zero(),
        }
    }

    #[inline]
    pub fn n(&self) -> u64 {
        match *self {
            Self::Observed { n, .. } => n,
            Self::Absent => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord<T> {
    pub study_id: String,
    pub arm_a: SubgroupEstimate<T>,
    pub arm_b: SubgroupEstimate<T>,
    pub n_total: u64,
    pub prevalence_b: T,
}

impl<T: Scalar> StudyRecord<T> {
    /// Builds a record whose total and prevalence are derived from the arms,
    /// so the count invariants hold by construction.
    pub fn new(
        study_id: impl Into<String>,
        arm_a: SubgroupEstimate<T>,
        arm_b: SubgroupEstimate<T>,
    ) -> Self {
        let n_total = arm_a.n() + arm_b.n();
        let prevalence_b = if n_total == 0 {
            T::zero()
        } else {
            T::lit(arm_b.n() as f64) / T::lit(n_total as f64)
        };
        Self {
            study_id: study_id.into(),
            arm_a,
            arm_b,
            n_total,
            prevalence_b,
        }
    }

    #[inline]
    pub fn has_both(&self) -> bool {
        self.arm_a.is_present() && self.arm_b.is_present()
    }

    #[inline]
    pub fn prevalence_a(&self) -> T {
        T::one() - self.prevalence_b
    }

    /// The same study with the subgroup labels exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.study_id.clone(), self.arm_b, self.arm_a)
    }

    pub fn contrast(&self) -> ContrastEstimate<T> {
        contrast(self)
    }
}

/// Within-study subgroup contrast `g = y_A - y_B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate<T> {
    pub g: T,
    pub std_err: T,
}

impl<T: Scalar> ContrastEstimate<T> {
    #[inline]
    pub fn is_present(&self) -> bool {
        self.std_err.is_finite()
    }

    #[inline]
    pub fn variance(&self) -> T {
        self.std_err * self.std_err
    }
}

pub fn contrast<T: Scalar>(study: &StudyRecord<T>) -> ContrastEstimate<T> {
    if study.has_both() {
        let (a, b) = (&study.arm_a, &study.arm_b);
        ContrastEstimate {
            g: a.effect() - b.effect(),
            std_err: (a.variance() + b.variance()).sqrt(),
        }
    } else {
        ContrastEstimate {
            g: T::zero(),
            std_err: T::infinity(),
        }
    }
}

/// Standard error of a subgroup holding fraction `prevalence` of a study of
/// `n_total` participants whose unit information standard deviation is `uisd`.
pub fn se_from_uisd<T: Scalar>(uisd: T, n_total: u64, prevalence: T) -> T {
    if prevalence <= T::zero() {
        return T::infinity();
    }
    uisd / (prevalence * T::lit(n_total as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScale {
    #[default]
    LogOr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset<T> {
    pub studies: Vec<StudyRecord<T>>,
    pub scale: EffectScale,
    pub label_a: String,
    pub label_b: String,
}

impl<T: Scalar> MetaDataset<T> {
    pub fn new(studies: Vec<StudyRecord<T>>) -> Self {
        Self {
            studies,
            scale: EffectScale::LogOr,
            label_a: "A".into(),
            label_b: "B".into(),
        }
    }

    pub fn with_labels(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.label_a = a.into();
        self.label_b = b.into();
        self
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.studies.len()
    }

    pub fn contrasts(&self) -> Vec<ContrastEstimate<T>> {
        self.studies.iter().map(contrast).collect()
    }

    pub fn two_arm_count(&self) -> usize {
        self.studies.iter().filter(|s| s.has_both()).count()
    }

    pub fn prevalences(&self) -> Vec<T> {
        self.studies.iter().map(|s| s.prevalence_b).collect()
    }

    /// Keeps only studies that report both subgroups.
    pub fn two_arm_only(&self) -> Self {
        Self {
            studies: self
                .studies
                .iter()
                .filter(|s| s.has_both())
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn without(&self, index: usize) -> Self {
        let mut studies = self.studies.clone();
        studies.remove(index);
        Self {
            studies,
            ..self.clone()
        }
    }

    /// Exchanges the roles of subgroups A and B in every study.
    pub fn swapped(&self) -> Self {
        Self {
            studies: self.studies.iter().map(StudyRecord::swapped).collect(),
            scale: self.scale,
            label_a: self.label_b.clone(),
            label_b: self.label_a.clone(),
        }
    }
}

/// Which rule produced a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Equal,
    InteractionRe,
    StudySize,
    SmallerSubgroup,
    MinIv,
    MinTotalVariance,
    /// Per-column inverse-variance weights from a separate univariate pool.
    InverseVariance,
    /// Caller-supplied weights.
    Custom,
}

impl WeightScheme {
    /// The six common-weight schemes in their canonical order.
    pub const COMMON: [WeightScheme; 6] = [
        WeightScheme::Equal,
        WeightScheme::InteractionRe,
        WeightScheme::StudySize,
        WeightScheme::SmallerSubgroup,
        WeightScheme::MinIv,
        WeightScheme::MinTotalVariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Equal => "equal",
            Self::InteractionRe => "interaction_re",
            Self::StudySize => "study_size",
            Self::SmallerSubgroup => "smaller_subgroup",
            Self::MinIv => "min_iv",
            Self::MinTotalVariance => "min_total_variance",
            Self::InverseVariance => "inverse_variance",
            Self::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        [
            Self::Equal,
            Self::InteractionRe,
            Self::StudySize,
            Self::SmallerSubgroup,
            Self::MinIv,
            Self::MinTotalVariance,
            Self::InverseVariance,
            Self::Custom,
        ]
        .into_iter()
        .find(|w| w.name() == key)
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-study nonnegative weights aligned with `MetaDataset::studies`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<T> {
    pub weights: Vec<T>,
    pub scheme: WeightScheme,
    pub tau2_used: T,
}

impl<T: Scalar> WeightVector<T> {
    /// Normalizes `raw` to sum to one. Panics on an all-zero input, which
    /// callers rule out before construction.
    pub fn normalized(raw: Vec<T>, scheme: WeightScheme, tau2_used: T) -> Self {
        let total: T = raw.iter().copied().sum();
        assert!(total > T::zero(), "weights must have positive mass");
        Self {
            weights: raw.into_iter().map(|w| w / total).collect(),
            scheme,
            tau2_used,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// A pooled quantity with its Wald interval on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub point: T,
    pub std_err: T,
    pub ci_lower: T,
    pub ci_upper: T,
}

impl<T: Scalar> Estimate<T> {
    pub fn wald(point: T, std_err: T) -> Self {
        let h = T::z975() * std_err;
        Self {
            point,
            std_err,
            ci_lower: point - h,
            ci_upper: point + h,
        }
    }

    pub fn covers(&self, truth: T) -> bool {
        self.ci_lower <= truth && truth <= self.ci_upper
    }

    pub fn width(&self) -> T {
        self.ci_upper - self.ci_lower
    }

    /// Exponentiated `(point, lower, upper)`.
    pub fn exp(&self) -> (T, T, T) {
        (self.point.exp(), self.ci_lower.exp(), self.ci_upper.exp())
    }

    /// The same estimate for the negated quantity.
    pub fn negated(&self) -> Self {
        Self {
            point: -self.point,
            std_err: self.std_err,
            ci_lower: -self.ci_upper,
            ci_upper: -self.ci_lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DifferenceOfAverages,
    AverageDifference,
    Vhas,
    WithinTrial,
    PrevalenceAdjusted,
    CenteredCollapsible,
    Swada,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::DifferenceOfAverages => "da",
            Self::AverageDifference => "ad",
            Self::Vhas => "vhas",
            Self::WithinTrial => "within_trial",
            Self::PrevalenceAdjusted => "prev_adjusted",
            Self::CenteredCollapsible => "centered",
            Self::Swada => "swada",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output of every estimator. `beta_a`/`beta_b` are `None` for estimators
/// that only target the interaction (AD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult<T> {
    pub method: Method,
    /// Free-form qualifier, e.g. the weighting scheme or variance model.
    pub variant: String,
    pub beta_a: Option<Estimate<T>>,
    pub beta_b: Option<Estimate<T>>,
    #[serde(rename = "gamma_a_minus_b")]
    pub gamma: Estimate<T>,
    pub tau_estimates: BTreeMap<String, T>,
    pub weights_a: Option<WeightVector<T>>,
    pub weights_b: Option<WeightVector<T>>,
    pub weights_gamma: Option<WeightVector<T>>,
    pub collapsible: bool,
}

impl<T: Scalar> AnalysisResult<T> {
    pub fn gamma_only(method: Method, variant: impl Into<String>, gamma: Estimate<T>) -> Self {
        Self {
            method,
            variant: variant.into(),
            beta_a: None,
            beta_b: None,
            gamma,
            tau_estimates: BTreeMap::new(),
            weights_a: None,
            weights_b: None,
            weights_gamma: None,
            collapsible: false,
        }
    }

    /// `(beta_a - beta_b) - gamma`, or `None` when subgroup estimates are missing.
    pub fn collapsibility_gap(&self) -> Option<T> {
        Some((self.beta_a?.point - self.beta_b?.point) - self.gamma.point)
    }

    /// Display label such as `swada/equal`.
    pub fn label(&self) -> String {
        if self.variant.is_empty() {
            self.method.name().to_string()
        } else {
            format!("{}/{}", self.method.name(), self.variant)
        }
    }
}

/// A broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for dataset-level rules.
    pub study_id: Option<String>,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateId,
    TotalMismatch { n_total: u64, n_a: u64, n_b: u64 },
    PrevalenceMismatch { stated: f64, implied: f64 },
    NoObservedArm,
    NonPositiveStdErr { arm: char },
    NonFiniteEffect { arm: char },
    ObservedWithZeroN { arm: char },
    TooFewStudies { found: usize },
    NoTwoArmStudy,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.study_id {
            write!(f, "study `{id}`: ")?;
        }
        match &self.rule {
            Rule::DuplicateId => write!(f, "duplicate study id"),
            Rule::TotalMismatch { n_total, n_a, n_b } => {
                write!(
                    f,
                    "n_total {n_total} differs from n_a + n_b = {n_a} + {n_b}"
                )
            }
            Rule::PrevalenceMismatch { stated, implied } => {
                write!(
                    f,
                    "prevalence_b {stated} differs from n_b/n_total = {implied}"
                )
            }
            Rule::NoObservedArm => write!(f, "neither subgroup is observed"),
            Rule::NonPositiveStdErr { arm } => write!(
                f,
                "arm {arm} has a non-positive or non-finite standard error"
            ),
            Rule::NonFiniteEffect { arm } => write!(f, "arm {arm} has a non-finite effect"),
            Rule::ObservedWithZeroN { arm } => write!(f, "arm {arm} is observed but has n = 0"),
            Rule::TooFewStudies { found } => {
                write!(f, "at least 2 studies required, found {found}")
            }
            Rule::NoTwoArmStudy => write!(f, "no study reports both subgroups"),
        }
    }
}

/// Checks every dataset invariant and returns all violations found.
pub fn validate_dataset<T: Scalar>(data: &MetaDataset<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for s in &data.studies {
        let id = || Some(s.study_id.clone());
        let mut push = |rule| {
            out.push(Violation {
                study_id: id(),
                rule,
            })
        };
        if !seen.insert(s.study_id.as_str()) {
            push(Rule::DuplicateId);
        }
        let (na, nb) = (s.arm_a.n(), s.arm_b.n());
        if s.n_total != na + nb {
            push(Rule::TotalMismatch {
                n_total: s.n_total,
                n_a: na,
                n_b: nb,
            });
        } else if s.n_total > 0 {
            let implied = nb as f64 / s.n_total as f64;
            let stated = s.prevalence_b.as_f64();
            if !((stated - implied).abs() <= 1e-12_f64.max(T::epsilon().as_f64() * 4.0)) {
                push(Rule::PrevalenceMismatch { stated, implied });
            }
        }
        if !s.arm_a.is_present() && !s.arm_b.is_present() {
            push(Rule::NoObservedArm);
        }
        for (arm, est) in [('A', &s.arm_a), ('B', &s.arm_b)] {
            if let SubgroupEstimate::Observed { effect, std_err, n } = *est {
                if !(std_err > T::zero() && std_err.is_finite()) {
                    push(Rule::NonPositiveStdErr { arm });
                }
                if !effect.is_finite() {
                    push(Rule::NonFiniteEffect { arm });
                }
                if n == 0 {
                    push(Rule::ObservedWithZeroN { arm });
                }
            }
        }
    }
    if data.k() < 2 {
        out.push(Violation {
            study_id: None,
            rule: Rule::TooFewStudies { found: data.k() },
        });
    }
    if data.two_arm_count() == 0 {
        out.push(Violation {
            study_id: None,
            rule: Rule::NoTwoArmStudy,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(id: &str, ya: f64, yb: f64, na: u64, nb: u64) -> StudyRecord<f64> {
        let arm = |y, n: u64| {
            if n == 0 {
                SubgroupEstimate::Absent
            } else {
                SubgroupEstimate::observed(y, 4.0 / (n as f64).sqrt(), n)
            }
        };
        StudyRecord::new(id, arm(ya, na), arm(yb, nb))
    }

    #[test]
    fn contrast_of_cape_covid_ratio() {
        let s = StudyRecord::new(
            "cape",
            SubgroupEstimate::observed(0.48f64.ln(), 0.5, 100),
            SubgroupEstimate::observed(0.28f64.ln(), 0.7, 49),
        );
        let c = contrast(&s);
        assert!((c.g - (0.48f64 / 0.28).ln()).abs() < 1e-15);
        assert!((c.g - 0.5390).abs() < 1e-4);
        assert!((c.std_err - (0.25f64 + 0.49).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_arms_give_zero_contrast() {
        let s = study("x", 0.3, 0.3, 50, 50);
        let c = contrast(&s);
        assert_eq!(c.g, 0.0);
        assert!((c.std_err - s.arm_a.std_err() * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn absent_arm_gives_infinite_contrast_se() {
        let c = contrast(&study("x", 0.3, 0.0, 50, 0));
        assert_eq!(c.g, 0.0);
        assert!(c.std_err.is_infinite());
        assert!(!c.is_present());
    }

    #[test]
    fn uisd_examples() {
        assert!((se_from_uisd(4.0f64, 100, 0.25) - 0.8).abs() < 1e-15);
        assert!((se_from_uisd(4.0f64, 400, 0.25) - 0.4).abs() < 1e-15);
        assert!((se_from_uisd(3.0f64, 9, 1.0) - 1.0).abs() < 1e-15);
        assert!(se_from_uisd(4.0f64, 100, 0.0).is_infinite());
    }

    #[test]
    fn prevalence_derived_from_counts() {
        let s = study("x", 0.0, 0.0, 30, 70);
        assert_eq!(s.n_total, 100);
        assert!((s.prevalence_b - 0.7).abs() < 1e-15);
        let single = study("y", 0.0, 0.0, 30, 0);
        assert_eq!(single.prevalence_b, 0.0);
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        let d = MetaDataset::new(vec![
            study("a", 0.1, 0.2, 10, 20),
            study("b", 0.1, 0.2, 15, 5),
            study("c", 0.1, 0.0, 9, 0),
        ]);
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn duplicate_id_is_reported_once() {
        let d = MetaDataset::new(vec![
            study("a", 0.1, 0.2, 10, 20),
            study("a", 0.1, 0.2, 15, 5),
        ]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].study_id.as_deref(), Some("a"));
        assert_eq!(v[0].rule, Rule::DuplicateId);
    }

    #[test]
    fn total_mismatch_is_reported() {
        let mut s = study("a", 0.1, 0.2, 10, 20);
        s.n_total = 31;
        let d = MetaDataset::new(vec![s, study("b", 0.1, 0.2, 15, 5)]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0].rule, Rule::TotalMismatch { n_total: 31, .. }));
    }

    #[test]
    fn dataset_level_rules() {
        let d = MetaDataset::new(vec![study("a", 0.1, 0.0, 10, 0)]);
        let rules: Vec<_> = validate_dataset(&d).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::TooFewStudies { found: 1 }));
        assert!(rules.contains(&Rule::NoTwoArmStudy));
    }

    #[test]
    fn wald_interval_is_symmetric() {
        let e = Estimate::wald(1.0f64, 0.5);
        assert!((e.ci_upper - 1.0 - 1.959963984540054 * 0.5).abs() < 1e-15);
        assert!((e.ci_upper - e.point - (e.point - e.ci_lower)).abs() < 1e-15);
        let n = e.negated();
        assert_eq!(n.ci_lower, -e.ci_upper);
    }

    #[test]
    fn scheme_names_roundtrip() {
        for s in WeightScheme::COMMON {
            assert_eq!(WeightScheme::parse(s.name()), Some(s));
        }
        assert_eq!(
            WeightScheme::parse("study-size"),
            Some(WeightScheme::StudySize)
        );
    }
}
