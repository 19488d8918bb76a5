use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightScheme;

/// How study-level prevalences of subgroup B are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrevalenceScheme {
    /// Every study at 0.5.
    #[serde(rename = "const_50")]
    Const50,
    /// Every study at 0.25.
    #[serde(rename = "const_25")]
    Const25,
    /// Uniform on [0.3, 0.7].
    #[serde(rename = "unif_30_70")]
    Unif3070,
    /// Uniform on [0.1, 0.9].
    #[serde(rename = "unif_10_90")]
    Unif1090,
    /// Triangular on [0.1, 0.5] with mode 0.1.
    #[serde(rename = "tri_10_50")]
    Tri1050,
}

impl PrevalenceScheme {
    pub const ALL: [PrevalenceScheme; 5] = [
        Self::Const50,
        Self::Const25,
        Self::Unif3070,
        Self::Unif1090,
        Self::Tri1050,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Const50 => "const_50",
            Self::Const25 => "const_25",
            Self::Unif3070 => "unif_30_70",
            Self::Unif1090 => "unif_10_90",
            Self::Tri1050 => "tri_10_50",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.replace('-', "_"))
    }

    pub fn is_constant(self) -> bool {
        matches!(self, Self::Const50 | Self::Const25)
    }
}

/// What the subgroup-A interval is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaTarget {
    /// The method's own weighted average of the true marginal subgroup means.
    #[default]
    MethodWeighted,
    /// `phi + delta * mean prevalence` of the replicate.
    MeanPrevalence,
}

/// Estimators evaluated in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    DaCe,
    DaRe,
    AdCe,
    AdRe,
    Vhas,
    WithinTrial,
    PrevAdjusted,
    Centered,
    Swada(WeightScheme),
}

impl SimMethod {
    pub fn name(self) -> String {
        match self {
            Self::DaCe => "da_ce".into(),
            Self::DaRe => "da_re".into(),
            Self::AdCe => "ad_ce".into(),
            Self::AdRe => "ad_re".into(),
            Self::Vhas => "vhas".into(),
            Self::WithinTrial => "within_trial".into(),
            Self::PrevAdjusted => "prev_adjusted".into(),
            Self::Centered => "centered".into(),
            Self::Swada(s) => format!("swada_{}", s.name()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.replace('-', "_");
        Some(match s.as_str() {
            "da_ce" => Self::DaCe,
            "da_re" => Self::DaRe,
            "ad_ce" => Self::AdCe,
            "ad_re" => Self::AdRe,
            "vhas" => Self::Vhas,
            "within_trial" => Self::WithinTrial,
            "prev_adjusted" => Self::PrevAdjusted,
            "centered" => Self::Centered,
            other => Self::Swada(WeightScheme::parse(other.strip_prefix("swada_")?)?),
        })
    }

    /// Everything the runner knows how to evaluate.
    pub fn all() -> Vec<SimMethod> {
        let mut v = vec![
            Self::DaCe,
            Self::DaRe,
            Self::AdCe,
            Self::AdRe,
            Self::Vhas,
            Self::WithinTrial,
            Self::PrevAdjusted,
            Self::Centered,
        ];
        v.extend(WeightScheme::COMMON.iter().map(|&s| Self::Swada(s)));
        v
    }
}

fn default_reps() -> usize {
    1000
}
fn default_k() -> usize {
    20
}
fn default_uisd() -> f64 {
    4.0
}
fn default_size_mu() -> f64 {
    5.0
}
fn default_size_sigma() -> f64 {
    1.0
}
fn default_size_rho() -> f64 {
    0.75
}
fn default_phi() -> f64 {
    2.0
}
fn default_gamma_w() -> f64 {
    1.0
}
fn default_tau1() -> f64 {
    0.1
}
fn default_prevalence() -> PrevalenceScheme {
    PrevalenceScheme::Unif1090
}
fn default_seed() -> u64 {
    20_240_601
}

/// One simulation scenario. Effects are log odds ratios and `gamma_w` is
/// the within-study interaction `A - B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_prevalence")]
    pub prevalence_scheme: PrevalenceScheme,
    /// Between-study SD of the subgroup level.
    #[serde(default = "default_tau1")]
    pub tau1: f64,
    /// Between-study SD of the interaction; half of `tau1` when omitted.
    #[serde(default)]
    pub tau2: Option<f64>,
    /// Slope of the subgroup-A effect in study prevalence.
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Unit-information standard deviation: `se = uisd / sqrt(n)`.
    #[serde(default = "default_uisd")]
    pub uisd: f64,
    #[serde(default = "default_size_mu")]
    pub size_mu: f64,
    #[serde(default = "default_size_sigma")]
    pub size_sigma: f64,
    /// Correlation of log study sizes induced by a shared factor.
    #[serde(default = "default_size_rho")]
    pub size_rho: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default = "default_gamma_w")]
    pub gamma_w: f64,
    /// Adds the centered baseline and subgroup main-effect draws to both
    /// subgroup effects. They cancel from the contrasts.
    #[serde(default)]
    pub study_shifts: bool,
    #[serde(default)]
    pub beta_target: BetaTarget,
    /// Methods to evaluate; all of them when omitted.
    #[serde(default)]
    pub methods: Option<Vec<String>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ScenarioConfig {
    pub fn tau2(&self) -> f64 {
        self.tau2.unwrap_or(self.tau1 / 2.0)
    }

    pub fn methods(&self) -> Result<Vec<SimMethod>> {
        match &self.methods {
            None => Ok(SimMethod::all()),
            Some(names) => names
                .iter()
                .map(|n| {
                    SimMethod::parse(n)
                        .ok_or_else(|| Error::Config(format!("unknown method `{n}`")))
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k < 3 {
            problems.push(format!("k must be at least 3, got {}", self.k));
        }
        if self.reps == 0 {
            problems.push("reps must be positive".to_string());
        }
        for (name, v) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2()),
            ("size_sigma", self.size_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.uisd > 0.0 && self.uisd.is_finite()) {
            problems.push(format!("uisd must be positive, got {}", self.uisd));
        }
        if !(0.0..=1.0).contains(&self.size_rho) {
            problems.push(format!(
                "size_rho must lie in [0, 1], got {}",
                self.size_rho
            ));
        }
        for (name, v) in [
            ("delta", self.delta),
            ("phi", self.phi),
            ("gamma_w", self.gamma_w),
            ("size_mu", self.size_mu),
        ] {
            if !v.is_finite() {
                problems.push(format!("{name} must be finite"));
            }
        }
        if let Err(e) = self.methods() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn label(&self) -> String {
        format!(
            "k{}_{}_tau{}_delta{}",
            self.k,
            self.prevalence_scheme.name(),
            self.tau1,
            self.delta
        )
    }
}

/// Axes of a scenario grid. Empty axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub prevalence_scheme: Vec<PrevalenceScheme>,
    #[serde(default)]
    pub tau1: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
}

/// A base scenario optionally crossed with grid axes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub base: ScenarioConfig,
    #[serde(default)]
    pub grid: GridAxes,
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Cartesian product of the axes, in `k`, prevalence, `tau1`, `delta` order.
    pub fn expand(&self) -> Vec<ScenarioConfig> {
        fn axis<T: Clone>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let b = &self.base;
        let mut out = Vec::new();
        for k in axis(&self.grid.k, b.k) {
            for p in axis(&self.grid.prevalence_scheme, b.prevalence_scheme) {
                for t in axis(&self.grid.tau1, b.tau1) {
                    for d in axis(&self.grid.delta, b.delta) {
                        out.push(ScenarioConfig {
                            k,
                            prevalence_scheme: p,
                            tau1: t,
                            delta: d,
                            ..b.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_tau2_rule() {
        let c = ScenarioConfig::default();
        assert_eq!(c.reps, 1000);
        assert_eq!(c.uisd, 4.0);
        assert_eq!(c.tau2(), 0.05);
        assert_eq!(c.gamma_w, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn grid_expands_in_order() {
        let cfg = SimulationConfig::from_json(
            r#"{"base": {"reps": 10}, "grid": {"k": [10, 20], "prevalence_scheme": ["const_50", "tri_10_50"], "delta": [0, 3]}}"#,
        )
        .unwrap();
        let s = cfg.expand();
        assert_eq!(s.len(), 8);
        assert_eq!(
            (s[0].k, s[0].prevalence_scheme, s[0].delta),
            (10, PrevalenceScheme::Const50, 0.0)
        );
        assert_eq!(
            (s[7].k, s[7].prevalence_scheme, s[7].delta),
            (20, PrevalenceScheme::Tri1050, 3.0)
        );
        assert!(s.iter().all(|c| c.reps == 10));
    }

    #[test]
    fn rejects_bad_values() {
        let c = ScenarioConfig {
            k: 2,
            uisd: 0.0,
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("k must be") && msg.contains("uisd"));
        assert!(SimulationConfig::from_json(r#"{"base": {"bogus": 1}}"#).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in SimMethod::all() {
            assert_eq!(SimMethod::parse(&m.name()), Some(m));
        }
        assert_eq!(SimMethod::parse("nope"), None);
    }
}
