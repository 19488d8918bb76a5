//! Between-study variance estimation and univariate inverse-variance pooling.
//!
//! Entries with infinite variance are carried along so that weight vectors
//! stay aligned with the dataset, but they receive exactly zero weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::brent_min;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateSample<T> {
    pub effects: Vec<T>,
    pub variances: Vec<T>,
}

impl<T: Scalar> UnivariateSample<T> {
    pub fn new(effects: Vec<T>, variances: Vec<T>) -> Result<Self> {
        if effects.len() != variances.len() {
            return Err(Error::Dimension(format!(
                "{} effects but {} variances",
                effects.len(),
                variances.len()
            )));
        }
        Ok(Self { effects, variances })
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    /// Indices of entries with finite variance.
    pub fn usable(&self) -> impl Iterator<Item = usize> + '_ {
        self.variances
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, _)| i)
    }

    pub fn usable_count(&self) -> usize {
        self.usable().count()
    }

    fn usable_pairs(&self) -> (Vec<T>, Vec<T>) {
        self.usable()
            .map(|i| (self.effects[i], self.variances[i]))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMethod {
    DersimonianLaird,
    #[default]
    Reml,
    FixedZero,
}

impl TauMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::DersimonianLaird => "dl",
            Self::Reml => "reml",
            Self::FixedZero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate<T> {
    pub tau2: T,
    pub method: TauMethod,
}

/// Common-effect or random-effects variance model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    CommonEffect,
    #[default]
    RandomEffects,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Self::CommonEffect => "ce",
            Self::RandomEffects => "re",
        }
    }
}

/// How a univariate pool obtains its heterogeneity variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Pooling {
    pub model: Model,
    pub tau: TauMethod,
}

impl Pooling {
    pub const CE: Pooling = Pooling {
        model: Model::CommonEffect,
        tau: TauMethod::FixedZero,
    };
    pub const RE: Pooling = Pooling {
        model: Model::RandomEffects,
        tau: TauMethod::Reml,
    };

    pub fn new(model: Model, tau: TauMethod) -> Self {
        Self { model, tau }
    }

    /// Heterogeneity variance for `sample` under this configuration. Under
    /// random effects with fewer than two usable entries there is no
    /// information about heterogeneity and zero is returned.
    pub fn tau2<T: Scalar>(&self, sample: &UnivariateSample<T>) -> Result<T> {
        match (self.model, self.tau) {
            (Model::CommonEffect, _) | (_, TauMethod::FixedZero) => Ok(T::zero()),
            _ if sample.usable_count() < 2 => Ok(T::zero()),
            (_, TauMethod::DersimonianLaird) => Ok(tau_dl(sample)?.tau2),
            (_, TauMethod::Reml) => Ok(tau_reml(sample)?.tau2),
        }
    }

    pub fn label(&self) -> String {
        match self.model {
            Model::CommonEffect => "ce".into(),
            Model::RandomEffects => format!("re-{}", self.tau.name()),
        }
    }
}

fn require_two<T: Scalar>(sample: &UnivariateSample<T>) -> Result<()> {
    let found = sample.usable_count();
    if found < 2 {
        Err(Error::InsufficientStudies { needed: 2, found })
    } else {
        Ok(())
    }
}

/// DerSimonian-Laird moment estimator, truncated at zero.
pub fn tau_dl<T: Scalar>(sample: &UnivariateSample<T>) -> Result<TauEstimate<T>> {
    require_two(sample)?;
    let (y, v) = sample.usable_pairs();
    let w: Vec<T> = v.iter().map(|&v| T::one() / v).collect();
    let sw: T = w.iter().copied().sum();
    let sw2: T = w.iter().map(|&w| w * w).sum();
    let mu = w.iter().zip(&y).map(|(&w, &y)| w * y).sum::<T>() / sw;
    let q: T = w
        .iter()
        .zip(&y)
        .map(|(&w, &y)| w * (y - mu) * (y - mu))
        .sum();
    let c = sw - sw2 / sw;
    let df = T::lit((y.len() - 1) as f64);
    let tau2 = if c > T::zero() {
        ((q - df) / c).max(T::zero())
    } else {
        T::zero()
    };
    Ok(TauEstimate {
        tau2,
        method: TauMethod::DersimonianLaird,
    })
}

/// Restricted log-likelihood of the random-effects model at `tau2`, up to a constant.
pub fn reml_loglik<T: Scalar>(y: &[T], v: &[T], tau2: T) -> T {
    let half = T::lit(0.5);
    let w: Vec<T> = v.iter().map(|&v| T::one() / (v + tau2)).collect();
    let sw: T = w.iter().copied().sum();
    let mu = w.iter().zip(y).map(|(&w, &y)| w * y).sum::<T>() / sw;
    let logdet: T = v.iter().map(|&v| (v + tau2).ln()).sum();
    let rss: T = w
        .iter()
        .zip(y)
        .map(|(&w, &y)| w * (y - mu) * (y - mu))
        .sum();
    -half * logdet - half * sw.ln() - half * rss
}

/// Derivative of [`reml_loglik`] with respect to `tau2`.
pub fn reml_score<T: Scalar>(y: &[T], v: &[T], tau2: T) -> T {
    let half = T::lit(0.5);
    let w: Vec<T> = v.iter().map(|&v| T::one() / (v + tau2)).collect();
    let sw: T = w.iter().copied().sum();
    let sw2: T = w.iter().map(|&w| w * w).sum();
    let mu = w.iter().zip(y).map(|(&w, &y)| w * y).sum::<T>() / sw;
    let r2: T = w
        .iter()
        .zip(y)
        .map(|(&w, &y)| w * w * (y - mu) * (y - mu))
        .sum();
    half * (sw2 / sw - sw + r2)
}

/// Bisection on the score over a bracket where it changes sign from
/// positive to negative. Returns `None` when `[lo, hi]` is no such bracket.
fn score_root<T: Scalar>(score: impl Fn(T) -> T, mut lo: T, mut hi: T) -> Option<T> {
    if !(score(lo) > T::zero() && score(hi) < T::zero()) {
        return None;
    }
    for _ in 0..200 {
        let mid = T::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if score(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(T::lit(0.5) * (lo + hi))
}

/// REML estimate by a coarse grid over `[0, 10 * var(y)]` followed by
/// bounded Brent refinement around the best grid cell.
pub fn tau_reml<T: Scalar>(sample: &UnivariateSample<T>) -> Result<TauEstimate<T>> {
    require_two(sample)?;
    let (y, v) = sample.usable_pairs();
    let m = T::lit(y.len() as f64);
    let mean = y.iter().copied().sum::<T>() / m;
    let var = y.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>() / (m - T::one());
    let done = |tau2| {
        Ok(TauEstimate {
            tau2,
            method: TauMethod::Reml,
        })
    };
    if !(var > T::zero()) {
        return done(T::zero());
    }
    let upper = T::lit(10.0) * var;
    let ll = |t: T| reml_loglik(&y, &v, t);
    const CELLS: usize = 200;
    let step = upper / T::lit(CELLS as f64);
    let (best, _) = (0..=CELLS).map(|i| (i, ll(step * T::lit(i as f64)))).fold(
        (0, T::neg_infinity()),
        |acc, (i, l)| if l > acc.1 { (i, l) } else { acc },
    );
    let lo = step * T::lit(best.saturating_sub(1) as f64);
    let hi = step * T::lit((best + 1).min(CELLS) as f64);
    let tol = T::lit(1e-10).max(upper * T::epsilon() * T::lit(16.0));
    let (t, lt) = brent_min(|t| -ll(t), lo, hi, tol);
    // A maximum at the boundary is returned as an exact zero. Brent on
    // function values alone pins an interior maximizer only to about
    // sqrt(eps), so a bracketed score root replaces it when available.
    let tau2 = if lo == T::zero() && ll(T::zero()) >= -lt {
        T::zero()
    } else {
        score_root(|t| reml_score(&y, &v, t), lo, hi)
            .unwrap_or(t)
            .max(T::zero())
    };
    done(tau2)
}

/// Estimates `tau2` with the named method; `FixedZero` always gives zero.
pub fn estimate_tau<T: Scalar>(
    sample: &UnivariateSample<T>,
    method: TauMethod,
) -> Result<TauEstimate<T>> {
    match method {
        TauMethod::DersimonianLaird => tau_dl(sample),
        TauMethod::Reml => tau_reml(sample),
        TauMethod::FixedZero => Ok(TauEstimate {
            tau2: T::zero(),
            method,
        }),
    }
}

/// Normalized weights proportional to `1 / (v + tau2)`, zero where `v` is infinite.
pub fn inverse_variance_weights<T: Scalar>(variances: &[T], tau2: T) -> Result<Vec<T>> {
    let raw: Vec<T> = variances
        .iter()
        .map(|&v| {
            if v.is_finite() {
                T::one() / (v + tau2)
            } else {
                T::zero()
            }
        })
        .collect();
    let total: T = raw.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::InsufficientStudies {
            needed: 1,
            found: 0,
        });
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<T> {
    pub point: T,
    pub std_err: T,
    pub weights_used: Vec<T>,
}

/// `sum w y` and `sqrt(sum w^2 (v + tau2))`, skipping zero-weight entries so
/// that absent estimates never touch the arithmetic.
pub fn weighted_pool<T: Scalar>(
    effects: &[T],
    variances: &[T],
    tau2: T,
    weights: &[T],
) -> Result<(T, T)> {
    if effects.len() != weights.len() || variances.len() != weights.len() {
        return Err(Error::Dimension(
            "weights, effects and variances must align".into(),
        ));
    }
    let mut point = T::zero();
    let mut var = T::zero();
    for (i, &w) in weights.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        if !variances[i].is_finite() {
            return Err(Error::WeightOnAbsent(i));
        }
        point += w * effects[i];
        var += w * w * (variances[i] + tau2);
    }
    Ok((point, var.sqrt()))
}

/// Pools `sample` with inverse-variance weights, or with supplied weights.
pub fn pool_univariate<T: Scalar>(
    sample: &UnivariateSample<T>,
    tau2: T,
    weights: Option<&[T]>,
) -> Result<Pooled<T>> {
    let w = match weights {
        Some(w) => {
            if w.len() != sample.len() {
                return Err(Error::Dimension(format!(
                    "{} weights for {} entries",
                    w.len(),
                    sample.len()
                )));
            }
            if w.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
                return Err(Error::InvalidWeights(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            let total: T = w.iter().copied().sum();
            let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0 * w.len() as f64));
            if (total - T::one()).abs() > tol {
                return Err(Error::InvalidWeights(format!(
                    "weights sum to {total}, not 1"
                )));
            }
            w.to_vec()
        }
        None => inverse_variance_weights(&sample.variances, tau2)?,
    };
    let (point, std_err) = weighted_pool(&sample.effects, &sample.variances, tau2, &w)?;
    Ok(Pooled {
        point,
        std_err,
        weights_used: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(y: &[f64], v: &[f64]) -> UnivariateSample<f64> {
        UnivariateSample::new(y.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn score_matches_finite_difference() {
        let (y, v): ([f64; 4], [f64; 4]) = ([0.1, 0.9, -0.4, 1.3], [0.2, 0.05, 0.3, 0.1]);
        for t in [0.0, 0.07, 0.5] {
            let h = 1e-6;
            let fd = (reml_loglik(&y, &v, t + h) - reml_loglik(&y, &v, t - h)) / (2.0 * h);
            assert!((reml_score(&y, &v, t) - fd).abs() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn reml_estimate_zeroes_the_score() {
        let s = sample(&[0.1, 0.9, -0.4, 1.3], &[0.2, 0.05, 0.3, 0.1]);
        let t = tau_reml(&s).unwrap().tau2;
        assert!(t > 0.0);
        assert!(reml_score(&s.effects, &s.variances, t).abs() < 1e-12);
    }

    #[test]
    fn dl_hand_example() {
        let t = tau_dl(&sample(&[0.0, 2.0], &[1.0, 1.0])).unwrap();
        assert!((t.tau2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dl_ignores_infinite_entry() {
        let t = tau_dl(&sample(&[0.0, 2.0, 7.0], &[1.0, 1.0, f64::INFINITY])).unwrap();
        assert!((t.tau2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_effects_give_zero_tau() {
        let s = sample(&[0.4, 0.4, 0.4], &[1.0, 2.0, 0.5]);
        assert_eq!(tau_dl(&s).unwrap().tau2, 0.0);
        assert_eq!(tau_reml(&s).unwrap().tau2, 0.0);
    }

    #[test]
    fn too_few_entries_error() {
        let s = sample(&[0.4, 1.0], &[1.0, f64::INFINITY]);
        assert_eq!(
            tau_dl(&s),
            Err(Error::InsufficientStudies {
                needed: 2,
                found: 1
            })
        );
        assert!(tau_reml(&s).is_err());
        assert_eq!(Pooling::RE.tau2(&s).unwrap(), 0.0);
    }

    #[test]
    fn reml_two_study_closed_form() {
        // l(t) = -ln(1+t)/2 - 1/(1+t) is maximized at t = 1
        let t = tau_reml(&sample(&[0.0, 2.0], &[1.0, 1.0])).unwrap();
        assert!((t.tau2 - 1.0).abs() < 1e-7, "{}", t.tau2);
    }

    #[test]
    fn pool_hand_examples() {
        let p = pool_univariate(&sample(&[0.0, 2.0], &[1.0, 1.0]), 0.0, None).unwrap();
        assert!((p.point - 1.0).abs() < 1e-15);
        assert!((p.std_err - 0.5f64.sqrt()).abs() < 1e-15);

        let w = [0.5, 0.5];
        let p = pool_univariate(&sample(&[0.0, 2.0], &[1.0, 4.0]), 0.0, Some(&w)).unwrap();
        assert!((p.point - 1.0).abs() < 1e-15);
        assert!((p.std_err - 5f64.sqrt() / 2.0).abs() < 1e-15);

        let p = pool_univariate(&sample(&[0.7], &[0.3]), 0.2, None).unwrap();
        assert_eq!(p.point, 0.7);
        assert!((p.std_err - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weight_on_infinite_variance_is_rejected() {
        let w = [0.5, 0.5];
        let e = pool_univariate(&sample(&[0.0, 2.0], &[1.0, f64::INFINITY]), 0.0, Some(&w));
        assert_eq!(e, Err(Error::WeightOnAbsent(1)));
    }

    #[test]
    fn unnormalized_weights_are_rejected() {
        let w = [0.5, 0.6];
        assert!(matches!(
            pool_univariate(&sample(&[0.0, 2.0], &[1.0, 1.0]), 0.0, Some(&w)),
            Err(Error::InvalidWeights(_))
        ));
    }

    #[test]
    fn single_precision_pool() {
        let s = UnivariateSample::new(vec![0.0f32, 2.0], vec![1.0, 1.0]).unwrap();
        let p = pool_univariate(&s, 0.0, None).unwrap();
        assert!((p.point - 1.0).abs() < 1e-6);
        let t = tau_reml(&s).unwrap();
        // a flat optimum limits single precision to about sqrt(eps) in tau2
        assert!((t.tau2 - 1.0).abs() < 1e-2, "{}", t.tau2);
    }
}
