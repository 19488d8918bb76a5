//! Generalized least squares over per-study blocks of one or two correlated
//! observations, with between-study covariance parameters profiled by
//! (restricted) maximum likelihood.
//!
//! Each block holds the observed arms of one study. Its marginal covariance
//! is `S_j + Sigma_j(theta)` restricted to those arms, where `S_j` is the
//! diagonal sampling covariance. Fixed effects are concentrated out, so the
//! optimizer only sees `theta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::optimize::{bfgs, BfgsOptions};
use crate::scalar::Scalar;

/// Parameterization of the between-study covariance of `(A, B)` effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaStructure {
    /// Unstructured: `tau_a^2`, `tau_b^2` and correlation `rho`.
    #[default]
    Full,
    /// Shared level variance plus an interaction variance split by prevalence.
    Tau1Tau2,
    /// No between-study variation.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Ml,
    #[default]
    Reml,
}

/// Largest correlation magnitude allowed by the `Full` structure.
pub const RHO_BOUND: f64 = 0.999;

#[derive(Debug, Clone)]
pub(crate) struct Obs<T> {
    /// 0 for subgroup A, 1 for subgroup B.
    pub arm: usize,
    pub y: T,
    pub s2: T,
    pub x: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Block<T> {
    pub obs: Vec<Obs<T>>,
    /// Prevalence used by the `Tau1Tau2` structure.
    pub p: T,
}

#[derive(Debug, Clone)]
pub(crate) struct Problem<T> {
    pub blocks: Vec<Block<T>>,
    pub n_beta: usize,
    pub structure: SigmaStructure,
    pub likelihood: Likelihood,
}

#[derive(Debug, Clone)]
pub(crate) struct Fit<T> {
    pub beta: Vec<T>,
    pub vcov: Mat<T>,
    pub theta: Vec<T>,
    pub loglik: T,
    pub converged: bool,
    pub grad_max_norm: T,
    /// Per block, the `n_beta x n_j` map from that block's observations to `beta`.
    pub hat: Vec<Mat<T>>,
}

/// Between-study covariance of `(A, B)` and its partial derivatives.
pub(crate) fn sigma<T: Scalar>(
    structure: SigmaStructure,
    theta: &[T],
    p: T,
) -> (Mat<T>, Vec<Mat<T>>) {
    let two = T::lit(2.0);
    match structure {
        SigmaStructure::Zero => (Mat::zeros(2, 2), vec![]),
        SigmaStructure::Full => {
            let (a, b, c) = (theta[0], theta[1], theta[2]);
            let bound = T::lit(RHO_BOUND);
            let th = c.tanh();
            let rho = bound * th;
            let drho = bound * (T::one() - th * th);
            let s = Mat::from_rows(&[vec![a * a, rho * a * b], vec![rho * a * b, b * b]]);
            let da = Mat::from_rows(&[vec![two * a, rho * b], vec![rho * b, T::zero()]]);
            let db = Mat::from_rows(&[vec![T::zero(), rho * a], vec![rho * a, two * b]]);
            let dc =
                Mat::from_rows(&[vec![T::zero(), drho * a * b], vec![drho * a * b, T::zero()]]);
            (s, vec![da, db, dc])
        }
        SigmaStructure::Tau1Tau2 => {
            let (t1, t2) = (theta[0], theta[1]);
            let j = Mat::from_rows(&[vec![T::one(), T::one()], vec![T::one(), T::one()]]);
            let q = T::one() - p;
            let pm = Mat::from_rows(&[vec![p * p, -p * q], vec![-p * q, q * q]]);
            let s = j.scale(t1 * t1).add(&pm.scale(t2 * t2));
            (s, vec![j.scale(two * t1), pm.scale(two * t2)])
        }
    }
}

struct BlockWork<T> {
    vinv: Mat<T>,
    x: Mat<T>,
    y: Vec<T>,
    dv: Vec<Mat<T>>,
}

impl<T: Scalar> Problem<T> {
    fn prepare(&self, theta: &[T]) -> Result<(Vec<BlockWork<T>>, T)> {
        let mut work = Vec::with_capacity(self.blocks.len());
        let mut logdet = T::zero();
        for b in &self.blocks {
            let (s, ds) = sigma(self.structure, theta, b.p);
            let n = b.obs.len();
            let mut v = Mat::zeros(n, n);
            let mut dv = vec![Mat::zeros(n, n); ds.len()];
            for (i, oi) in b.obs.iter().enumerate() {
                for (j, oj) in b.obs.iter().enumerate() {
                    v[(i, j)] = s[(oi.arm, oj.arm)];
                    for (k, d) in ds.iter().enumerate() {
                        dv[k][(i, j)] = d[(oi.arm, oj.arm)];
                    }
                }
                v[(i, i)] += oi.s2;
            }
            let (vinv, ld) = v.spd_inverse_logdet()?;
            logdet += ld;
            let x = Mat::from_rows(&b.obs.iter().map(|o| o.x.clone()).collect::<Vec<_>>());
            let y = b.obs.iter().map(|o| o.y).collect();
            work.push(BlockWork { vinv, x, y, dv });
        }
        Ok((work, logdet))
    }

    /// Profile log-likelihood, its gradient in `theta`, and the GLS solution.
    fn evaluate(&self, theta: &[T], want_fit: bool) -> Result<(T, Vec<T>, Option<Fit<T>>)> {
        let half = T::lit(0.5);
        let (work, logdet) = self.prepare(theta)?;
        let p = self.n_beta;
        let mut a = Mat::zeros(p, p);
        let mut rhs = vec![T::zero(); p];
        let mut xtv = Vec::with_capacity(work.len());
        for w in &work {
            let xt_vinv = w.x.transpose().matmul(&w.vinv);
            a = a.add(&xt_vinv.matmul(&w.x));
            for (r, v) in rhs.iter_mut().zip(xt_vinv.matvec(&w.y)) {
                *r += v;
            }
            xtv.push(xt_vinv);
        }
        let (ainv, logdet_a) = a.spd_inverse_logdet().map_err(|_| {
            Error::Singular("fixed effects are not identified by the included studies".into())
        })?;
        let beta = ainv.matvec(&rhs);
        let mut quad = T::zero();
        let nt = theta.len();
        let mut grad = vec![T::zero(); nt];
        for w in &work {
            let fitted = w.x.matvec(&beta);
            let r: Vec<T> = w.y.iter().zip(&fitted).map(|(&y, &f)| y - f).collect();
            let vr = w.vinv.matvec(&r);
            quad += r.iter().zip(&vr).fold(T::zero(), |s, (&a, &b)| s + a * b);
            for (g, dv) in grad.iter_mut().zip(&w.dv) {
                let vdv = w.vinv.matmul(dv);
                *g += -half * vdv.trace() + half * dv.quad_form(&vr);
                if self.likelihood == Likelihood::Reml {
                    // d log|A| = -tr(A^-1 X' V^-1 dV V^-1 X)
                    let m = w.x.transpose().matmul(&vdv).matmul(&w.vinv).matmul(&w.x);
                    *g += half * ainv.matmul(&m).trace();
                }
            }
        }
        let mut ll = -half * logdet - half * quad;
        if self.likelihood == Likelihood::Reml {
            ll -= half * logdet_a;
        }
        let fit = want_fit.then(|| {
            let hat = xtv.iter().map(|m| ainv.matmul(m)).collect();
            Fit {
                beta,
                vcov: ainv,
                theta: theta.to_vec(),
                loglik: ll,
                converged: true,
                grad_max_norm: T::zero(),
                hat,
            }
        });
        Ok((ll, grad, fit))
    }

    pub fn loglik(&self, theta: &[T]) -> Result<T> {
        Ok(self.evaluate(theta, false)?.0)
    }

    pub fn loglik_grad(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        let (l, g, _) = self.evaluate(theta, false)?;
        Ok((l, g))
    }

    pub fn fit_at(&self, theta: &[T]) -> Result<Fit<T>> {
        Ok(self.evaluate(theta, true)?.2.expect("fit requested"))
    }

    /// Maximizes the profile likelihood from each start and keeps the best.
    pub fn fit(&self, starts: &[Vec<T>]) -> Result<Fit<T>> {
        if self.structure == SigmaStructure::Zero {
            return self.fit_at(&[]);
        }
        let objective = |th: &[T]| match self.loglik_grad(th) {
            Ok((l, g)) => (-l, g.into_iter().map(|v| -v).collect()),
            Err(_) => (T::infinity(), vec![T::zero(); th.len()]),
        };
        let mut best: Option<(T, Vec<T>, bool, T)> = None;
        for s in starts {
            let out = bfgs(objective, s, BfgsOptions::default());
            if !out.value.is_finite() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((v, _, conv, _)) => {
                    (out.converged && !conv) || (out.converged == *conv && out.value < *v)
                }
            };
            if better {
                best = Some((out.value, out.x, out.converged, out.grad_max_norm));
            }
        }
        let (_, theta, converged, gnorm) =
            best.ok_or_else(|| Error::NonConvergence("likelihood not finite at any start".into()))?;
        let mut fit = self.fit_at(&theta)?;
        fit.converged = converged;
        fit.grad_max_norm = gnorm;
        Ok(fit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(structure: SigmaStructure, likelihood: Likelihood) -> Problem<f64> {
        let data = [
            (0.1, 0.5, 0.3, 0.2, 0.4),
            (0.9, 0.2, -0.4, 0.3, 0.2),
            (0.4, 0.4, 0.0, 0.25, 0.5),
            (-0.2, 0.3, -0.6, 0.5, 0.3),
        ];
        let blocks = data
            .iter()
            .map(|&(ya, va, yb, vb, p)| Block {
                obs: vec![
                    Obs {
                        arm: 0,
                        y: ya,
                        s2: va,
                        x: vec![1.0, 0.0],
                    },
                    Obs {
                        arm: 1,
                        y: yb,
                        s2: vb,
                        x: vec![1.0, -1.0],
                    },
                ],
                p,
            })
            .collect();
        Problem {
            blocks,
            n_beta: 2,
            structure,
            likelihood,
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for (structure, theta) in [
            (SigmaStructure::Full, vec![0.4, 0.6, 0.3]),
            (SigmaStructure::Tau1Tau2, vec![0.5, 0.7]),
        ] {
            for lik in [Likelihood::Ml, Likelihood::Reml] {
                let pr = toy(structure, lik);
                let (_, g) = pr.loglik_grad(&theta).unwrap();
                for k in 0..theta.len() {
                    let h = 1e-5;
                    let mut up = theta.clone();
                    let mut dn = theta.clone();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (pr.loglik(&up).unwrap() - pr.loglik(&dn).unwrap()) / (2.0 * h);
                    assert!(
                        (fd - g[k]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                        "{structure:?} {lik:?} k={k}: {fd} vs {}",
                        g[k]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_structure_is_plain_gls() {
        let pr = toy(SigmaStructure::Zero, Likelihood::Ml);
        let fit = pr.fit(&[]).unwrap();
        // hat rows applied to the data reproduce beta
        let mut b = [0.0; 2];
        for (blk, h) in pr.blocks.iter().zip(&fit.hat) {
            let y: Vec<f64> = blk.obs.iter().map(|o| o.y).collect();
            let c = h.matvec(&y);
            b[0] += c[0];
            b[1] += c[1];
        }
        assert!((b[0] - fit.beta[0]).abs() < 1e-12 && (b[1] - fit.beta[1]).abs() < 1e-12);
    }
}
