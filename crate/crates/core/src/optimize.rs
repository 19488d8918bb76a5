//! Derivative-free bounded 1-D minimization and a BFGS quasi-Newton solver.

use crate::scalar::Scalar;

/// Brent's bounded minimizer of `f` on `[a, b]` (golden section with
/// parabolic steps). Stops when the bracket is narrower than `2 * tol`.
pub fn brent_min<T: Scalar>(f: impl Fn(T) -> T, a: T, b: T, tol: T) -> (T, T) {
    let golden = T::lit(0.381_966_011_250_105_1);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let eps = T::epsilon().sqrt();
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d = T::zero();
    let mut e = T::zero();
    for _ in 0..500 {
        let xm = half * (a + b);
        let tol1 = eps * x.abs() + tol / T::lit(3.0);
        let tol2 = two * tol1;
        if (x - xm).abs() <= tol2 - half * (b - a) {
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (half * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_max_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<T> {
    pub max_iter: usize,
    pub grad_tol: T,
}

impl<T: Scalar> Default for BfgsOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: T::lit(1e-6),
        }
    }
}

/// Consecutive iterations without meaningful decrease before giving up.
pub const STALL_ITERATIONS: usize = 10;

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Minimizes `fg`, which returns the objective and its gradient. Uses a
/// backtracking Armijo line search and skips curvature-violating updates.
pub fn bfgs<T: Scalar>(
    fg: impl Fn(&[T]) -> (T, Vec<T>),
    x0: &[T],
    opts: BfgsOptions<T>,
) -> BfgsOutcome<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut h = vec![vec![T::zero(); n]; n];
    let reset = |h: &mut Vec<Vec<T>>| {
        for (i, row) in h.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { T::one() } else { T::zero() };
            }
        }
    };
    reset(&mut h);
    let mut iterations = 0;
    let mut flat = 0;
    // at single precision the achievable gradient norm is bounded by rounding
    let tol = opts.grad_tol.max(T::epsilon().sqrt() * T::lit(10.0));
    while iterations < opts.max_iter {
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if max_abs(&g) < tol {
            return BfgsOutcome {
                grad_max_norm: max_abs(&g),
                x,
                value: f,
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let mut p: Vec<T> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&p, &g);
        if !(slope < T::zero()) {
            reset(&mut h);
            p = g.iter().map(|&v| -v).collect();
            slope = dot(&p, &g);
        }
        let mut step = T::one();
        let c1 = T::lit(1e-4);
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<T> = x.iter().zip(&p).map(|(&a, &b)| a + step * b).collect();
            let (fnew, gnew) = fg(&xn);
            if fnew.is_finite() && fnew <= f + c1 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // the line search failed along a quasi-Newton direction; retry steepest descent once
            if h.iter().enumerate().any(|(i, r)| {
                r.iter()
                    .enumerate()
                    .any(|(j, &v)| v != if i == j { T::one() } else { T::zero() })
            }) {
                reset(&mut h);
                continue;
            }
            break;
        };
        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gnew.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            let rho = T::one() / sy;
            let hy: Vec<T> = (0..n).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (T::one() + rho * yhy) * rho * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        // progress below rounding level: the gradient cannot shrink further
        if f - fnew <= T::lit(16.0) * T::epsilon() * f.abs().max(T::one()) {
            flat += 1;
        } else {
            flat = 0;
        }
        x = xn;
        f = fnew;
        g = gnew;
        if flat >= STALL_ITERATIONS {
            break;
        }
    }
    let gn = max_abs(&g);
    BfgsOutcome {
        converged: gn < tol,
        grad_max_norm: gn,
        x,
        value: f,
        iterations,
    }
}
