use num_traits::Float;

use super::{adaptive, adaptive_graded, AdaptiveOptions, Estimate, QuadValue, Wynn};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct TailOptions<T> {
    pub tol: T,
    pub min_panels: usize,
    pub max_panels: usize,
}

impl<T: Real> TailOptions<T> {
    pub fn new(tol: T) -> Self {
        TailOptions {
            tol,
            min_panels: 6,
            max_panels: 4000,
        }
    }
}

/// Integral of `(x - a)^gamma * g(x)` over [a, b] for gamma > -1.
///
/// For gamma < 0 the substitution u = (x - a)^(gamma + 1) makes the integrand
/// bounded.
pub fn power_start<T, V, G>(g: &G, a: T, b: T, gamma: T, tol: T) -> Estimate<V, T>
where
    T: Real,
    V: QuadValue<T>,
    G: Fn(T) -> V,
{
    let opts = AdaptiveOptions::abs(tol);
    if gamma < T::zero() {
        let kappa = T::one() / (gamma + T::one());
        let upper = (b - a).powf(gamma + T::one());
        let f = |u: T| g(a + u.powf(kappa)) * kappa;
        adaptive(&f, T::zero(), upper, opts)
    } else if gamma == T::zero() {
        adaptive(g, a, b, opts)
    } else {
        let f = |x: T| g(x) * (x - a).powf(gamma);
        adaptive(&f, a, b, opts)
    }
}

/// Integral of `f` over [start, inf) for an integrand decaying like
/// x^(-q) with q > 1 (or faster), using x = start + scale (s^(-p) - 1),
/// p = 1/(q - 1), which maps the tail to a bounded integrand on (0, 1].
pub fn algebraic_tail<T, V, F>(f: &F, start: T, scale: T, q: T, tol: T) -> Estimate<V, T>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    let p = T::one() / (q - T::one());
    let g = |s: T| {
        let sp = s.powf(-p);
        let x = start + scale * (sp - T::one());
        let jac = p * scale * sp / s;
        if !Float::is_finite(x) || !Float::is_finite(jac) {
            return V::zero();
        }
        f(x) * jac
    };
    adaptive(&g, T::zero(), T::one(), AdaptiveOptions::abs(tol))
}

/// Integral of an oscillatory `f` over [start, inf) by summing panels of
/// width `half_period` and extrapolating the partial sums with Wynn epsilon.
///
/// Terminates early when panel contributions fall below the tolerance
/// without extrapolation.
pub fn oscillatory_tail<T, V, F>(f: &F, start: T, half_period: T, opts: TailOptions<T>) -> Estimate<V, T>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    let panel_tol = opts.tol * T::lit(1e-2);
    let mut wynn = Wynn::<V, T>::new();
    let mut sum = V::zero();
    let mut panel_err = T::zero();
    let mut evals = 0;
    let mut small_run = 0usize;
    let mut ok = true;
    for k in 0..opts.max_panels {
        let a = start + half_period * T::lit(k as f64);
        let b = a + half_period;
        let e = adaptive_graded(f, a, b, AdaptiveOptions::abs(panel_tol));
        ok &= e.converged;
        evals += e.evals;
        panel_err = panel_err + e.abs_err;
        sum = sum + e.value;
        let extrap = wynn.push(sum);
        if !ok {
            break;
        }
        if e.value.norm() < opts.tol * T::lit(1e-3) {
            small_run += 1;
        } else {
            small_run = 0;
        }
        if k + 1 >= opts.min_panels {
            if small_run >= 3 {
                return Estimate {
                    value: sum,
                    abs_err: panel_err + e.value.norm(),
                    evals,
                    converged: true,
                };
            }
            let werr = wynn.error();
            if werr < opts.tol * T::lit(0.25) {
                return Estimate {
                    value: extrap,
                    abs_err: panel_err + werr,
                    evals,
                    converged: true,
                };
            }
        }
    }
    Estimate {
        value: wynn.estimate().unwrap_or(sum),
        abs_err: panel_err + wynn.error(),
        evals,
        converged: false,
    }
}
