//! Lorentzian density with a power-law threshold factor,
//! `w (E - a)^gamma / ((E - M)^2 + Gamma^2/4)` for E > a.
//!
//! Every spectral model is a sum of such terms. This module owns the
//! integrals over a single term: its mass, its Fourier transform by direct
//! oscillatory quadrature or by contour rotation, its boundary-value
//! Stieltjes transform, and the truncated resolvent used by the
//! multichannel double integral.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::quad::{
    adaptive, adaptive_graded, algebraic_tail, oscillatory_tail, power_start, AdaptiveOptions, Estimate, TailOptions,
};
use crate::scalar::Real;

type C<T> = Complex<T>;

#[inline]
pub(crate) fn cis<T: Real>(phi: T) -> C<T> {
    Complex::new(phi.cos(), phi.sin())
}

/// exp(z) - 1 without cancellation for small |z|.
pub(crate) fn cexpm1<T: Real>(z: C<T>) -> C<T> {
    let (x, y) = (z.re, z.im);
    let s = (y * T::lit(0.5)).sin();
    Complex::new(x.exp_m1() * y.cos() - T::lit(2.0) * s * s, x.exp() * y.sin())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lower<T> {
    At(T),
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdTerm<T> {
    pub weight: T,
    pub lower: Lower<T>,
    pub gamma: T,
    pub mass: T,
    pub width: T,
}

/// Which transform to evaluate: the amplitude itself or its time derivative
/// (integrand multiplied by -iE).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moment {
    Amplitude,
    Derivative,
}

impl<T: Real> ThresholdTerm<T> {
    pub fn finite(weight: T, threshold: T, gamma: T, mass: T, width: T) -> Self {
        ThresholdTerm {
            weight,
            lower: Lower::At(threshold),
            gamma,
            mass,
            width,
        }
    }

    pub fn unbounded(weight: T, mass: T, width: T) -> Self {
        ThresholdTerm {
            weight,
            lower: Lower::Unbounded,
            gamma: T::zero(),
            mass,
            width,
        }
    }

    pub fn threshold(&self) -> Option<T> {
        match self.lower {
            Lower::At(a) => Some(a),
            Lower::Unbounded => None,
        }
    }

    #[inline]
    fn hw(&self) -> T {
        self.width * T::lit(0.5)
    }

    #[inline]
    fn denom(&self, e: T) -> T {
        let d = e - self.mass;
        d * d + self.hw() * self.hw()
    }

    /// Pointwise density. At the threshold itself returns +inf for gamma < 0.
    pub fn density(&self, e: T) -> T {
        match self.lower {
            Lower::Unbounded => self.weight / self.denom(e),
            Lower::At(a) => {
                if e < a {
                    T::zero()
                } else if e == a {
                    if self.gamma < T::zero() {
                        T::infinity()
                    } else if self.gamma == T::zero() {
                        self.weight / self.denom(e)
                    } else {
                        T::zero()
                    }
                } else {
                    self.weight * (e - a).powf(self.gamma) / self.denom(e)
                }
            }
        }
    }

    fn check_gamma(&self) -> Result<()> {
        if !(self.gamma > -T::one() && self.gamma < T::one()) {
            return Err(Error::NonNormalizable {
                gamma: self.gamma.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Integral of x^gamma k(x) over [0, inf) in threshold-relative
    /// coordinates, for k smooth and the product decaying like x^-q.
    fn half_line<V, K>(&self, k: &K, q: T, tol: T) -> Estimate<V, T>
    where
        V: crate::quad::QuadValue<T>,
        K: Fn(T) -> V,
    {
        let c = self.mass - self.threshold().unwrap_or(T::zero());
        let s1 = self.hw();
        let b = c.max(T::zero()) + T::lit(20.0) * self.width;
        let g = self.gamma;
        let third = tol / T::lit(3.0);
        let kg = |x: T| k(x) * x.powf(g);
        let sing = power_start(k, T::zero(), s1, g, third);
        let mid = if c > s1 && c < b {
            adaptive(&kg, s1, c, AdaptiveOptions::abs(third * T::lit(0.5))).plus(adaptive(
                &kg,
                c,
                b,
                AdaptiveOptions::abs(third * T::lit(0.5)),
            ))
        } else {
            adaptive(&kg, s1, b, AdaptiveOptions::abs(third))
        };
        let tail = algebraic_tail(&kg, b, b, q, third);
        sing.plus(mid).plus(tail)
    }

    /// Total weight of the term, the integral of `density` over the real line.
    pub fn mass_integral(&self, tol: T) -> Result<Estimate<T, T>> {
        self.check_gamma()?;
        let two = T::lit(2.0);
        let w = self.weight;
        match self.lower {
            Lower::Unbounded => Ok(Estimate::exact(w * two * T::PI() / self.width)),
            Lower::At(a) if self.gamma == T::zero() => {
                let v = two / self.width * (T::FRAC_PI_2() + (two * (self.mass - a) / self.width).atan());
                Ok(Estimate::exact(w * v))
            }
            Lower::At(a) => {
                let c = self.mass - a;
                let hw = self.hw();
                let k = |x: T| {
                    let d = x - c;
                    T::one() / (d * d + hw * hw)
                };
                let raw_tol = tol / w.abs().max(T::min_positive_value());
                let e = self.half_line(&k, two - self.gamma, raw_tol);
                if !e.converged || e.abs_err > raw_tol {
                    return Err(Error::quad(None, (e.abs_err * w).to_f64_lossy(), tol.to_f64_lossy()));
                }
                Ok(e.scaled(w))
            }
        }
    }

    /// Fourier transform `int density(E) m(E) e^{-iEt} dE` for t >= 0, with
    /// m = 1 or -iE, by direct quadrature on the real axis.
    pub fn fourier_direct(&self, t: T, tol: T, moment: Moment) -> Result<Estimate<C<T>, T>> {
        self.check_gamma()?;
        if t < T::zero() {
            return Err(Error::InvalidArgument("negative time passed to term transform".into()));
        }
        let raw_tol = tol / self.weight.abs().max(T::min_positive_value());
        let est = match self.lower {
            Lower::At(a) => {
                let h = |x: T| match moment {
                    Moment::Amplitude => Complex::new(T::one(), T::zero()),
                    Moment::Derivative => Complex::new(T::zero(), -(a + x)),
                };
                let q = match moment {
                    Moment::Amplitude => T::lit(2.0) - self.gamma,
                    Moment::Derivative => T::one() - self.gamma,
                };
                self.direct_finite(t, raw_tol, q, &h)?
                    .rotated(cis(-a * t) * self.weight)
            }
            Lower::Unbounded => self.direct_unbounded(t, raw_tol, moment)?.scaled(self.weight),
        };
        if !est.converged || est.abs_err > tol {
            return Err(Error::quad(Some(t.to_f64_lossy()), est.abs_err.to_f64_lossy(), tol.to_f64_lossy()));
        }
        Ok(est)
    }

    /// `int_0^inf x^gamma h(x) e^{-ixt} / ((x-c)^2 + hw^2) dx` with c = M - a.
    fn direct_finite<H>(&self, t: T, tol: T, q: T, h: &H) -> Result<Estimate<C<T>, T>>
    where
        H: Fn(T) -> C<T>,
    {
        let c = self.mass - self.threshold().unwrap_or(T::zero());
        let hw = self.hw();
        let g = self.gamma;
        if t == T::zero() {
            if q <= T::one() {
                return Err(Error::Domain(
                    "derivative transform diverges at t = 0 for gamma >= 0".into(),
                ));
            }
            let k = |x: T| {
                let d = x - c;
                h(x) * (T::one() / (d * d + hw * hw))
            };
            return Ok(self.half_line(&k, q, tol));
        }
        let k = |x: T| {
            let d = x - c;
            h(x) * cis(-x * t) * (T::one() / (d * d + hw * hw))
        };
        let kg = |x: T| k(x) * x.powf(g);
        let quarter = tol * T::lit(0.25);
        let hp = T::PI() / t;
        let s1 = hp.min(hw);
        let sing = power_start(&k, T::zero(), s1, g, quarter);
        let end = (c.max(T::zero()) + T::lit(10.0) * self.width).max(s1 + hp);
        let n = ((end - s1) / hp).ceil().to_usize().unwrap_or(1).max(1);
        let pw = (end - s1) / T::lit(n as f64);
        let ptol = quarter / T::lit(n as f64);
        let mut mid = Estimate::exact(C::new(T::zero(), T::zero()));
        for j in 0..n {
            let lo = s1 + pw * T::lit(j as f64);
            let hi = if j + 1 == n { end } else { lo + pw };
            mid = mid.plus(adaptive_graded(&kg, lo, hi, AdaptiveOptions::abs(ptol)));
        }
        let tail = oscillatory_tail(&kg, end, hp, TailOptions::new(quarter));
        Ok(sing.plus(mid).plus(tail))
    }

    fn direct_unbounded(&self, t: T, tol: T, moment: Moment) -> Result<Estimate<C<T>, T>> {
        let m = self.mass;
        let hw = self.hw();
        let h = |x: T| match moment {
            Moment::Amplitude => Complex::new(T::one(), T::zero()),
            Moment::Derivative => Complex::new(T::zero(), -(m + x)),
        };
        let span = T::lit(10.0) * self.width;
        let quarter = tol * T::lit(0.25);
        if t == T::zero() {
            if moment == Moment::Derivative {
                return Err(Error::Domain(
                    "derivative transform of an unbounded Lorentzian diverges at t = 0".into(),
                ));
            }
            let k = |x: T| h(x) * (T::one() / (x * x + hw * hw));
            let mid = adaptive(&k, -span, span, AdaptiveOptions::abs(quarter));
            let right = algebraic_tail(&k, span, span, T::lit(2.0), quarter);
            let kl = |y: T| k(-y);
            let left = algebraic_tail(&kl, span, span, T::lit(2.0), quarter);
            return Ok(mid.plus(right).plus(left));
        }
        let k = |x: T| h(x) * cis(-x * t) * (T::one() / (x * x + hw * hw));
        let hp = T::PI() / t;
        let n = ((span * T::lit(2.0)) / hp).ceil().to_usize().unwrap_or(1).max(1);
        let pw = span * T::lit(2.0) / T::lit(n as f64);
        let ptol = quarter / T::lit(n as f64);
        let mut mid = Estimate::exact(C::new(T::zero(), T::zero()));
        for j in 0..n {
            let lo = -span + pw * T::lit(j as f64);
            let hi = if j + 1 == n { span } else { lo + pw };
            mid = mid.plus(adaptive(&k, lo, hi, AdaptiveOptions::abs(ptol)));
        }
        let right = oscillatory_tail(&k, span, hp, TailOptions::new(quarter));
        let kl = |y: T| k(-y);
        let left = oscillatory_tail(&kl, span, hp, TailOptions::new(quarter));
        Ok(mid.plus(right).plus(left).rotated(cis(-m * t)))
    }

    /// Same transform as [`fourier_direct`](Self::fourier_direct), evaluated
    /// by rotating the path onto the negative imaginary axis: a pole
    /// contribution plus a non-oscillatory integral along the ray.
    pub fn fourier_contour(&self, t: T, tol: T, moment: Moment) -> Result<Estimate<C<T>, T>> {
        self.check_gamma()?;
        if t < T::zero() {
            return Err(Error::InvalidArgument("negative time passed to term transform".into()));
        }
        match self.lower {
            Lower::Unbounded => {
                if t == T::zero() && moment == Moment::Derivative {
                    return Err(Error::Domain(
                        "derivative transform of an unbounded Lorentzian diverges at t = 0".into(),
                    ));
                }
                let z = Complex::new(self.mass, -self.hw());
                let mut v = (Complex::new(T::zero(), -t) * z).exp() * (self.weight * T::TAU() / self.width);
                if moment == Moment::Derivative {
                    v = v * Complex::new(T::zero(), -T::one()) * z;
                }
                Ok(Estimate::exact(v))
            }
            Lower::At(a) => {
                let h = |x: C<T>| match moment {
                    Moment::Amplitude => Complex::new(T::one(), T::zero()),
                    Moment::Derivative => Complex::new(T::zero(), -T::one()) * (x + a),
                };
                let q = match moment {
                    Moment::Amplitude => T::lit(2.0) - self.gamma,
                    Moment::Derivative => T::one() - self.gamma,
                };
                let raw_tol = tol / self.weight.abs().max(T::min_positive_value());
                let est = self
                    .contour_finite(t, raw_tol, q, &h)?
                    .rotated(cis(-a * t) * self.weight);
                if !est.converged || est.abs_err > tol {
                    return Err(Error::quad(Some(t.to_f64_lossy()), est.abs_err.to_f64_lossy(), tol.to_f64_lossy()));
                }
                Ok(est)
            }
        }
    }

    /// `int_0^inf x^gamma h(x) e^{-ixt} / ((x-c)^2 + hw^2) dx` along the
    /// rotated path; `h` must be analytic in the fourth quadrant apart from
    /// the Lorentzian pole and decay on large arcs.
    fn contour_finite<H>(&self, t: T, tol: T, q: T, h: &H) -> Result<Estimate<C<T>, T>>
    where
        H: Fn(C<T>) -> C<T>,
    {
        let c = self.mass - self.threshold().unwrap_or(T::zero());
        let hw = self.hw();
        let g = self.gamma;
        if c == T::zero() {
            return Err(Error::Domain(
                "contour route needs the resonance away from the threshold".into(),
            ));
        }
        let z2 = Complex::new(c, -hw);
        let minus_i = Complex::new(T::zero(), -T::one());
        let pole = if c > T::zero() {
            z2.powf(g) * (minus_i * z2 * t).exp() * h(z2) * (T::TAU() / self.width)
        } else {
            Complex::new(T::zero(), T::zero())
        };
        let r = |y: T| {
            let x = Complex::new(T::zero(), -y);
            let d = (x - c) * (x - c) + hw * hw;
            h(x) / d * (-y * t).exp()
        };
        let rg = |y: T| r(y) * y.powf(g);
        let quarter = tol * T::lit(0.25);
        let y_end = if t > T::zero() { T::lit(60.0) / t } else { T::infinity() };
        let y1 = (hw * T::lit(0.5)).min(y_end * T::lit(0.5));
        let sing = power_start(&r, T::zero(), y1, g, quarter);
        let y2 = (T::lit(10.0) * c.abs().max(self.width)).min(y_end).max(y1);
        let mid = if hw > y1 && hw < y2 {
            adaptive(&rg, y1, hw, AdaptiveOptions::abs(quarter * T::lit(0.5)))
                .plus(adaptive(&rg, hw, y2, AdaptiveOptions::abs(quarter * T::lit(0.5))))
        } else {
            adaptive(&rg, y1, y2, AdaptiveOptions::abs(quarter))
        };
        let tail = if t > T::zero() {
            adaptive_graded(&rg, y2, y_end.max(y2), AdaptiveOptions::abs(quarter))
        } else {
            if q <= T::one() {
                return Err(Error::Domain(
                    "derivative transform diverges at t = 0 for gamma >= 0".into(),
                ));
            }
            algebraic_tail(&rg, y2, y2, q, quarter)
        };
        let ray_phase = minus_i * cis(-T::FRAC_PI_2() * g);
        let ray = sing.plus(mid).plus(tail).rotated(ray_phase);
        Ok(Estimate {
            value: ray.value + pole,
            ..ray
        })
    }

    /// Boundary value `F(E + i0) = int density(E') / (E' - E - i0) dE'` in
    /// closed form. `Im F = pi * density(E)`.
    pub fn stieltjes(&self, e: T) -> Result<C<T>> {
        let hw = self.hw();
        let w = self.weight;
        match self.lower {
            Lower::Unbounded => {
                let d = Complex::new(self.mass - e, -hw);
                Ok(d.inv() * (w * T::TAU() / self.width))
            }
            Lower::At(a) => {
                self.check_gamma()?;
                let g = self.gamma;
                let c = self.mass - a;
                let x = e - a;
                let zeta = [Complex::new(c, hw), Complex::new(c, -hw), Complex::new(x, T::zero())];
                let pi = T::PI();
                // log(-zeta) with zeta_3 = x + i0
                let log3 = if x > T::zero() {
                    Some(Complex::new(x.ln(), -pi))
                } else if x < T::zero() {
                    Some(Complex::new((-x).ln(), T::zero()))
                } else {
                    None
                };
                let factor = if g == T::zero() { T::one() } else { pi * g / (pi * g).sin() };
                let j_of = |l: C<T>| -> C<T> {
                    let v = if g == T::zero() { l } else { cexpm1(l * g) / g };
                    -v * factor
                };
                let mut sum = Complex::new(T::zero(), T::zero());
                for k in 0..3 {
                    let mut prod = Complex::new(T::one(), T::zero());
                    for j in 0..3 {
                        if j != k {
                            prod = prod * (zeta[k] - zeta[j]);
                        }
                    }
                    let jk = if k < 2 {
                        j_of((-zeta[k]).ln())
                    } else {
                        match log3 {
                            Some(l) => j_of(l),
                            None => {
                                if g > T::zero() {
                                    // (-zeta)^g -> 0, so expm1 -> -1
                                    Complex::new(factor / g, T::zero())
                                } else {
                                    return Err(Error::Domain(
                                        "Stieltjes transform is singular at the threshold for gamma <= 0".into(),
                                    ));
                                }
                            }
                        }
                    };
                    sum = sum + jk / prod;
                }
                Ok(sum * w)
            }
        }
    }

    /// Truncated resolvent `G^(t)(E) = i int density(E') e^{-iE't} / (E - E' + i0) dE'`
    /// for t >= 0 and E off the threshold. At t = 0 it equals `-i F(E + i0)`.
    pub fn truncated_resolvent(&self, e: T, t: T, tol: T) -> Result<Estimate<C<T>, T>> {
        self.check_gamma()?;
        let i = Complex::new(T::zero(), T::one());
        match self.lower {
            Lower::Unbounded => {
                let z = Complex::new(self.mass, -self.hw());
                let v = i * (-i * z * t).exp() / (Complex::new(e, T::zero()) - z) * (self.weight * T::TAU() / self.width);
                Ok(Estimate::exact(v))
            }
            Lower::At(a) => {
                let x0 = e - a;
                if x0 == T::zero() {
                    return Err(Error::Domain("truncated resolvent evaluated at the threshold".into()));
                }
                let h = |x: C<T>| (Complex::new(x0, T::zero()) - x).inv();
                let raw_tol = tol / self.weight.abs().max(T::min_positive_value());
                let est = self
                    .contour_finite(t, raw_tol, T::lit(3.0) - self.gamma, &h)?
                    .rotated(i * cis(-a * t) * self.weight);
                if !est.converged || est.abs_err > tol {
                    return Err(Error::quad(Some(t.to_f64_lossy()), est.abs_err.to_f64_lossy(), tol.to_f64_lossy()));
                }
                Ok(est)
            }
        }
    }

    /// Coefficient of the pole contribution: A_pole(t) = coeff * e^{-i(M - i Gamma/2) t}.
    pub fn pole_coefficient(&self) -> C<T> {
        let scale = self.weight * T::TAU() / self.width;
        match self.lower {
            Lower::Unbounded => Complex::new(scale, T::zero()),
            Lower::At(a) => {
                let c = self.mass - a;
                if c > T::zero() {
                    Complex::new(c, -self.hw()).powf(self.gamma) * scale
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            }
        }
    }

    /// Leading late-time threshold contribution:
    /// A_pow(t) ~ coeff * e^{-iat} t^{-(gamma+1)}. None for unbounded terms.
    pub fn power_coefficient(&self) -> Option<(C<T>, T)> {
        let a = self.threshold()?;
        let c = self.mass - a;
        let d0 = c * c + self.hw() * self.hw();
        let gamma_fn = T::lit(statrs::function::gamma::gamma(self.gamma.to_f64_lossy() + 1.0));
        let phase = Complex::new(T::zero(), -T::one()) * cis(-T::FRAC_PI_2() * self.gamma);
        Some((phase * (self.weight * gamma_fn / d0), a))
    }
}
