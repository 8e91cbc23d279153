//! Survival amplitude `A(t) = int rho(E) e^{-iEt} dE`, survival probability
//! `P = |A|^2` and decay intensity `I = -dP/dt`.

use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::Estimate;
use crate::scalar::Real;
use crate::spectral::{ModelDocument, SpectralModel, UnitsConfig};
use crate::term::Moment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    Logarithmic,
    Explicit,
}

/// Strictly increasing, non-negative sample times (natural units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawGrid<T>")]
pub struct TimeGrid<T> {
    points: Vec<T>,
    spacing: Spacing,
}

#[derive(Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
struct RawGrid<T> {
    points: Vec<T>,
    spacing: Spacing,
}

impl<T: Real> TryFrom<RawGrid<T>> for TimeGrid<T> {
    type Error = Error;
    fn try_from(raw: RawGrid<T>) -> Result<Self> {
        let mut g = TimeGrid::explicit(raw.points)?;
        g.spacing = raw.spacing;
        Ok(g)
    }
}

impl<T: Real> TimeGrid<T> {
    pub fn uniform(t0: T, t1: T, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("time grid needs at least 2 points".into()));
        }
        let step = (t1 - t0) / T::lit((n - 1) as f64);
        let mut points: Vec<T> = (0..n).map(|k| t0 + step * T::lit(k as f64)).collect();
        points[n - 1] = t1;
        let mut g = Self::explicit(points)?;
        g.spacing = Spacing::Uniform;
        Ok(g)
    }

    /// Geometric spacing between t0 > 0 and t1.
    pub fn logarithmic(t0: T, t1: T, n: usize) -> Result<Self> {
        if !(t0 > T::zero()) {
            return Err(Error::InvalidArgument("logarithmic grid needs t0 > 0".into()));
        }
        if n < 2 {
            return Err(Error::InvalidArgument("time grid needs at least 2 points".into()));
        }
        let (l0, l1) = (t0.ln(), t1.ln());
        let step = (l1 - l0) / T::lit((n - 1) as f64);
        let mut points: Vec<T> = (0..n).map(|k| (l0 + step * T::lit(k as f64)).exp()).collect();
        points[0] = t0;
        points[n - 1] = t1;
        let mut g = Self::explicit(points)?;
        g.spacing = Spacing::Logarithmic;
        Ok(g)
    }

    pub fn explicit(points: Vec<T>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least 2 points".into()));
        }
        if !(points[0] >= T::zero()) {
            return Err(Error::InvalidArgument("time grid must start at t >= 0".into()));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "time grid must be strictly increasing and finite ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(TimeGrid {
            points,
            spacing: Spacing::Explicit,
        })
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance to the nearest neighbour of point k.
    pub fn local_spacing(&self, k: usize) -> T {
        let p = &self.points;
        let left = if k > 0 { p[k] - p[k - 1] } else { T::infinity() };
        let right = if k + 1 < p.len() { p[k + 1] - p[k] } else { T::infinity() };
        left.min(right)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMethod {
    #[default]
    Direct,
    Contour,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AmplitudeSeries<T> {
    pub grid: TimeGrid<T>,
    #[serde(with = "complex_vec")]
    pub values: Vec<Complex<T>>,
    pub abs_err: Vec<T>,
    pub method: AmplitudeMethod,
}

pub(crate) mod complex_vec {
    use num_complex::Complex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Real;

    pub fn serialize<T: Real, S: Serializer>(v: &[Complex<T>], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[T; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex<T>>, D::Error> {
        let pairs: Vec<[T; 2]> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex::new(re, im)).collect())
    }
}

fn transform_at<T: Real>(
    model: &SpectralModel<T>,
    t: T,
    tol: T,
    method: AmplitudeMethod,
    moment: Moment,
) -> Result<Estimate<Complex<T>, T>> {
    let terms = model.terms()?;
    let share = tol / T::lit(terms.len() as f64);
    let at = t.abs();
    let mut acc = Estimate::exact(Complex::new(T::zero(), T::zero()));
    for term in &terms {
        let e = match method {
            AmplitudeMethod::Direct => term.fourier_direct(at, share, moment),
            AmplitudeMethod::Contour => term.fourier_contour(at, share, moment),
        }
        .map_err(|e| match e {
            Error::QuadratureFailure { abs_err, .. } => Error::quad(Some(t.to_f64_lossy()), abs_err, tol.to_f64_lossy()),
            other => other,
        })?;
        acc = acc.plus(e);
    }
    if t < T::zero() {
        // real density: A(-t) = conj A(t), A'(-t) = -conj A'(t)
        acc.value = match moment {
            Moment::Amplitude => acc.value.conj(),
            Moment::Derivative => -acc.value.conj(),
        };
    }
    Ok(acc)
}

/// Amplitude at a single time (any sign) with its error estimate.
pub fn amplitude_at<T: Real>(
    model: &SpectralModel<T>,
    t: T,
    tol: T,
    method: AmplitudeMethod,
) -> Result<Estimate<Complex<T>, T>> {
    transform_at(model, t, tol, method, Moment::Amplitude)
}

/// Time derivative `A'(t) = int (-iE) rho(E) e^{-iEt} dE`. Converges for
/// gamma < 0 at t = 0 and, as an Abel limit, for every model at t != 0.
pub fn amplitude_derivative_at<T: Real>(
    model: &SpectralModel<T>,
    t: T,
    tol: T,
    method: AmplitudeMethod,
) -> Result<Estimate<Complex<T>, T>> {
    transform_at(model, t, tol, method, Moment::Derivative)
}

fn check_tol<T: Real>(tol: T) -> Result<()> {
    if !(tol > T::lit(1e-12) && tol <= T::lit(1e-4)) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (1e-12, 1e-4], got {tol}")));
    }
    Ok(())
}

fn check_model<T: Real>(model: &SpectralModel<T>) -> Result<()> {
    model.validate()?;
    if !model.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

/// Survival amplitude on a grid by direct oscillatory quadrature.
pub fn survival_amplitude<T: Real>(model: &SpectralModel<T>, grid: &TimeGrid<T>, tol: T) -> Result<AmplitudeSeries<T>> {
    survival_amplitude_with(model, grid, tol, AmplitudeMethod::Direct)
}

pub fn survival_amplitude_with<T: Real>(
    model: &SpectralModel<T>,
    grid: &TimeGrid<T>,
    tol: T,
    method: AmplitudeMethod,
) -> Result<AmplitudeSeries<T>> {
    check_tol(tol)?;
    check_model(model)?;
    let est: Vec<Estimate<Complex<T>, T>> = grid
        .points()
        .par_iter()
        .map(|&t| amplitude_at(model, t, tol, method))
        .collect::<Result<_>>()?;
    Ok(AmplitudeSeries {
        grid: grid.clone(),
        values: est.iter().map(|e| e.value).collect(),
        abs_err: est.iter().map(|e| e.abs_err).collect(),
        method,
    })
}

pub fn survival_probability<T: Real>(series: &AmplitudeSeries<T>) -> Vec<T> {
    series.values.iter().map(|a| a.norm_sqr()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    /// Ridders-Richardson central differences of P(t).
    #[default]
    FiniteDifference,
    /// `I = -2 Re[conj(A) A']` with A' from the derivative transform.
    Quadrature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntensityOptions {
    pub amplitude: AmplitudeMethod,
    pub derivative: DerivativeMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IntensitySeries<T> {
    pub grid: TimeGrid<T>,
    pub values: Vec<T>,
    pub abs_err: Vec<T>,
    pub method: DerivativeMethod,
}

/// Ridders' extrapolated central difference of `f` at `x` from step `h0`.
pub(crate) fn ridders<T: Real, F: Fn(T) -> Result<T>>(f: &F, x: T, h0: T) -> Result<(T, T)> {
    const NTAB: usize = 8;
    let con = T::lit(1.4);
    let con2 = con * con;
    let safe = T::lit(2.0);
    let mut a = [[T::zero(); NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = (f(x + h)? - f(x - h)?) / (h + h);
    let mut err = T::infinity();
    let mut ans = a[0][0];
    for i in 1..NTAB {
        h = h / con;
        a[0][i] = (f(x + h)? - f(x - h)?) / (h + h);
        let mut fac = con2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - T::one());
            fac = con2 * fac;
            let errt = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                ans = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= safe * err {
            break;
        }
    }
    Ok((ans, err))
}

/// Initial finite-difference step at grid point k: a quarter of the local
/// spacing, at most a tenth of max(t, 1/Gamma), and never reaching across
/// t = 0 where P has a cusp for threshold models.
pub(crate) fn fd_step<T: Real>(grid: &TimeGrid<T>, k: usize, width: T) -> T {
    let t = grid.points()[k];
    let mut h = (grid.local_spacing(k) * T::lit(0.25)).min(T::lit(0.1) * t.max(T::one() / width));
    if t > T::zero() {
        h = h.min(t * T::lit(0.5));
    }
    h
}

/// Decay intensity `-dP/dt` on the grid by finite differences.
pub fn decay_intensity<T: Real>(model: &SpectralModel<T>, grid: &TimeGrid<T>, tol: T) -> Result<IntensitySeries<T>> {
    decay_intensity_with(model, grid, tol, IntensityOptions::default())
}

pub fn decay_intensity_with<T: Real>(
    model: &SpectralModel<T>,
    grid: &TimeGrid<T>,
    tol: T,
    opts: IntensityOptions,
) -> Result<IntensitySeries<T>> {
    check_tol(tol)?;
    check_model(model)?;
    let width = model.width();
    let out: Vec<(T, T)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let t = grid.points()[k];
            match opts.derivative {
                DerivativeMethod::Quadrature => {
                    let a = amplitude_at(model, t, tol, opts.amplitude)?;
                    let d = amplitude_derivative_at(model, t, tol, opts.amplitude)?;
                    let i = -T::lit(2.0) * (a.value.conj() * d.value).re;
                    let err = T::lit(2.0) * (a.abs_err * d.value.norm() + d.abs_err * a.value.norm());
                    Ok((i, err))
                }
                DerivativeMethod::FiniteDifference => {
                    let p = |s: T| -> Result<T> { Ok(amplitude_at(model, s, tol, opts.amplitude)?.value.norm_sqr()) };
                    let h0 = fd_step(grid, k, width);
                    let (d, err) = ridders(&p, t, h0)?;
                    // P noise at the level tol propagates as tol / h
                    let noise = T::lit(2.0) * tol / h0;
                    if !d.is_finite() || !err.is_finite() {
                        return Err(Error::Stencil(format!("non-finite derivative at t = {t}")));
                    }
                    if err > T::lit(0.1) * d.abs() + T::lit(100.0) * noise {
                        return Err(Error::Stencil(format!(
                            "derivative at t = {t} not resolved (error {:e} for value {:e})",
                            err.to_f64_lossy(),
                            d.to_f64_lossy()
                        )));
                    }
                    Ok((-d, err + noise))
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(IntensitySeries {
        grid: grid.clone(),
        values: out.iter().map(|x| x.0).collect(),
        abs_err: out.iter().map(|x| x.1).collect(),
        method: opts.derivative,
    })
}

/// CSV with columns `t,re_A,im_A,P,abs_err`.
pub fn write_amplitude_csv<T: Real, W: Write>(series: &AmplitudeSeries<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["t", "re_A", "im_A", "P", "abs_err"]).map_err(io)?;
    for (k, &t) in series.grid.points().iter().enumerate() {
        let a = series.values[k];
        w.write_record([
            t.to_string(),
            a.re.to_string(),
            a.im.to_string(),
            a.norm_sqr().to_string(),
            series.abs_err[k].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON form with the generating model echoed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AmplitudeReport<T> {
    pub model: ModelDocument<T>,
    pub tol: T,
    pub series: AmplitudeSeries<T>,
    pub probability: Vec<T>,
}

impl<T: Real> AmplitudeReport<T> {
    pub fn new(model: &SpectralModel<T>, units: UnitsConfig<T>, tol: T, series: AmplitudeSeries<T>) -> Self {
        let probability = survival_probability(&series);
        AmplitudeReport {
            model: ModelDocument {
                model: model.clone(),
                units,
            },
            tol,
            series,
            probability,
        }
    }
}
