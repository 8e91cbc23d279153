//! Channel-resolved decay: cumulative decay probabilities `w_i(t)`, partial
//! amplitudes, channel and band intensities.
//!
//! The full route evaluates
//! `w_i(t) = int f_i(E) |G_t(E)|^2 dE`, `G_t(E) = int_0^t A(t') e^{iEt'} dt'`,
//! where the coupling weight `f_i` is either `rho_i / |G|^2` (unitary, the
//! default, which makes `sum_i w_i = 1 - P` exact) or `Gamma_i(E) / 2pi`.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitude::{amplitude_at, survival_amplitude_with, AmplitudeMethod, AmplitudeSeries, TimeGrid};
use crate::error::{Error, Result};
use crate::quad::{algebraic_tail, gauss_legendre, oscillatory_tail, GaussLegendre, TailOptions};
use crate::scalar::Real;
use crate::spectral::{MultiChannelModel, SpectralModel};
use crate::term::{cis, ThresholdTerm};

const GL_ORDER: usize = 8;
const TIME_GRADING: i32 = 24;
const ENERGY_GRADING: i32 = 30;
/// Upper end of the tabulated energy range, in widths above max(M, E_th).
const E_CUT_WIDTHS: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMethod {
    #[default]
    FullDoubleIntegral,
    ProductApproximation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `f_i = rho_i / |G|^2`.
    #[default]
    Unitary,
    /// `f_i = Gamma_i(E) / 2pi` taken at face value.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelOptions {
    pub method: ChannelMethod,
    pub coupling: Coupling,
    /// Amplitude route for the product approximation. The full route always
    /// tabulates A(t) by the contour method where it applies.
    pub amplitude: AmplitudeMethod,
    /// Cap on (energy nodes) x (time nodes) for the full route.
    pub max_work: f64,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        ChannelOptions {
            method: ChannelMethod::FullDoubleIntegral,
            coupling: Coupling::Unitary,
            amplitude: AmplitudeMethod::Direct,
            max_work: 5e9,
        }
    }
}

impl ChannelOptions {
    pub fn product() -> Self {
        ChannelOptions {
            method: ChannelMethod::ProductApproximation,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub name: String,
    pub member_channels: BTreeSet<usize>,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, members: impl IntoIterator<Item = usize>) -> Self {
        BandSpec {
            name: name.into(),
            member_channels: members.into_iter().collect(),
        }
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.member_channels.is_empty() {
            return Err(Error::InvalidArgument(format!("band '{}' has no channels", self.name)));
        }
        if let Some(&i) = self.member_channels.iter().find(|&&i| i >= n_channels) {
            return Err(Error::InvalidArgument(format!(
                "band '{}' names channel {i}, model has {n_channels}",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ChannelProbabilitySeries<T> {
    pub grid: TimeGrid<T>,
    /// Model indices of the channels held in `w` and `w_inf`.
    pub channels: Vec<usize>,
    pub labels: Vec<String>,
    /// `w[c][k]`: channel `channels[c]` at grid point k.
    pub w: Vec<Vec<T>>,
    pub w_inf: Vec<T>,
    /// Survival probability on the same grid.
    pub survival: Vec<T>,
    pub method: ChannelMethod,
    pub coupling: Coupling,
}

impl<T: Real> ChannelProbabilitySeries<T> {
    fn position(&self, i: usize) -> Result<usize> {
        self.channels
            .iter()
            .position(|&c| c == i)
            .ok_or_else(|| Error::InvalidArgument(format!("channel {i} is not part of this series")))
    }

    /// Decay probability of model channel `i`.
    pub fn channel(&self, i: usize) -> Result<&[T]> {
        Ok(&self.w[self.position(i)?])
    }

    pub fn channel_w_inf(&self, i: usize) -> Result<T> {
        Ok(self.w_inf[self.position(i)?])
    }
}

fn check_inputs<T: Real>(model: &MultiChannelModel<T>, grid: &TimeGrid<T>, tol: T) -> Result<SpectralModel<T>> {
    let spec = SpectralModel::Multi(model.clone());
    spec.validate()?;
    if model.norm.is_none() {
        return Err(Error::NotNormalized);
    }
    if !(tol > T::lit(1e-12) && tol <= T::lit(1e-4)) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (1e-12, 1e-4], got {tol}")));
    }
    if grid.points()[0] < T::zero() {
        return Err(Error::InvalidArgument("channel probabilities need t >= 0".into()));
    }
    Ok(spec)
}

/// Model restricted to channel `i`, keeping the shared normalization.
fn partial_model<T: Real>(model: &MultiChannelModel<T>, i: usize) -> Result<SpectralModel<T>> {
    let ch = model.channel(i)?.clone();
    Ok(SpectralModel::Multi(MultiChannelModel {
        channels: vec![ch],
        ..model.clone()
    }))
}

/// Amplitude of the channel density alone, `A_i(t) = int rho_i e^{-iEt} dE`.
pub fn partial_amplitude<T: Real>(
    model: &MultiChannelModel<T>,
    i: usize,
    grid: &TimeGrid<T>,
    tol: T,
) -> Result<AmplitudeSeries<T>> {
    partial_amplitude_with(model, i, grid, tol, AmplitudeMethod::Direct)
}

pub fn partial_amplitude_with<T: Real>(
    model: &MultiChannelModel<T>,
    i: usize,
    grid: &TimeGrid<T>,
    tol: T,
    method: AmplitudeMethod,
) -> Result<AmplitudeSeries<T>> {
    survival_amplitude_with(&partial_model(model, i)?, grid, tol, method)
}

/// All channels by the method chosen in `opts`.
pub fn channel_probabilities<T: Real>(
    model: &MultiChannelModel<T>,
    grid: &TimeGrid<T>,
    tol: T,
    opts: ChannelOptions,
) -> Result<ChannelProbabilitySeries<T>> {
    let all: Vec<usize> = (0..model.channels.len()).collect();
    series_for(model, &all, grid, tol, opts)
}

/// Channel `i` by the full double integral.
pub fn channel_probability<T: Real>(
    model: &MultiChannelModel<T>,
    i: usize,
    grid: &TimeGrid<T>,
    tol: T,
) -> Result<ChannelProbabilitySeries<T>> {
    series_for(model, &[i], grid, tol, ChannelOptions::default())
}

/// Channel `i` by `w_i(inf) - Re[A conj(A_i)]`.
pub fn channel_probability_approx<T: Real>(
    model: &MultiChannelModel<T>,
    i: usize,
    grid: &TimeGrid<T>,
    tol: T,
) -> Result<ChannelProbabilitySeries<T>> {
    series_for(model, &[i], grid, tol, ChannelOptions::product())
}

fn series_for<T: Real>(
    model: &MultiChannelModel<T>,
    channels: &[usize],
    grid: &TimeGrid<T>,
    tol: T,
    opts: ChannelOptions,
) -> Result<ChannelProbabilitySeries<T>> {
    let spec = check_inputs(model, grid, tol)?;
    for &i in channels {
        model.channel(i)?;
    }
    let w_inf: Vec<T> = channels
        .iter()
        .map(|&i| model.branching_ratio(i, tol * T::lit(0.1)))
        .collect::<Result<_>>()?;
    let amp_method = match opts.method {
        ChannelMethod::FullDoubleIntegral => AmplitudeMethod::Contour,
        ChannelMethod::ProductApproximation => opts.amplitude,
    };
    let amp = survival_amplitude_with(&spec, grid, tol, amp_method).or_else(|e| match e {
        Error::Domain(_) => survival_amplitude_with(&spec, grid, tol, AmplitudeMethod::Direct),
        e => Err(e),
    })?;
    let w = match opts.method {
        ChannelMethod::ProductApproximation => channels
            .iter()
            .zip(&w_inf)
            .map(|(&i, &winf)| {
                let part = partial_amplitude_with(model, i, grid, tol, opts.amplitude)?;
                Ok(amp
                    .values
                    .iter()
                    .zip(&part.values)
                    .map(|(a, ai)| winf - (a * ai.conj()).re)
                    .collect())
            })
            .collect::<Result<Vec<Vec<T>>>>()?,
        ChannelMethod::FullDoubleIntegral => full_double_integral(model, &spec, channels, grid, tol, opts)?,
    };
    Ok(ChannelProbabilitySeries {
        grid: grid.clone(),
        channels: channels.to_vec(),
        labels: channels.iter().map(|&i| model.channels[i].label.clone()).collect(),
        w,
        w_inf,
        survival: amp.values.iter().map(|a| a.norm_sqr()).collect(),
        method: opts.method,
        coupling: opts.coupling,
    })
}

/// Per-energy ingredients shared by all channels.
struct Couplings<T> {
    terms: Vec<ThresholdTerm<T>>,
    c: Vec<T>,
    coupling: Coupling,
}

impl<T: Real> Couplings<T> {
    fn new(model: &MultiChannelModel<T>, spec: &SpectralModel<T>, coupling: Coupling) -> Result<Self> {
        Ok(Couplings {
            terms: spec.terms()?,
            c: model.channels.iter().map(|ch| ch.c).collect(),
            coupling,
        })
    }

    fn propagator(&self, e: T) -> Result<Complex<T>> {
        let mut f = Complex::new(T::zero(), T::zero());
        for term in &self.terms {
            f = f + term.stieltjes(e)?;
        }
        Ok(Complex::new(f.im, -f.re))
    }

    fn weight(&self, i: usize, e: T, g: Complex<T>) -> T {
        let term = &self.terms[i];
        let a = term.threshold().unwrap_or(T::neg_infinity());
        if e <= a {
            return T::zero();
        }
        match self.coupling {
            Coupling::Unitary => term.density(e) / g.norm_sqr(),
            Coupling::Literal => self.c[i] * (e - a).powf(term.gamma) / T::TAU(),
        }
    }

    /// `G^(t)(E) = int_0^inf A(t + s) e^{iEs} ds`.
    fn resolvent(&self, e: T, t: T, tol: T) -> Result<Complex<T>> {
        let share = tol / T::lit(self.terms.len() as f64);
        let mut r = Complex::new(T::zero(), T::zero());
        for term in &self.terms {
            r = r + term.truncated_resolvent(e, t, share)?.value;
        }
        Ok(r)
    }
}

fn sorted_dedup<T: Real>(mut v: Vec<T>, eps: T) -> Vec<T> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup_by(|a, b| (*a - *b).abs() <= eps);
    v
}

/// Panel boundaries in t: geometric towards 0, then uniform of width `h`,
/// with every output time a boundary.
fn time_boundaries<T: Real>(outputs: &[T], h: T) -> Vec<T> {
    let t_max = outputs[outputs.len() - 1];
    let first = h.min(t_max);
    let mut b: Vec<T> = (1..=TIME_GRADING).map(|k| first * T::lit(0.5).powi(k)).collect();
    let n = (t_max / h).ceil().to_usize().unwrap_or(0);
    b.extend((1..n).map(|j| T::lit(j as f64) * h));
    let near = h * T::lit(1e-6);
    b.retain(|&x| x < t_max && outputs.iter().all(|&o| (x - o).abs() > near));
    b.push(T::zero());
    b.extend(outputs.iter().copied().filter(|&o| o > T::zero()));
    sorted_dedup(b, T::zero())
}

/// Panel boundaries in E over [lo, hi]: uniform of width <= `h` between
/// breakpoints, graded geometrically on both sides of each threshold.
fn energy_boundaries<T: Real>(lo: T, hi: T, thresholds: &[T], mass: T, h: T) -> Vec<T> {
    let mut breaks = vec![lo, hi];
    breaks.extend(thresholds.iter().copied().chain(std::iter::once(mass)).filter(|&x| x > lo && x < hi));
    let breaks = sorted_dedup(breaks, T::zero());
    let mut b = Vec::new();
    for w in breaks.windows(2) {
        let n = ((w[1] - w[0]) / h).ceil().to_usize().unwrap_or(1).max(1);
        let step = (w[1] - w[0]) / T::lit(n as f64);
        b.extend((0..n).map(|j| w[0] + T::lit(j as f64) * step));
    }
    b.push(hi);
    for &a in thresholds {
        for k in 1..=ENERGY_GRADING {
            let d = h * T::lit(0.5).powi(k);
            for x in [a - d, a + d] {
                if x > lo && x < hi {
                    b.push(x);
                }
            }
        }
    }
    sorted_dedup(b, T::zero())
}

fn nodes_on<T: Real>(bounds: &[T], rule: &GaussLegendre<T>) -> (Vec<T>, Vec<T>) {
    let mut x = Vec::with_capacity(bounds.len() * GL_ORDER);
    let mut w = Vec::with_capacity(bounds.len() * GL_ORDER);
    for p in bounds.windows(2) {
        for (xi, wi) in rule.on(p[0], p[1]) {
            x.push(xi);
            w.push(wi);
        }
    }
    (x, w)
}

fn full_double_integral<T: Real>(
    model: &MultiChannelModel<T>,
    spec: &SpectralModel<T>,
    channels: &[usize],
    grid: &TimeGrid<T>,
    tol: T,
    opts: ChannelOptions,
) -> Result<Vec<Vec<T>>> {
    let outputs = grid.points();
    let n_out = outputs.len();
    let t_max = outputs[n_out - 1];
    if t_max == T::zero() {
        return Ok(vec![vec![T::zero(); n_out]; channels.len()]);
    }
    let cpl = Couplings::new(model, spec, opts.coupling)?;
    let thresholds: Vec<T> = model.channels.iter().map(|c| c.threshold).collect();
    let a_min = thresholds.iter().copied().fold(T::infinity(), T::min);
    let a_max = thresholds.iter().copied().fold(T::neg_infinity(), T::max);
    let width = model.width;
    let e_cut = model.mass.max(a_max) + T::lit(E_CUT_WIDTHS) * width;
    let omega = e_cut - a_min.min(model.mass - width);

    let rule = gauss_legendre::<T>(GL_ORDER);
    let h_t = (T::lit(0.16) / width).min(T::FRAC_PI_2() / omega);
    let (tn, tw) = nodes_on(&time_boundaries(outputs, h_t), &rule);
    let h_e = (T::PI() / t_max).min(width * T::lit(0.25));
    let (en, ew) = nodes_on(&energy_boundaries(a_min, e_cut, &thresholds, model.mass, h_e), &rule);

    let work = (tn.len() as f64) * (en.len() as f64);
    if work > opts.max_work {
        return Err(Error::BudgetExceeded(format!(
            "{} energy x {} time nodes exceeds the cap of {:e}",
            en.len(),
            tn.len(),
            opts.max_work
        )));
    }

    // A(t') on the inner nodes, pre-multiplied by the weights
    let tol_a = (tol * T::lit(1e-2)).max(T::lit(1e-12));
    let weighted: Vec<Complex<T>> = tn
        .par_iter()
        .zip(tw.par_iter())
        .map(|(&t, &w)| {
            let a = amplitude_at(spec, t, tol_a, AmplitudeMethod::Contour).or_else(|e| match e {
                Error::Domain(_) => amplitude_at(spec, t, tol_a, AmplitudeMethod::Direct),
                e => Err(e),
            })?;
            Ok(a.value * w)
        })
        .collect::<Result<_>>()?;
    let cuts: Vec<usize> = outputs.iter().map(|&o| tn.partition_point(|&x| x < o)).collect();

    let n_ch = channels.len();
    let per_node: Vec<Vec<T>> = en
        .par_iter()
        .zip(ew.par_iter())
        .map(|(&e, &we)| {
            let g = cpl.propagator(e)?;
            let f: Vec<T> = channels.iter().map(|&i| cpl.weight(i, e, g) * we).collect();
            let mut out = vec![T::zero(); n_ch * n_out];
            if f.iter().all(|&x| x == T::zero()) {
                return Ok(out);
            }
            let mut acc = Complex::new(T::zero(), T::zero());
            let mut j = 0;
            for (k, &cut) in cuts.iter().enumerate() {
                while j < cut {
                    acc = acc + weighted[j] * cis(e * tn[j]);
                    j += 1;
                }
                let g2 = acc.norm_sqr();
                for c in 0..n_ch {
                    out[c * n_out + k] = f[c] * g2;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut w = vec![vec![T::zero(); n_out]; n_ch];
    for node in &per_node {
        for c in 0..n_ch {
            for k in 0..n_out {
                w[c][k] = w[c][k] + node[c * n_out + k];
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..n_ch)
        .flat_map(|c| (0..n_out).filter(|&k| outputs[k] > T::zero()).map(move |k| (c, k)))
        .collect();
    let tail_tol = tol * T::lit(0.1) / T::lit(n_ch as f64);
    let tails: Vec<T> = jobs
        .par_iter()
        .map(|&(c, k)| energy_tail(&cpl, channels[c], outputs[k], e_cut, tail_tol))
        .collect::<Result<_>>()?;
    for (&(c, k), v) in jobs.iter().zip(&tails) {
        w[c][k] = w[c][k] + *v;
    }
    Ok(w)
}

/// `int_{E_cut}^inf f_i |G - e^{iEt} G^(t)|^2 dE`, split into a smooth part
/// `f_i (|G|^2 + |G^(t)|^2)` and the oscillating cross term.
fn energy_tail<T: Real>(cpl: &Couplings<T>, i: usize, t: T, e_cut: T, tol: T) -> Result<T> {
    let failed: Cell<Option<Error>> = Cell::new(None);
    let tol_r = tol * T::lit(1e-2);
    let parts = |e: T| -> Option<(T, Complex<T>, Complex<T>)> {
        let g = cpl.propagator(e).ok()?;
        let r = cpl.resolvent(e, t, tol_r).ok()?;
        Some((cpl.weight(i, e, g), g, r))
    };
    let smooth = |e: T| match parts(e) {
        Some((f, g, r)) => f * (g.norm_sqr() + r.norm_sqr()),
        None => {
            failed.set(Some(Error::quad(Some(t.to_f64_lossy()), f64::INFINITY, tol.to_f64_lossy())));
            T::zero()
        }
    };
    let cross = |e: T| match parts(e) {
        Some((f, g, r)) => -T::lit(2.0) * f * (g.conj() * r * cis(e * t)).re,
        None => {
            failed.set(Some(Error::quad(Some(t.to_f64_lossy()), f64::INFINITY, tol.to_f64_lossy())));
            T::zero()
        }
    };
    let term = &cpl.terms[i];
    let a = term.threshold().unwrap_or(T::zero());
    // f_i ~ E^gamma and |G_t|^2 ~ E^-2 for either coupling
    let q = T::lit(2.0) - term.gamma;
    let s = algebraic_tail(&smooth, e_cut, e_cut - a, q, tol * T::lit(0.5));
    let x = oscillatory_tail(&cross, e_cut, T::PI() / t, TailOptions::new(tol * T::lit(0.5)));
    if let Some(e) = failed.take() {
        return Err(e);
    }
    if !s.converged || !x.converged {
        return Err(Error::quad(
            Some(t.to_f64_lossy()),
            (s.abs_err + x.abs_err).to_f64_lossy(),
            tol.to_f64_lossy(),
        ));
    }
    Ok(s.value + x.value)
}

/// Derivative of a sampled series by three-point Lagrange stencils
/// (one-sided at the ends).
fn derivative3<T: Real>(t: &[T], y: &[T]) -> Result<Vec<T>> {
    let n = t.len();
    if n < 3 {
        return Err(Error::Stencil(format!("need at least 3 grid points, got {n}")));
    }
    let stencil = |j: usize, x: T| {
        let (x0, x1, x2) = (t[j], t[j + 1], t[j + 2]);
        let l0 = (T::lit(2.0) * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
        let l1 = (T::lit(2.0) * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
        let l2 = (T::lit(2.0) * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
        l0 * y[j] + l1 * y[j + 1] + l2 * y[j + 2]
    };
    Ok((0..n)
        .map(|k| {
            let j = k.saturating_sub(1).min(n - 3);
            stencil(j, t[k])
        })
        .collect())
}

/// `I_i = dw_i/dt` on the series grid.
pub fn channel_intensity<T: Real>(series: &ChannelProbabilitySeries<T>, i: usize) -> Result<Vec<T>> {
    derivative3(series.grid.points(), series.channel(i)?)
}

/// `gamma_min + gamma_B,min + 3`.
pub fn band_exponent<T: Real>(model: &MultiChannelModel<T>, band: &BandSpec) -> Result<T> {
    band.validate(model.channels.len())?;
    let g_band = band
        .member_channels
        .iter()
        .map(|&i| model.channels[i].gamma)
        .fold(T::infinity(), T::min);
    Ok(model.min_gamma() + g_band + T::lit(3.0))
}

/// Summed intensity of the band members.
pub fn band_intensity<T: Real>(
    model: &MultiChannelModel<T>,
    band: &BandSpec,
    grid: &TimeGrid<T>,
    tol: T,
    opts: ChannelOptions,
) -> Result<Vec<T>> {
    band.validate(model.channels.len())?;
    let members: Vec<usize> = band.member_channels.iter().copied().collect();
    let series = series_for(model, &members, grid, tol, opts)?;
    band_intensity_from(&series, band)
}

/// Band intensity from an already computed series holding all members.
pub fn band_intensity_from<T: Real>(series: &ChannelProbabilitySeries<T>, band: &BandSpec) -> Result<Vec<T>> {
    let mut total = vec![T::zero(); series.grid.len()];
    for &i in &band.member_channels {
        for (s, v) in total.iter_mut().zip(channel_intensity(series, i)?) {
            *s = *s + v;
        }
    }
    Ok(total)
}

/// CSV with columns `t, w_1..w_N, I_1..I_N` (1-based model channel numbers).
/// Intensity columns are left empty on grids shorter than 3 points.
pub fn write_channel_csv<T: Real, W: Write>(series: &ChannelProbabilitySeries<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["t".to_string()];
    header.extend(series.channels.iter().map(|i| format!("w_{}", i + 1)));
    header.extend(series.channels.iter().map(|i| format!("I_{}", i + 1)));
    w.write_record(&header).map_err(io)?;
    let intensities: Option<Vec<Vec<T>>> = series
        .channels
        .iter()
        .map(|&i| channel_intensity(series, i).ok())
        .collect();
    for (k, t) in series.grid.points().iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(series.w.iter().map(|w| w[k].to_string()));
        for c in 0..series.channels.len() {
            row.push(intensities.as_ref().map_or(String::new(), |v| v[c][k].to_string()));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
