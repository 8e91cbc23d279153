//! Spectral densities of unstable states: single channel with threshold
//! factor, Breit-Wigner, and multichannel sums sharing one resonance.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::term::ThresholdTerm;

fn one<T: Real>() -> T {
    T::one()
}

/// Physical units used at I/O boundaries. Internally hbar = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct UnitsConfig<T> {
    #[serde(default = "one")]
    pub hbar: T,
    #[serde(default = "one")]
    pub time_unit_ns: T,
}

impl<T: Real> Default for UnitsConfig<T> {
    fn default() -> Self {
        UnitsConfig {
            hbar: T::one(),
            time_unit_ns: T::one(),
        }
    }
}

impl<T: Real> UnitsConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > T::zero() && self.hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.time_unit_ns > T::zero() && self.time_unit_ns.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time_unit_ns must be positive, got {}",
                self.time_unit_ns
            )));
        }
        Ok(())
    }
}

/// `N E^gamma / ((E - E0)^2 + Gamma^2/4)` above a threshold at E = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct SingleChannelModel<T> {
    pub gamma: T,
    #[serde(rename = "E0")]
    pub e0: T,
    #[serde(rename = "Gamma")]
    pub width: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<T>,
}

/// Lorentzian `N / ((E - M)^2 + Gamma^2/4)`, optionally cut off below `threshold`.
/// A missing threshold means the density extends to -inf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct BreitWignerModel<T> {
    #[serde(rename = "M")]
    pub mass: T,
    #[serde(rename = "Gamma")]
    pub width: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct ChannelSpec<T> {
    pub c: T,
    pub gamma: T,
    #[serde(rename = "E_th")]
    pub threshold: T,
    #[serde(default)]
    pub label: String,
}

impl<T: Real> ChannelSpec<T> {
    pub fn new(c: T, gamma: T, threshold: T) -> Self {
        ChannelSpec {
            c,
            gamma,
            threshold,
            label: String::new(),
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Partial width `c (E - E_th)^gamma` above threshold, zero below.
    pub fn width_at(&self, e: T) -> T {
        if e > self.threshold {
            self.c * (e - self.threshold).powf(self.gamma)
        } else {
            T::zero()
        }
    }
}

/// Channels share the denominator `(E - M)^2 + Gamma^2/4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
pub struct MultiChannelModel<T> {
    pub channels: Vec<ChannelSpec<T>>,
    #[serde(rename = "M")]
    pub mass: T,
    #[serde(rename = "Gamma")]
    pub width: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum SpectralModel<T> {
    Single(SingleChannelModel<T>),
    BreitWigner(BreitWignerModel<T>),
    Multi(MultiChannelModel<T>),
}

impl<T: Real> From<SingleChannelModel<T>> for SpectralModel<T> {
    fn from(m: SingleChannelModel<T>) -> Self {
        SpectralModel::Single(m)
    }
}

impl<T: Real> From<BreitWignerModel<T>> for SpectralModel<T> {
    fn from(m: BreitWignerModel<T>) -> Self {
        SpectralModel::BreitWigner(m)
    }
}

impl<T: Real> From<MultiChannelModel<T>> for SpectralModel<T> {
    fn from(m: MultiChannelModel<T>) -> Self {
        SpectralModel::Multi(m)
    }
}

/// JSON document form: the tagged model plus a `units` object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ModelDocument<T> {
    #[serde(flatten)]
    pub model: SpectralModel<T>,
    #[serde(default)]
    pub units: UnitsConfig<T>,
}

impl<T: Real> SingleChannelModel<T> {
    pub fn new(gamma: T, e0: T, width: T) -> Self {
        SingleChannelModel {
            gamma,
            e0,
            width,
            norm: None,
        }
    }
}

impl<T: Real> BreitWignerModel<T> {
    pub fn new(mass: T, width: T) -> Self {
        BreitWignerModel {
            mass,
            width,
            threshold: None,
            norm: None,
        }
    }

    pub fn with_threshold(mut self, threshold: T) -> Self {
        self.threshold = Some(threshold);
        self
    }
}

impl<T: Real> MultiChannelModel<T> {
    pub fn new(channels: Vec<ChannelSpec<T>>, mass: T, width: T) -> Self {
        MultiChannelModel {
            channels,
            mass,
            width,
            norm: None,
        }
    }

    /// Density term of channel `i`; requires a normalized model.
    pub fn channel_term(&self, i: usize) -> Result<ThresholdTerm<T>> {
        let norm = self.norm.ok_or(Error::NotNormalized)?;
        let ch = self.channel(i)?;
        Ok(ThresholdTerm::finite(norm * ch.c, ch.threshold, ch.gamma, self.mass, self.width))
    }

    pub fn channel(&self, i: usize) -> Result<&ChannelSpec<T>> {
        self.channels.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "channel index {i} out of range for {} channels",
                self.channels.len()
            ))
        })
    }

    /// Density of channel `i` alone.
    pub fn channel_rho(&self, i: usize, e: T) -> Result<T> {
        let term = self.channel_term(i)?;
        if e == self.channels[i].threshold && self.channels[i].gamma < T::zero() {
            return Err(Error::Domain(format!("density undefined at threshold E = {e}")));
        }
        Ok(term.density(e))
    }

    /// Integral of the channel-`i` density, the asymptotic decay probability
    /// into that channel.
    pub fn branching_ratio(&self, i: usize, tol: T) -> Result<T> {
        Ok(self.channel_term(i)?.mass_integral(tol)?.value)
    }

    pub fn min_gamma(&self) -> T {
        self.channels
            .iter()
            .map(|c| c.gamma)
            .fold(T::infinity(), |a, b| a.min(b))
    }
}

fn check_width<T: Real>(width: T) -> Result<()> {
    if !(width > T::zero() && width.is_finite()) {
        return Err(Error::InvalidArgument(format!("width Gamma must be positive, got {width}")));
    }
    Ok(())
}

fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    if !(gamma > -T::one() && gamma < T::one()) {
        return Err(Error::NonNormalizable {
            gamma: gamma.to_f64_lossy(),
        });
    }
    Ok(())
}

fn check_finite<T: Real>(name: &str, v: T) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")));
    }
    Ok(())
}

impl<T: Real> SpectralModel<T> {
    /// Checks the type invariants (independent of normalization).
    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralModel::Single(m) => {
                check_width(m.width)?;
                check_finite("E0", m.e0)?;
                check_gamma(m.gamma)?;
            }
            SpectralModel::BreitWigner(m) => {
                check_width(m.width)?;
                check_finite("M", m.mass)?;
                if let Some(th) = m.threshold {
                    check_finite("threshold", th)?;
                }
            }
            SpectralModel::Multi(m) => {
                check_width(m.width)?;
                check_finite("M", m.mass)?;
                if m.channels.is_empty() {
                    return Err(Error::InvalidArgument("multichannel model has no channels".into()));
                }
                for ch in &m.channels {
                    if !(ch.c > T::zero() && ch.c.is_finite()) {
                        return Err(Error::InvalidArgument(format!("coupling c must be positive, got {}", ch.c)));
                    }
                    if !(ch.threshold >= T::zero() && ch.threshold.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "threshold E_th must be finite and non-negative, got {}",
                            ch.threshold
                        )));
                    }
                    check_gamma(ch.gamma)?;
                }
            }
        }
        if let Some(n) = self.norm() {
            if !(n > T::zero() && n.is_finite()) {
                return Err(Error::InvalidArgument(format!("norm must be positive, got {n}")));
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> Option<T> {
        match self {
            SpectralModel::Single(m) => m.norm,
            SpectralModel::BreitWigner(m) => m.norm,
            SpectralModel::Multi(m) => m.norm,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.norm().is_some()
    }

    fn with_norm(&self, norm: T) -> Self {
        let mut out = self.clone();
        match &mut out {
            SpectralModel::Single(m) => m.norm = Some(norm),
            SpectralModel::BreitWigner(m) => m.norm = Some(norm),
            SpectralModel::Multi(m) => m.norm = Some(norm),
        }
        out
    }

    pub fn width(&self) -> T {
        match self {
            SpectralModel::Single(m) => m.width,
            SpectralModel::BreitWigner(m) => m.width,
            SpectralModel::Multi(m) => m.width,
        }
    }

    /// Peak position in absolute energy.
    pub fn mass(&self) -> T {
        match self {
            SpectralModel::Single(m) => m.e0,
            SpectralModel::BreitWigner(m) => m.mass,
            SpectralModel::Multi(m) => m.mass,
        }
    }

    /// Lowest energy carrying density; None for an unbounded Breit-Wigner.
    pub fn lowest_threshold(&self) -> Option<T> {
        match self {
            SpectralModel::Single(_) => Some(T::zero()),
            SpectralModel::BreitWigner(m) => m.threshold,
            SpectralModel::Multi(m) => m.channels.iter().map(|c| c.threshold).reduce(|a, b| a.min(b)),
        }
    }

    fn terms_with(&self, norm: T) -> Vec<ThresholdTerm<T>> {
        match self {
            SpectralModel::Single(m) => vec![ThresholdTerm::finite(norm, T::zero(), m.gamma, m.e0, m.width)],
            SpectralModel::BreitWigner(m) => vec![match m.threshold {
                Some(th) => ThresholdTerm::finite(norm, th, T::zero(), m.mass, m.width),
                None => ThresholdTerm::unbounded(norm, m.mass, m.width),
            }],
            SpectralModel::Multi(m) => m
                .channels
                .iter()
                .map(|ch| ThresholdTerm::finite(norm * ch.c, ch.threshold, ch.gamma, m.mass, m.width))
                .collect(),
        }
    }

    /// Density decomposed into threshold terms, weights including the norm.
    pub fn terms(&self) -> Result<Vec<ThresholdTerm<T>>> {
        let norm = self.norm().ok_or(Error::NotNormalized)?;
        Ok(self.terms_with(norm))
    }

    /// Returns a copy with `norm` set so that the density integrates to one.
    pub fn normalize(&self, tol: T) -> Result<Self> {
        self.validate()?;
        if !(tol > T::zero() && tol <= T::lit(1e-4)) {
            return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1e-4], got {tol}")));
        }
        let terms = self.terms_with(T::one());
        let n = T::lit(terms.len() as f64);
        let mut raw = T::zero();
        for term in &terms {
            // the raw integral is O(1/Gamma); ask for relative accuracy
            let scale = T::lit(2.0) * T::PI() / self.width() * term.weight;
            raw = raw + term.mass_integral(tol * T::lit(0.1) * scale / n)?.value;
        }
        Ok(self.with_norm(T::one() / raw))
    }

    /// Density at energy `e`. Zero below threshold.
    pub fn rho(&self, e: T) -> Result<T> {
        let terms = self.terms()?;
        let mut s = T::zero();
        for term in &terms {
            if let Some(a) = term.threshold() {
                if e == a && term.gamma < T::zero() {
                    return Err(Error::Domain(format!("density undefined at threshold E = {e}")));
                }
            }
            s = s + term.density(e);
        }
        Ok(s)
    }

    /// Boundary value `F(E + i0) = int rho(E') / (E' - E - i0) dE'`.
    pub fn stieltjes(&self, e: T) -> Result<Complex<T>> {
        let mut s = Complex::new(T::zero(), T::zero());
        for term in self.terms()? {
            s = s + term.stieltjes(e)?;
        }
        Ok(s)
    }

    /// Full-time transform `G(E) = int_0^inf A(t) e^{iEt} dt = -i F(E + i0)`.
    pub fn propagator(&self, e: T) -> Result<Complex<T>> {
        Ok(Complex::new(T::zero(), -T::one()) * self.stieltjes(e)?)
    }
}

/// Free-function forms of the model operations.
pub fn normalize<T: Real>(model: &SpectralModel<T>, tol: T) -> Result<SpectralModel<T>> {
    model.normalize(tol)
}

pub fn rho_eval<T: Real>(model: &SpectralModel<T>, e: T) -> Result<T> {
    model.rho(e)
}

pub fn channel_width<T: Real>(ch: &ChannelSpec<T>, e: T) -> T {
    ch.width_at(e)
}

pub fn branching_ratio<T: Real>(model: &MultiChannelModel<T>, i: usize, tol: T) -> Result<T> {
    model.branching_ratio(i, tol)
}
