pub mod amplitude;
pub mod asymptotics;
pub mod error;
pub mod fitting;
pub mod multichannel;
pub mod quad;
pub mod scalar;
pub mod spectral;
pub mod tcspc;
pub mod term;

#[cfg(test)]
mod oracle;

pub use error::{Error, Result};
pub use scalar::Real;

pub use fitting::{compare_models, fit, model_eval, FitKind, FitModel, FitResult, ModelComparison};
pub use multichannel::{BandSpec, ChannelMethod, ChannelOptions, Coupling};
pub use tcspc::{CurveSource, DecayHistogram, HistogramMeta, IrfSpec, QmCurve};

/// Double-precision instances of the generic types.
pub type SpectralModel = spectral::SpectralModel<f64>;
pub type SingleChannelModel = spectral::SingleChannelModel<f64>;
pub type BreitWignerModel = spectral::BreitWignerModel<f64>;
pub type MultiChannelModel = spectral::MultiChannelModel<f64>;
pub type ChannelSpec = spectral::ChannelSpec<f64>;
pub type ModelDocument = spectral::ModelDocument<f64>;
pub type UnitsConfig = spectral::UnitsConfig<f64>;
pub type ThresholdTerm = term::ThresholdTerm<f64>;
pub type TimeGrid = amplitude::TimeGrid<f64>;
pub type AmplitudeSeries = amplitude::AmplitudeSeries<f64>;
pub type IntensitySeries = amplitude::IntensitySeries<f64>;
pub type AmplitudeReport = amplitude::AmplitudeReport<f64>;
pub type ChannelProbabilitySeries = multichannel::ChannelProbabilitySeries<f64>;
pub type PowerLawEstimate = asymptotics::PowerLawEstimate<f64>;
pub type ExponentialEstimate = asymptotics::ExponentialEstimate<f64>;
pub type TurnoverReport = asymptotics::TurnoverReport<f64>;
pub type DecayComponents = asymptotics::DecayComponents<f64>;
