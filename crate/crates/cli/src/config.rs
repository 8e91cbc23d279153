//! JSON run configurations, one per subcommand. Unknown keys are rejected and
//! errors name the offending key path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use decaylab::amplitude::{AmplitudeMethod, DerivativeMethod};
use decaylab::{BandSpec, ChannelOptions, CurveSource, FitKind, FitModel, IrfSpec, ModelDocument, TimeGrid};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, Result};

pub fn load<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::config(format!("{}: {key}", path.display()), e.into_inner().to_string())
    })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Uniform { start: f64, stop: f64, n: usize },
    Log { start: f64, stop: f64, n: usize },
    Points(Vec<f64>),
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        let g = match self {
            GridSpec::Uniform { start, stop, n } => TimeGrid::uniform(*start, *stop, *n),
            GridSpec::Log { start, stop, n } => TimeGrid::logarithmic(*start, *stop, *n),
            GridSpec::Points(p) => TimeGrid::explicit(p.clone()),
        };
        g.map_err(|e| CliError::config("grid", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyGrid {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub model: ModelDocument,
    pub energy: EnergyGrid,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalConfig {
    pub model: ModelDocument,
    pub grid: GridSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub method: AmplitudeMethod,
    #[serde(default)]
    pub derivative: DerivativeMethod,
    /// Coarse-graining width for the trend of P; defaults to 2 pi / (M - E_th).
    #[serde(default)]
    pub coarse_width: Option<f64>,
    /// Window for the oscillation count; defaults to [t_to, 10 t_to].
    #[serde(default)]
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultichannelConfig {
    pub model: ModelDocument,
    pub grid: GridSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub options: ChannelOptions,
    #[serde(default)]
    pub bands: Vec<BandSpec>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binning {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl Default for Binning {
    fn default() -> Self {
        Binning { start: 0.0, stop: 96.0, n: 1000 }
    }
}

fn default_label() -> String {
    "1".into()
}

fn ten_minutes() -> f64 {
    600.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub curve: CurveSource,
    /// One detector per band, all fed by the same multichannel model.
    #[serde(default)]
    pub bands: Vec<BandSpec>,
    /// Detector label when no bands are given.
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default)]
    pub binning: Binning,
    #[serde(default)]
    pub irf: Option<IrfSpec>,
    /// Expected counts scale with duration_s / reference_duration_s.
    #[serde(default = "ten_minutes")]
    pub duration_s: f64,
    #[serde(default = "ten_minutes")]
    pub reference_duration_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fit_range() -> (f64, f64) {
    (0.960, 94.752)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub histogram: PathBuf,
    pub kind: FitKind,
    #[serde(default = "default_fit_range")]
    pub range: (f64, f64),
    /// Starting values by parameter name; all five are required when given.
    #[serde(default)]
    pub init: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub histogram: PathBuf,
    #[serde(default = "default_fit_range")]
    pub range: (f64, f64),
}

fn default_t_column() -> String {
    "t".into()
}

fn default_y_column() -> String {
    "I".into()
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AsymptoteInput {
    /// Turnover of a fitted two-exponential or nonexponential model.
    FitModel(FitModel),
    /// Turnover, components and tail exponent of a spectral model.
    SpectralModel(ModelDocument),
    /// Power-law fit of a CSV column.
    Series {
        path: PathBuf,
        #[serde(default = "default_t_column")]
        t_column: String,
        #[serde(default = "default_y_column")]
        y_column: String,
    },
    /// Power-law fit of histogram counts against t - t0.
    Histogram(PathBuf),
}

fn one() -> f64 {
    1.0
}

fn tail_points() -> usize {
    60
}

fn tail_tol() -> f64 {
    1e-10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoteConfig {
    pub input: AsymptoteInput,
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default = "one")]
    pub turnover_ratio: f64,
    /// Weight log-residuals by y (series and histogram inputs).
    #[serde(default)]
    pub weighted: bool,
    #[serde(default = "tail_tol")]
    pub tol: f64,
    /// Log-spaced intensity samples for spectral-model tails.
    #[serde(default = "tail_points")]
    pub n_points: usize,
}

/// Paths inside a config are relative to the config file.
pub fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms_parse() {
        let g: GridSpec = serde_json::from_str(r#"{"log": {"start": 1.0, "stop": 100.0, "n": 3}}"#).unwrap();
        let pts = g.build().unwrap().points().to_vec();
        assert!((pts[1] - 10.0).abs() < 1e-12);
        let g: GridSpec = serde_json::from_str(r#"{"points": [0.0, 0.5, 2.0]}"#).unwrap();
        assert_eq!(g.build().unwrap().len(), 3);
        let g: GridSpec = serde_json::from_str(r#"{"uniform": {"start": 1.0, "stop": 0.0, "n": 3}}"#).unwrap();
        assert!(matches!(g.build(), Err(CliError::Config { .. })));
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"histogram": "h.csv", "kind": "nonexponential", "range": [1, 2], "extra": 0}"#).unwrap();
        match load::<FitConfig>(&p) {
            Err(CliError::Config { path, .. }) => assert!(path.ends_with("extra"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let c: SynthConfig = serde_json::from_str(
            r#"{"curve": {"source": "fit_model", "model": {"kind": "two_exponential",
                "params": {"C1": 1, "tau1": 1, "C2": 1, "tau2": 2, "b": 0}, "t0": 0.432}}}"#,
        )
        .unwrap();
        assert_eq!((c.binning.n, c.label.as_str(), c.seed), (1000, "1", 0));
        assert_eq!(c.duration_s, c.reference_duration_s);
    }

    #[test]
    fn relative_paths_follow_the_config() {
        assert_eq!(resolve(Path::new("/a/b/c.json"), Path::new("h.csv")), PathBuf::from("/a/b/h.csv"));
        assert_eq!(resolve(Path::new("c.json"), Path::new("/x/h.csv")), PathBuf::from("/x/h.csv"));
    }
}
