//! Synthetic TCSPC histograms: ideal curves, IRF convolution, Poisson
//! realizations and the CSV histogram format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::amplitude::{survival_amplitude_with, survival_probability, AmplitudeMethod, TimeGrid};
use crate::error::{Error, Result};
use crate::fitting::{model_eval, FitKind, FitModel};
use crate::multichannel::{channel_probabilities, BandSpec, ChannelOptions};
use crate::spectral::SpectralModel;

pub const FORMAT_HEADER: &str = "# decaylab-histogram v1";
pub const DEFAULT_BIN_WIDTH_NS: f64 = 0.096;
pub const DEFAULT_N_BINS: usize = 1000;
/// Widest sub-interval of the midpoint rule inside one bin (ns).
pub const MAX_SUBBIN_NS: f64 = 0.1;
/// Rise width (ns) of the Gaussian flank drawn before t0.
pub const RISE_SIGMA_NS: f64 = 0.1;
/// The bin holding t0 is at least this factor above the bin after it.
pub const PEAK_MARGIN: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramMeta {
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    /// Echo of whatever produced the curve (model parameters, band, ...).
    pub source: serde_json::Value,
    pub units: String,
    pub created: Option<String>,
}

impl Default for HistogramMeta {
    fn default() -> Self {
        HistogramMeta {
            duration_s: None,
            seed: None,
            source: serde_json::Value::Null,
            units: "ns".into(),
            created: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub channel_label: String,
    /// First bin holding the maximum count.
    pub t0_index: usize,
    pub meta: HistogramMeta,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::InvalidArgument("need at least two bin edges".into()));
    }
    for (k, w) in edges.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bin edges must be finite and strictly increasing (edge {k}: {} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl DecayHistogram {
    pub fn new(bin_edges: Vec<f64>, counts: Vec<u64>, label: impl Into<String>, meta: HistogramMeta) -> Result<Self> {
        check_edges(&bin_edges)?;
        if counts.len() + 1 != bin_edges.len() {
            return Err(Error::LengthMismatch { left: counts.len() + 1, right: bin_edges.len() });
        }
        let t0_index = argmax(&counts);
        Ok(DecayHistogram { bin_edges, counts, channel_label: label.into(), t0_index, meta })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Center of the maximum bin, the fixed time origin of every fit.
    pub fn t0(&self) -> f64 {
        0.5 * (self.bin_edges[self.t0_index] + self.bin_edges[self.t0_index + 1])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn argmax(counts: &[u64]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

pub fn uniform_edges(lo: f64, hi: f64, n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot bin ({lo}, {hi}) into {n_bins} bins")));
    }
    let w = (hi - lo) / n_bins as f64;
    Ok((0..=n_bins).map(|k| if k == n_bins { hi } else { lo + k as f64 * w }).collect())
}

/// 96 ps bins over [0, 96] ns.
pub fn default_edges() -> Vec<f64> {
    uniform_edges(0.0, DEFAULT_BIN_WIDTH_NS * DEFAULT_N_BINS as f64, DEFAULT_N_BINS).expect("valid default binning")
}

fn default_tol() -> f64 {
    1e-8
}

fn default_time_unit() -> f64 {
    1.0
}

fn default_channel_options() -> ChannelOptions {
    ChannelOptions { amplitude: AmplitudeMethod::Contour, ..ChannelOptions::product() }
}

/// Decay law from a spectral model, placed at `t0_ns` and scaled to counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmCurve {
    pub model: SpectralModel<f64>,
    /// Channels observed by the detector (multichannel models only). Without
    /// a band every decay is counted.
    #[serde(default)]
    pub band: Option<BandSpec>,
    /// Expected number of detected decays over all time.
    pub scale: f64,
    #[serde(default)]
    pub background: f64,
    pub t0_ns: f64,
    /// Length of one model time unit in ns.
    #[serde(default = "default_time_unit")]
    pub time_unit_ns: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_channel_options")]
    pub channel: ChannelOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CurveSource {
    /// A two-exponential or nonexponential fit model, in counts per bin.
    FitModel { model: FitModel },
    Qm(QmCurve),
}

/// Expected counts per bin.
pub fn ideal_curve(source: &CurveSource, bin_edges: &[f64]) -> Result<Vec<f64>> {
    check_edges(bin_edges).map_err(|e| Error::InvalidParams(e.to_string()))?;
    match source {
        CurveSource::FitModel { model } => fit_model_curve(model, bin_edges),
        CurveSource::Qm(q) => qm_curve(q, bin_edges),
    }
}

fn fit_model_curve(model: &FitModel, edges: &[f64]) -> Result<Vec<f64>> {
    model.validate()?;
    let t0 = model.t0;
    let n = edges.len() - 1;
    if !(t0 >= edges[0] && t0 < edges[n]) {
        return Err(Error::InvalidParams(format!("t0 = {t0} lies outside the bins ({}, {})", edges[0], edges[n])));
    }
    let peak = edges.partition_point(|&e| e <= t0) - 1;
    let b = model.params[4];
    let mut out = vec![0.0; n];
    for k in peak + 1..n {
        let (lo, hi) = (edges[k], edges[k + 1]);
        let m = ((hi - lo) / MAX_SUBBIN_NS - 1e-9).ceil().max(1.0) as usize;
        let h = (hi - lo) / m as f64;
        let mut s = 0.0;
        for j in 0..m {
            s += model_eval(model, lo + (j as f64 + 0.5) * h)?;
        }
        out[k] = s / m as f64;
    }
    let p = &model.params;
    let at_t0 = match model.kind {
        FitKind::TwoExponential => p[0] + p[2] + b,
        FitKind::Nonexponential => p[0] + b,
    };
    let next = if peak + 1 < n { out[peak + 1] } else { 0.0 };
    out[peak] = at_t0.max(PEAK_MARGIN * next);
    for k in 0..peak {
        let c = 0.5 * (edges[k] + edges[k + 1]);
        out[k] = b + (out[peak] - b) * (-(c - t0).powi(2) / (2.0 * RISE_SIGMA_NS * RISE_SIGMA_NS)).exp();
    }
    if out.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParams("model gives negative or non-finite expected counts".into()));
    }
    Ok(out)
}

fn qm_curve(q: &QmCurve, edges: &[f64]) -> Result<Vec<f64>> {
    let bad = |m: String| Err(Error::InvalidParams(m));
    if !(q.scale >= 0.0 && q.scale.is_finite()) {
        return bad(format!("scale must be non-negative, got {}", q.scale));
    }
    if !(q.background >= 0.0 && q.background.is_finite()) {
        return bad(format!("background must be non-negative, got {}", q.background));
    }
    if !(q.time_unit_ns > 0.0 && q.time_unit_ns.is_finite()) || !q.t0_ns.is_finite() {
        return bad("time_unit_ns must be positive and t0_ns finite".into());
    }
    let n = edges.len() - 1;
    if q.t0_ns >= edges[n] {
        return bad(format!("t0 = {} lies after the last bin edge {}", q.t0_ns, edges[n]));
    }
    let model = if q.model.is_normalized() { q.model.clone() } else { q.model.normalize(q.tol.min(1e-4))? };
    // model times of t0 and every edge after it
    let first = edges.partition_point(|&e| e <= q.t0_ns);
    let mut times = vec![0.0];
    times.extend(edges[first..].iter().map(|&e| (e - q.t0_ns) / q.time_unit_ns));
    let grid = TimeGrid::explicit(times)?;
    // decayed fraction D(t) seen by the detector, D(t0) = 0
    let decayed: Vec<f64> = match (&model, &q.band) {
        (SpectralModel::Multi(m), Some(band)) => {
            band.validate(m.channels.len())?;
            let series = channel_probabilities(m, &grid, q.tol, q.channel).or_else(|e| match e {
                Error::Domain(_) => {
                    channel_probabilities(m, &grid, q.tol, ChannelOptions { amplitude: AmplitudeMethod::Direct, ..q.channel })
                }
                e => Err(e),
            })?;
            let mut d = vec![0.0; grid.len()];
            for &i in &band.member_channels {
                for (acc, w) in d.iter_mut().zip(series.channel(i)?) {
                    *acc += w;
                }
            }
            d
        }
        (_, Some(_)) => return bad("a band needs a multichannel model".into()),
        (_, None) => {
            let method = q.channel.amplitude;
            let amp = survival_amplitude_with(&model, &grid, q.tol, method).or_else(|e| match e {
                Error::Domain(_) if method == AmplitudeMethod::Contour => {
                    survival_amplitude_with(&model, &grid, q.tol, AmplitudeMethod::Direct)
                }
                e => Err(e),
            })?;
            survival_probability(&amp).iter().map(|p| 1.0 - p).collect()
        }
    };
    let mut out = vec![q.background; n];
    for k in first.saturating_sub(1)..n {
        // grid index of the lower and upper bin edge
        let lo = if k + 1 == first { 0 } else { k + 1 - first };
        let hi = k + 2 - first;
        // a band can lose population over a bin (the product route and
        // interference both allow it); no negative photon counts
        out[k] += q.scale * (decayed[hi] - decayed[lo]).max(0.0);
    }
    if out.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParams("model gives negative or non-finite expected counts".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IrfSpec {
    /// Gaussian of the given FWHM in ns; 0 is a delta.
    Gaussian { fwhm: f64 },
    /// `(t, weight)` pairs, t in ns relative to the prompt.
    Tabulated { table: Vec<(f64, f64)> },
}

fn uniform_width(edges: &[f64]) -> Result<f64> {
    check_edges(edges)?;
    let w0 = edges[1] - edges[0];
    if edges.windows(2).any(|w| ((w[1] - w[0]) - w0).abs() > 1e-9 * w0.max(1.0)) {
        return Err(Error::InvalidArgument("IRF convolution needs uniform bins".into()));
    }
    Ok(w0)
}

/// Normalized kernel as (bin offset, weight) pairs. The Gaussian is sampled
/// at bin spacing; the curve it acts on is already bin-averaged.
pub fn irf_kernel(irf: &IrfSpec, bin_width: f64, n_bins: usize) -> Result<Vec<(i64, f64)>> {
    let mut kernel: BTreeMap<i64, f64> = BTreeMap::new();
    match irf {
        IrfSpec::Gaussian { fwhm } => {
            if !(*fwhm >= 0.0 && fwhm.is_finite()) {
                return Err(Error::InvalidParams(format!("IRF fwhm must be non-negative, got {fwhm}")));
            }
            if *fwhm == 0.0 {
                return Ok(vec![(0, 1.0)]);
            }
            let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
            let half = (5.0 * sigma / bin_width).ceil() as usize;
            if half > n_bins / 4 {
                return Err(Error::KernelTooWide { kernel_bins: 2 * half + 1, n_bins });
            }
            for j in -(half as i64)..=half as i64 {
                let x = j as f64 * bin_width / sigma;
                kernel.insert(j, (-0.5 * x * x).exp());
            }
        }
        IrfSpec::Tabulated { table } => {
            for &(t, w) in table {
                if !(w >= 0.0 && w.is_finite() && t.is_finite()) {
                    return Err(Error::InvalidParams(format!("IRF table entry ({t}, {w}) is invalid")));
                }
                *kernel.entry((t / bin_width).round() as i64).or_insert(0.0) += w;
            }
            let span = kernel.keys().map(|j| j.unsigned_abs() as usize).max().unwrap_or(0);
            if span > n_bins / 4 {
                return Err(Error::KernelTooWide { kernel_bins: 2 * span + 1, n_bins });
            }
        }
    }
    let total: f64 = kernel.values().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParams("IRF weights sum to zero".into()));
    }
    Ok(kernel.into_iter().map(|(j, w)| (j, w / total)).collect())
}

/// Discrete convolution with the binned IRF. Shifted contributions that
/// would leave the window pile up in the first or last bin, so the total is
/// preserved.
pub fn irf_convolve(curve: &[f64], irf: &IrfSpec, bin_edges: &[f64]) -> Result<Vec<f64>> {
    if curve.len() + 1 != bin_edges.len() {
        return Err(Error::LengthMismatch { left: curve.len() + 1, right: bin_edges.len() });
    }
    let width = uniform_width(bin_edges)?;
    let n = curve.len();
    let kernel = irf_kernel(irf, width, n)?;
    if kernel.len() == 1 && kernel[0].0 == 0 {
        return Ok(curve.to_vec());
    }
    let mut out = vec![0.0; n];
    for (k, &c) in curve.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for &(j, w) in &kernel {
            let dst = (k as i64 + j).clamp(0, n as i64 - 1) as usize;
            out[dst] += c * w;
        }
    }
    Ok(out)
}

/// Independent Poisson draws per bin from a ChaCha8 stream seeded by `seed`.
pub fn synth_histogram(curve: &[f64], bin_edges: &[f64], seed: u64, label: &str) -> Result<DecayHistogram> {
    if let Some((k, v)) = curve.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidParams(format!("expected count {v} in bin {k} is not a finite non-negative number")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = curve
        .iter()
        .map(|&mean| {
            if mean == 0.0 {
                0
            } else {
                Poisson::new(mean).expect("positive finite mean").sample(&mut rng) as u64
            }
        })
        .collect();
    let meta = HistogramMeta { seed: Some(seed), ..HistogramMeta::default() };
    DecayHistogram::new(bin_edges.to_vec(), counts, label, meta)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    channel_label: String,
    #[serde(flatten)]
    meta: HistogramMeta,
}

/// `<stem>.meta.json` next to the CSV file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write_histogram(path: &Path, h: &DecayHistogram) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{FORMAT_HEADER}")?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["t_lo", "t_hi", "counts"]).map_err(io)?;
        for (k, c) in h.counts.iter().enumerate() {
            w.write_record([h.bin_edges[k].to_string(), h.bin_edges[k + 1].to_string(), c.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    let side = Sidecar { channel_label: h.channel_label.clone(), meta: h.meta.clone() };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

fn parse_err(line: u64, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, column, msg: msg.into() }
}

/// Parses the CSV body; the sidecar is optional.
pub fn parse_histogram(text: &str) -> Result<(Vec<f64>, Vec<u64>)> {
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or("").trim_end_matches('\r');
    if first != FORMAT_HEADER {
        return Err(parse_err(1, 1, format!("expected '{FORMAT_HEADER}'")));
    }
    let body = lines.next().unwrap_or("");
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| parse_err(2, 1, e.to_string()))?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>();
    if header != ["t_lo", "t_hi", "counts"] {
        return Err(parse_err(2, 1, "expected header 't_lo,t_hi,counts'"));
    }
    let mut edges: Vec<f64> = Vec::new();
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() + 1);
            parse_err(line, 1, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        let real = |col: usize| -> Result<f64> {
            let s = rec.get(col).unwrap_or("").trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, col + 1, format!("'{s}' is not a finite number"))),
            }
        };
        let lo = real(0)?;
        let hi = real(1)?;
        let c_str = rec.get(2).unwrap_or("").trim();
        let c = c_str
            .parse::<u64>()
            .map_err(|_| parse_err(line, 3, format!("'{c_str}' is not a non-negative integer count")))?;
        if !(hi > lo) {
            return Err(parse_err(line, 2, format!("bin edges must increase ({lo} then {hi})")));
        }
        match edges.last() {
            None => edges.push(lo),
            Some(&prev) if prev == lo => {}
            Some(&prev) => {
                let msg = if lo < prev { "bin edges decrease" } else { "bins are not contiguous" };
                return Err(parse_err(line, 1, format!("{msg}: t_lo {lo} after t_hi {prev}")));
            }
        }
        edges.push(hi);
        counts.push(c);
    }
    if counts.is_empty() {
        return Err(parse_err(3, 1, "histogram has no bins"));
    }
    Ok((edges, counts))
}

pub fn read_histogram(path: &Path) -> Result<DecayHistogram> {
    let text = fs::read_to_string(path)?;
    let (edges, counts) = parse_histogram(&text)?;
    let side = sidecar_path(path);
    let (label, meta) = if side.exists() {
        let s: Sidecar = serde_json::from_str(&fs::read_to_string(side)?)?;
        (s.channel_label, s.meta)
    } else {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        (stem, HistogramMeta::default())
    };
    DecayHistogram::new(edges, counts, label, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multichannel::BandSpec;
    use crate::spectral::{ChannelSpec, MultiChannelModel, SingleChannelModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_ch1() -> FitModel {
        FitModel::nonexponential(692886.0, 0.44802, 2929.81, 1.5469, 77.03, 0.432)
    }

    #[test]
    fn default_binning() {
        let e = default_edges();
        assert_eq!(e.len(), 1001);
        assert_relative_eq!(e[10], 0.96, max_relative = 1e-12);
        assert_relative_eq!(e[987], 94.752, max_relative = 1e-12);
    }

    #[test]
    fn pure_exponential_bins() {
        let e = default_edges();
        let m = FitModel::two_exponential(1000.0, 2.0, 0.0, 5.0, 0.0, 0.432);
        let c = ideal_curve(&CurveSource::FitModel { model: m }, &e).unwrap();
        for k in 5..900 {
            assert_relative_eq!(c[k + 1] / c[k], (-0.096f64 / 2.0).exp(), max_relative = 1e-12);
        }
        assert_eq!(argmax_f(&c), 4);
    }

    fn argmax_f(c: &[f64]) -> usize {
        (0..c.len()).max_by(|&a, &b| c[a].partial_cmp(&c[b]).unwrap()).unwrap()
    }

    #[test]
    fn pure_power_bins() {
        let e = default_edges();
        let m = FitModel::nonexponential(0.0, 1.0, 500.0, 1.5, 0.0, 0.432);
        let c = ideal_curve(&CurveSource::FitModel { model: m }, &e).unwrap();
        for k in [10usize, 100, 500] {
            let t = 0.5 * (e[k] + e[k + 1]) - 0.432;
            assert_relative_eq!(c[k], 500.0 * t.powf(-1.5), max_relative = 1e-12);
        }
        assert_eq!(argmax_f(&c), 4);
    }

    #[test]
    fn reference_ratio_at_2_and_20_ns() {
        let e = default_edges();
        let c = ideal_curve(&CurveSource::FitModel { model: reference_ch1() }, &e).unwrap();
        let k2 = 20; // [1.920, 2.016)
        let k20 = 208; // [19.968, 20.064)
        let f = |t: f64| 692886.0 * (-(t - 0.432) / 0.44802).exp() + 2929.81 * (t - 0.432).powf(-1.5469) + 77.03;
        let (t2, t20) = (0.5 * (e[k2] + e[k2 + 1]), 0.5 * (e[k20] + e[k20 + 1]));
        assert_relative_eq!(c[k2] / c[k20], f(t2) / f(t20), max_relative = 1e-12);
        assert_relative_eq!(c[k2] / c[k20], 226.069959585603, max_relative = 1e-12);
    }

    #[test]
    fn t0_outside_bins_is_rejected() {
        let m = FitModel { t0: 200.0, ..reference_ch1() };
        assert!(matches!(ideal_curve(&CurveSource::FitModel { model: m }, &default_edges()), Err(Error::InvalidParams(_))));
    }

    fn q_model() -> SpectralModel<f64> {
        SingleChannelModel::new(0.0, 50.0, 1.0).into()
    }

    #[test]
    fn qm_curve_sums_to_decayed_fraction() {
        let e = uniform_edges(0.0, 40.0, 400).unwrap();
        let q = QmCurve {
            model: q_model(),
            band: None,
            scale: 1e6,
            background: 0.0,
            t0_ns: 0.3,
            time_unit_ns: 1.0,
            tol: 1e-9,
            channel: default_channel_options(),
        };
        let c = ideal_curve(&CurveSource::Qm(q), &e).unwrap();
        assert_eq!(c[0], 0.0);
        assert_eq!(c[2], 0.0);
        // bin [9.9, 10.0) ns holds P(9.6) - P(9.7) in model time
        let norm = q_model().normalize(1e-9).unwrap();
        let p = |t: f64| crate::amplitude::amplitude_at(&norm, t, 1e-9, AmplitudeMethod::Direct).unwrap().value.norm_sqr();
        assert_relative_eq!(c[99], 1e6 * (p(9.6) - p(9.7)), max_relative = 1e-6);
        assert_relative_eq!(c[3], 1e6 * (1.0 - p(0.1)), max_relative = 1e-6);
        let total: f64 = c.iter().sum();
        assert_relative_eq!(total, 1e6, max_relative = 1e-3);
    }

    #[test]
    fn qm_band_curves_split_the_decays() {
        let e = uniform_edges(0.0, 30.0, 300).unwrap();
        let m = MultiChannelModel::new(vec![ChannelSpec::new(1.0, -0.5, 0.0), ChannelSpec::new(1.0, 0.25, 0.0)], 5.0, 1.0);
        let mk = |band: Option<BandSpec>| QmCurve {
            model: m.clone().into(),
            band,
            scale: 1e5,
            background: 0.0,
            t0_ns: 0.0,
            time_unit_ns: 1.0,
            tol: 1e-8,
            channel: default_channel_options(),
        };
        let a = ideal_curve(&CurveSource::Qm(mk(Some(BandSpec::new("a", [0])))), &e).unwrap();
        let b = ideal_curve(&CurveSource::Qm(mk(Some(BandSpec::new("b", [1])))), &e).unwrap();
        let all = ideal_curve(&CurveSource::Qm(mk(None)), &e).unwrap();
        let mut compared = 0;
        for k in 0..300 {
            // bins where one band loses population are clamped to zero
            if a[k] > 0.0 && b[k] > 0.0 {
                assert!((a[k] + b[k] - all[k]).abs() < 1e-6 * 1e5, "bin {k}");
                compared += 1;
            }
        }
        assert!(compared > 100);
        let single = QmCurve { model: SingleChannelModel::new(0.0, 5.0, 1.0).into(), ..mk(Some(BandSpec::new("a", [0]))) };
        assert!(matches!(ideal_curve(&CurveSource::Qm(single), &e), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn delta_irf_is_identity() {
        let e = default_edges();
        let c = ideal_curve(&CurveSource::FitModel { model: reference_ch1() }, &e).unwrap();
        assert_eq!(irf_convolve(&c, &IrfSpec::Gaussian { fwhm: 0.0 }, &e).unwrap(), c);
        let tab = IrfSpec::Tabulated { table: vec![(0.01, 3.0)] };
        assert_eq!(irf_convolve(&c, &tab, &e).unwrap(), c);
    }

    #[test]
    fn irf_preserves_total_and_tail() {
        let e = default_edges();
        let m = FitModel::two_exponential(1e6, 0.448, 0.0, 1.0, 0.0, 0.432);
        let c = ideal_curve(&CurveSource::FitModel { model: m }, &e).unwrap();
        let conv = irf_convolve(&c, &IrfSpec::Gaussian { fwhm: 0.12 }, &e).unwrap();
        let (s0, s1): (f64, f64) = (c.iter().sum(), conv.iter().sum());
        assert_relative_eq!(s0, s1, max_relative = 1e-12);
        // a Gaussian shifts a pure exponential tail by exp(sigma^2 / 2 tau^2)
        let sigma = 0.12 / (8.0 * 2f64.ln()).sqrt();
        let lift = (sigma * sigma / (2.0 * 0.448 * 0.448)).exp();
        assert_relative_eq!(lift, 1.0064903, max_relative = 1e-7);
        for k in 0..e.len() - 1 {
            let t = 0.5 * (e[k] + e[k + 1]);
            if t > 2.0 && t < 20.0 {
                // sampling the kernel at 96 ps costs ~5e-4 against the continuous result
                assert_relative_eq!(conv[k] / c[k], lift, max_relative = 1e-3);
                assert!(conv[k] / c[k] - 1.0 < 1e-2);
            }
        }
    }

    #[test]
    fn irf_errors() {
        let e = uniform_edges(0.0, 4.0, 40).unwrap();
        let c = vec![1.0; 40];
        assert!(matches!(
            irf_convolve(&c, &IrfSpec::Gaussian { fwhm: 1.0 }, &e),
            Err(Error::KernelTooWide { .. })
        ));
        assert!(matches!(irf_convolve(&c, &IrfSpec::Gaussian { fwhm: -1.0 }, &e), Err(Error::InvalidParams(_))));
        let mut uneven = e.clone();
        uneven[3] += 0.05;
        assert!(matches!(irf_convolve(&c, &IrfSpec::Gaussian { fwhm: 0.1 }, &uneven), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_curve_gives_zero_counts() {
        let e = default_edges();
        let h = synth_histogram(&vec![0.0; 1000], &e, 3, "z").unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
        assert_eq!(h.t0_index, 0);
    }

    #[test]
    fn same_seed_same_histogram() {
        let e = default_edges();
        let c = ideal_curve(&CurveSource::FitModel { model: reference_ch1() }, &e).unwrap();
        let a = synth_histogram(&c, &e, 42, "1").unwrap();
        let b = synth_histogram(&c, &e, 42, "1").unwrap();
        assert_eq!(a, b);
        let d = synth_histogram(&c, &e, 43, "1").unwrap();
        assert_ne!(a.counts, d.counts);
        assert_eq!(a.t0_index, 4);
    }

    #[test]
    fn flat_million_statistics() {
        let e = default_edges();
        let h = synth_histogram(&vec![1e6; 1000], &e, 11, "flat").unwrap();
        let n = h.counts.len() as f64;
        let mean = h.counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = h.counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1e6).abs() < 3e3, "{mean}");
        assert!((0.9..=1.1).contains(&(var / mean)), "{}", var / mean);
    }

    #[test]
    fn expectation_consistency() {
        let e = uniform_edges(0.0, 20.0, 200).unwrap();
        let m = FitModel::two_exponential(500.0, 1.0, 50.0, 6.0, 2.0, 0.5);
        let c = ideal_curve(&CurveSource::FitModel { model: m }, &e).unwrap();
        let reps = 200;
        let mut sums = vec![0.0; c.len()];
        for seed in 0..reps {
            for (s, &v) in sums.iter_mut().zip(&synth_histogram(&c, &e, seed, "x").unwrap().counts) {
                *s += v as f64;
            }
        }
        let inside = sums
            .iter()
            .zip(&c)
            .filter(|(s, &mu)| (*s / reps as f64 - mu).abs() <= 3.0 * (mu / reps as f64).sqrt())
            .count();
        assert!(inside as f64 >= 0.99 * c.len() as f64, "{inside}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ch1.csv");
        let e = default_edges();
        let c = ideal_curve(&CurveSource::FitModel { model: reference_ch1() }, &e).unwrap();
        let mut h = synth_histogram(&c, &e, 5, "ch 1").unwrap();
        h.meta.source = serde_json::to_value(CurveSource::FitModel { model: reference_ch1() }).unwrap();
        h.meta.duration_s = Some(600.0);
        write_histogram(&p, &h).unwrap();
        assert!(dir.path().join("ch1.meta.json").exists());
        assert_eq!(read_histogram(&p).unwrap(), h);
        // without sidecar the label falls back to the file stem
        fs::remove_file(sidecar_path(&p)).unwrap();
        let back = read_histogram(&p).unwrap();
        assert_eq!(back.counts, h.counts);
        assert_eq!(back.channel_label, "ch1");
    }

    #[test]
    fn parse_errors_name_the_row() {
        let good = format!("{FORMAT_HEADER}\nt_lo,t_hi,counts\n0,1,5\n1,2,7\n");
        assert!(parse_histogram(&good).is_ok());
        let bad_count = good.replace("1,2,7", "1,2,x");
        assert!(matches!(parse_histogram(&bad_count), Err(Error::Parse { line: 4, column: 3, .. })));
        let short = good.replace("1,2,7", "1,2");
        assert!(matches!(parse_histogram(&short), Err(Error::Parse { line: 4, .. })));
        let decreasing = good.replace("1,2,7", "1,0.5,7");
        assert!(matches!(parse_histogram(&decreasing), Err(Error::Parse { line: 4, column: 2, .. })));
        let backwards = good.replace("1,2,7", "0.5,2,7");
        assert!(matches!(parse_histogram(&backwards), Err(Error::Parse { line: 4, column: 1, .. })));
        let gap = good.replace("1,2,7", "1.5,2,7");
        assert!(matches!(parse_histogram(&gap), Err(Error::Parse { line: 4, column: 1, .. })));
        assert!(matches!(parse_histogram("t_lo,t_hi,counts\n"), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn convolution_is_linear_and_normalized(
            x in proptest::collection::vec(0.0f64..1e4, 200),
            y in proptest::collection::vec(0.0f64..1e4, 200),
            a in 0.0f64..10.0,
            fwhm in 0.0f64..0.5,
        ) {
            let e = uniform_edges(0.0, 20.0, 200).unwrap();
            let irf = IrfSpec::Gaussian { fwhm };
            let lhs = irf_convolve(&x.iter().zip(&y).map(|(p, q)| a * p + q).collect::<Vec<_>>(), &irf, &e).unwrap();
            let cx = irf_convolve(&x, &irf, &e).unwrap();
            let cy = irf_convolve(&y, &irf, &e).unwrap();
            for k in 0..200 {
                let rhs = a * cx[k] + cy[k];
                prop_assert!((lhs[k] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            }
            let (s0, s1): (f64, f64) = (x.iter().sum(), cx.iter().sum());
            prop_assert!((s0 - s1).abs() <= 1e-9 * s0.max(1.0));
        }

        #[test]
        fn histogram_invariants(curve in proptest::collection::vec(0.0f64..100.0, 1..50), seed in any::<u64>()) {
            let e = uniform_edges(0.0, curve.len() as f64, curve.len()).unwrap();
            let h = synth_histogram(&curve, &e, seed, "p").unwrap();
            prop_assert_eq!(h.counts.len() + 1, h.bin_edges.len());
            prop_assert_eq!(h.counts[h.t0_index], *h.counts.iter().max().unwrap());
        }
    }
}
