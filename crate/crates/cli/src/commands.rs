use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use decaylab::amplitude::{
    amplitude_at, decay_intensity_with, survival_amplitude_with, AmplitudeMethod, IntensityOptions,
};
use decaylab::asymptotics::{
    decay_components, fit_power_exponent, fit_power_exponent_weighted, model_turnover, oscillation_count, trend,
    turnover_time,
};
use decaylab::fitting::{compare_models, fit, table_report, FitKind};
use decaylab::multichannel::{band_exponent, band_intensity_from, channel_probabilities, write_channel_csv};
use decaylab::spectral::SpectralModel as Model;
use decaylab::tcspc::{ideal_curve, irf_convolve, read_histogram, synth_histogram, uniform_edges, write_histogram};
use decaylab::{
    CurveSource, DecayComponents, Error as CoreError, ModelDocument, PowerLawEstimate, SpectralModel,
    TimeGrid, TurnoverReport,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::error::{CliError, Result};

pub struct Ctx {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub timestamps: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).map_err(CoreError::from)?;
        s.push('\n');
        self.write(name, s)
    }

    fn tol(&self, config: f64) -> f64 {
        self.tol.unwrap_or(config)
    }
}

fn normalized(doc: &ModelDocument, tol: f64) -> Result<SpectralModel> {
    doc.units.validate().map_err(|e| CliError::config("model.units", e.to_string()))?;
    if doc.model.is_normalized() {
        doc.model.validate()?;
        return Ok(doc.model.clone());
    }
    Ok(doc.model.normalize(tol.min(1e-4))?)
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(buf)
}

fn csv_err(e: csv::Error) -> CliError {
    CoreError::Io(std::io::Error::other(e)).into()
}

fn cell(v: Option<f64>) -> String {
    // + 0.0 folds -0 into 0
    v.map(|x| (x + 0.0).to_string()).unwrap_or_default()
}

pub fn spectral(ctx: &Ctx) -> Result<()> {
    let cfg: SpectralConfig = load(&ctx.config)?;
    let model = normalized(&cfg.model, ctx.tol(cfg.tol))?;
    let EnergyGrid { min, max, n } = cfg.energy;
    if n < 2 || !(max > min) {
        return Err(CliError::config("energy", "need n >= 2 and max > min"));
    }
    let energies: Vec<f64> = (0..n).map(|k| min + (max - min) * k as f64 / (n - 1) as f64).collect();
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        let mut header = vec!["E".to_string(), "rho".to_string()];
        if let Model::Multi(m) = &model {
            header.extend(m.channels.iter().enumerate().map(|(i, c)| match c.label.as_str() {
                "" => format!("rho_{}", i + 1),
                l => format!("rho_{l}"),
            }));
        }
        w.write_record(&header).map_err(csv_err)?;
        for &e in &energies {
            let mut row = vec![e.to_string(), cell(model.rho(e).ok())];
            if let Model::Multi(m) = &model {
                row.extend((0..m.channels.len()).map(|i| cell(m.channel_rho(i, e).ok())));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(ctx.path("spectral.csv"), e))?;
    }
    ctx.prepare()?;
    ctx.write("spectral.csv", buf)?;
    ctx.write_json("spectral.json", &json!({ "model": ModelDocument { model, units: cfg.model.units } }))?;
    Ok(())
}

#[derive(Serialize)]
struct Failure {
    t: f64,
    quantity: &'static str,
    error: String,
}

#[derive(Serialize)]
struct Oscillation {
    window: (f64, f64),
    coarse_width: f64,
    count: usize,
}

#[derive(Serialize)]
struct SurvivalSummary {
    model: ModelDocument,
    tol: f64,
    method: AmplitudeMethod,
    n_points: usize,
    turnover: Option<TurnoverReport>,
    oscillation: Option<Oscillation>,
    failures: Vec<Failure>,
}

pub fn survival(ctx: &Ctx) -> Result<()> {
    let cfg: SurvivalConfig = load(&ctx.config)?;
    let tol = ctx.tol(cfg.tol);
    let model = normalized(&cfg.model, tol)?;
    let grid = cfg.grid.build()?;
    let t = grid.points().to_vec();
    let mut failures = Vec::new();

    let amps: Vec<Option<num_complex::Complex<f64>>> = match survival_amplitude_with(&model, &grid, tol, cfg.method) {
        Ok(s) => s.values.into_iter().map(Some).collect(),
        Err(_) => t
            .iter()
            .map(|&x| match amplitude_at(&model, x, tol, cfg.method) {
                Ok(e) => Some(e.value),
                Err(e) => {
                    failures.push(Failure { t: x, quantity: "amplitude", error: e.to_string() });
                    None
                }
            })
            .collect(),
    };
    let opts = IntensityOptions { amplitude: cfg.method, derivative: cfg.derivative };
    let intensity: Vec<Option<f64>> = if t.len() < 2 {
        vec![None; t.len()]
    } else {
        match decay_intensity_with(&model, &grid, tol, opts) {
            Ok(s) => s.values.into_iter().map(Some).collect(),
            Err(_) => (0..t.len())
                .map(|k| {
                    // same neighbours, so the same finite-difference step
                    let lo = k.saturating_sub(1);
                    let hi = (k + 2).min(t.len());
                    let sub = TimeGrid::explicit(t[lo..hi].to_vec()).expect("sub-grid of a valid grid");
                    match decay_intensity_with(&model, &sub, tol, opts) {
                        Ok(s) => Some(s.values[k - lo]),
                        Err(e) => {
                            failures.push(Failure { t: t[k], quantity: "intensity", error: e.to_string() });
                            None
                        }
                    }
                })
                .collect(),
        }
    };
    let p: Vec<Option<f64>> = amps.iter().map(|a| a.map(|a| a.norm_sqr())).collect();

    let turnover = model_turnover(&model, 1.0).ok();
    let width = cfg.coarse_width.or_else(|| match model.lowest_threshold() {
        Some(th) if model.mass() > th => Some(TAU / (model.mass() - th)),
        _ => None,
    });
    let window = cfg.window.or_else(|| turnover.as_ref().map(|r| (r.t_turnover, 10.0 * r.t_turnover)));
    let mut p_trend: Vec<Option<f64>> = vec![None; t.len()];
    let mut oscillation = None;
    if let (Some(width), true) = (width, p.iter().all(Option::is_some)) {
        let pv: Vec<f64> = p.iter().map(|v| v.unwrap()).collect();
        if let Ok(tr) = trend(&t, &pv, width) {
            if let Some(window) = window {
                let idx: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= window.0 && t[k] <= window.1).collect();
                if idx.len() >= 3 {
                    let pick = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
                    let count = oscillation_count(&pick(&t), &pick(&pv), &pick(&tr))?;
                    oscillation = Some(Oscillation { window, coarse_width: width, count });
                }
            }
            p_trend = tr.into_iter().map(Some).collect();
        }
    }

    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["t", "t_ns", "re_A", "im_A", "P", "I", "P_trend"]).map_err(csv_err)?;
        for k in 0..t.len() {
            w.write_record([
                t[k].to_string(),
                (t[k] * cfg.model.units.time_unit_ns).to_string(),
                cell(amps[k].map(|a| a.re)),
                cell(amps[k].map(|a| a.im)),
                cell(p[k]),
                cell(intensity[k]),
                cell(p_trend[k]),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(ctx.path("survival.csv"), e))?;
    }
    ctx.prepare()?;
    ctx.write("survival.csv", buf)?;
    let n_failed = failures.len();
    ctx.write_json(
        "survival.json",
        &SurvivalSummary {
            model: ModelDocument { model, units: cfg.model.units },
            tol,
            method: cfg.method,
            n_points: t.len(),
            turnover,
            oscillation,
            failures,
        },
    )?;
    if n_failed > 0 {
        return Err(CliError::PartialFailure(n_failed));
    }
    Ok(())
}

pub fn multichannel(ctx: &Ctx) -> Result<()> {
    let cfg: MultichannelConfig = load(&ctx.config)?;
    let tol = ctx.tol(cfg.tol);
    let Model::Multi(model) = normalized(&cfg.model, tol)? else {
        return Err(CliError::config("model.kind", "the multichannel command needs kind = \"multi\""));
    };
    for (k, b) in cfg.bands.iter().enumerate() {
        b.validate(model.channels.len()).map_err(|e| CliError::config(format!("bands[{k}]"), e.to_string()))?;
    }
    let grid = cfg.grid.build()?;
    let series = channel_probabilities(&model, &grid, tol, cfg.options)?;

    let mut buf = Vec::new();
    write_channel_csv(&series, &mut buf)?;
    ctx.prepare()?;
    ctx.write("channels.csv", buf)?;

    let mut band_info = Vec::new();
    if !cfg.bands.is_empty() && grid.len() >= 3 {
        let curves: Vec<Vec<f64>> = cfg.bands.iter().map(|b| band_intensity_from(&series, b)).collect::<Result<_, _>>()?;
        let mut buf = Vec::new();
        {
            let mut w = csv_writer(&mut buf);
            let mut header = vec!["t".to_string()];
            header.extend(cfg.bands.iter().map(|b| format!("I_{}", b.name)));
            w.write_record(&header).map_err(csv_err)?;
            for k in 0..grid.len() {
                let mut row = vec![grid.points()[k].to_string()];
                row.extend(curves.iter().map(|c| c[k].to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| CliError::io(ctx.path("bands.csv"), e))?;
        }
        ctx.write("bands.csv", buf)?;
    }
    for b in &cfg.bands {
        band_info.push(json!({ "name": b.name, "members": b.member_channels, "beta": band_exponent(&model, b)? }));
    }
    let conservation = (0..grid.len())
        .map(|k| (series.survival[k] + series.w.iter().map(|w| w[k]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ctx.write_json(
        "channels.json",
        &json!({
            "model": ModelDocument { model: Model::Multi(model.clone()), units: cfg.model.units },
            "tol": tol,
            "method": series.method,
            "coupling": series.coupling,
            "labels": series.labels,
            "w_inf": series.w_inf,
            "max_conservation_error": conservation,
            "bands": band_info,
        }),
    )?;
    Ok(())
}

fn file_stem_for(label: &str) -> String {
    let s: String = label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    if s.is_empty() {
        "histogram".into()
    } else {
        s
    }
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let cfg: SynthConfig = load(&ctx.config)?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    if !(cfg.duration_s >= 0.0 && cfg.duration_s.is_finite()) {
        return Err(CliError::config("duration_s", "must be a non-negative number"));
    }
    if !(cfg.reference_duration_s > 0.0 && cfg.reference_duration_s.is_finite()) {
        return Err(CliError::config("reference_duration_s", "must be positive"));
    }
    let edges = uniform_edges(cfg.binning.start, cfg.binning.stop, cfg.binning.n)
        .map_err(|e| CliError::config("binning", e.to_string()))?;
    let detectors: Vec<(String, CurveSource)> = if cfg.bands.is_empty() {
        vec![(cfg.label.clone(), cfg.curve.clone())]
    } else {
        let CurveSource::Qm(q) = &cfg.curve else {
            return Err(CliError::config("bands", "bands need a qm curve source"));
        };
        cfg.bands
            .iter()
            .map(|b| {
                let mut q = q.clone();
                q.band = Some(b.clone());
                (b.name.clone(), CurveSource::Qm(q))
            })
            .collect()
    };
    let mut stream = ChaCha8Rng::seed_from_u64(seed);
    let factor = cfg.duration_s / cfg.reference_duration_s;
    let created = ctx.timestamps.then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    ctx.prepare()?;
    let mut summary = Vec::new();
    let mut stems = std::collections::BTreeSet::new();
    for (label, source) in detectors {
        let det_seed = stream.next_u64();
        let mut curve = ideal_curve(&source, &edges)?;
        if let Some(irf) = &cfg.irf {
            curve = irf_convolve(&curve, irf, &edges)?;
        }
        curve.iter_mut().for_each(|v| *v *= factor);
        let mut h = synth_histogram(&curve, &edges, det_seed, &label)?;
        h.meta.duration_s = Some(cfg.duration_s);
        h.meta.created = created.clone();
        h.meta.source = json!({ "curve": source, "irf": cfg.irf, "stream_seed": seed });
        let stem = file_stem_for(&label);
        if !stems.insert(stem.clone()) {
            return Err(CliError::config("bands", format!("two detectors map to the file name '{stem}'")));
        }
        let path = ctx.path(&format!("{stem}.csv"));
        write_histogram(&path, &h)?;
        summary.push(json!({
            "label": label,
            "file": format!("{stem}.csv"),
            "seed": det_seed,
            "total_counts": h.total(),
            "t0_ns": h.t0(),
        }));
    }
    ctx.write_json("synth.json", &json!({ "stream_seed": seed, "detectors": summary }))?;
    Ok(())
}

fn load_histogram(ctx: &Ctx, p: &Path) -> Result<decaylab::DecayHistogram> {
    let path = resolve(&ctx.config, p);
    read_histogram(&path).map_err(|e| match e {
        CoreError::Io(source) => CliError::io(path, source),
        other => other.into(),
    })
}

pub fn fit_cmd(ctx: &Ctx) -> Result<()> {
    let cfg: FitConfig = load(&ctx.config)?;
    let h = load_histogram(ctx, &cfg.histogram)?;
    let init = match &cfg.init {
        None => None,
        Some(map) => {
            let names = cfg.kind.param_names();
            if let Some(k) = map.keys().find(|k| !names.contains(&k.as_str())) {
                return Err(CliError::config(format!("init.{k}"), "unknown parameter"));
            }
            let mut p = [0.0; 5];
            for (slot, name) in p.iter_mut().zip(names) {
                *slot = *map.get(name).ok_or_else(|| CliError::config(format!("init.{name}"), "missing parameter"))?;
            }
            Some(p)
        }
    };
    ctx.prepare()?;
    match fit(&h, cfg.kind, cfg.range, init.as_ref()) {
        Ok(r) => {
            ctx.write_json("fit.json", &r)?;
            ctx.write("fit.txt", table_report(&h.channel_label, &[&r]))?;
            Ok(())
        }
        Err(CoreError::NonConvergence { best }) => {
            ctx.write_json("fit.json", &best)?;
            ctx.write("fit.txt", table_report(&h.channel_label, &[&best]))?;
            Err(CoreError::NonConvergence { best }.into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn compare(ctx: &Ctx) -> Result<()> {
    let cfg: CompareConfig = load(&ctx.config)?;
    let h = load_histogram(ctx, &cfg.histogram)?;
    let c = compare_models(&h, cfg.range)?;
    ctx.prepare()?;
    ctx.write_json("compare.json", &c)?;
    let mut text = table_report(&h.channel_label, &[&c.nonexponential, &c.two_exponential]);
    text.push_str(&format!(
        "delta chi2_red (two-exponential - nonexponential): {:.4}\npreferred: {}\nlongest same-sign residual run: two-exponential {}, nonexponential {}\n",
        c.delta_chi2_reduced,
        c.preferred.label(),
        c.longest_run_two_exponential,
        c.longest_run_nonexponential
    ));
    ctx.write("compare.txt", text)?;
    Ok(())
}

#[derive(Serialize, Default)]
struct AsymptoteReport {
    power_law: Option<PowerLawEstimate>,
    turnover: Option<TurnoverReport>,
    /// Turnover in units of the exponential lifetime.
    turnover_lifetimes: Option<f64>,
    components: Option<DecayComponents>,
}

fn read_series(path: &Path, t_col: &str, y_col: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let parse_err = |line: u64, column: usize, msg: String| CliError::Core(CoreError::Parse { line, column, msg });
    let headers = rdr.headers().map_err(|e| parse_err(1, 1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::config("input.series", format!("column '{name}' not found in {}", path.display())))
    };
    let (ti, yi) = (col(t_col)?, col(y_col)?);
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), 1, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| parse_err(line, i + 1, format!("'{s}' is not a number")))
        };
        t.push(num(ti)?);
        y.push(num(yi)?);
    }
    Ok((t, y))
}

pub fn asymptote(ctx: &Ctx) -> Result<()> {
    let cfg: AsymptoteConfig = load(&ctx.config)?;
    let mut report = AsymptoteReport::default();
    let need_window = || CliError::config("window", "a fit window is required for this input");
    let fit_series = |t: &[f64], y: &[f64], window: (f64, f64)| -> Result<PowerLawEstimate> {
        Ok(if cfg.weighted {
            fit_power_exponent_weighted(t, y, y, window)?
        } else {
            fit_power_exponent(t, y, window)?
        })
    };
    match &cfg.input {
        AsymptoteInput::FitModel(m) => {
            m.validate()?;
            let p = &m.params;
            let (exp, pow, tau) = match m.kind {
                FitKind::Nonexponential => ((p[0], 1.0 / p[1]), (p[2], p[3]), p[1]),
                // no power-law component
                FitKind::TwoExponential => ((p[0] + p[2], 1.0 / p[1].max(p[3])), (0.0, 1.0), p[1].max(p[3])),
            };
            let rep = turnover_time(exp, pow, cfg.turnover_ratio)?;
            report.turnover_lifetimes = Some(rep.t_turnover / tau);
            report.turnover = Some(rep);
        }
        AsymptoteInput::SpectralModel(doc) => {
            let tol = ctx.tol(cfg.tol);
            let model = normalized(doc, tol)?;
            let comp = decay_components(&model)?;
            let rep = model_turnover(&model, cfg.turnover_ratio)?;
            let window = cfg.window.unwrap_or((3.0 * rep.t_turnover, 30.0 * rep.t_turnover));
            let grid = TimeGrid::logarithmic(window.0, window.1, cfg.n_points.max(5))
                .map_err(|e| CliError::config("window", e.to_string()))?;
            let method = match model.lowest_threshold() {
                Some(th) if model.mass() != th => AmplitudeMethod::Contour,
                _ => AmplitudeMethod::Direct,
            };
            let i = decay_intensity_with(&model, &grid, tol, IntensityOptions { amplitude: method, ..Default::default() })?;
            report.power_law = Some(fit_power_exponent(grid.points(), &i.values, window)?);
            report.turnover_lifetimes = Some(rep.t_turnover * comp.rate);
            report.turnover = Some(rep);
            report.components = Some(comp);
        }
        AsymptoteInput::Series { path, t_column, y_column } => {
            let (t, y) = read_series(&resolve(&ctx.config, path), t_column, y_column)?;
            report.power_law = Some(fit_series(&t, &y, cfg.window.ok_or_else(need_window)?)?);
        }
        AsymptoteInput::Histogram(path) => {
            let h = load_histogram(ctx, path)?;
            let t0 = h.t0();
            let (t, y): (Vec<f64>, Vec<f64>) = h
                .centers()
                .into_iter()
                .zip(&h.counts)
                .filter(|(c, _)| *c > t0)
                .map(|(c, &n)| (c - t0, n as f64))
                .unzip();
            report.power_law = Some(fit_series(&t, &y, cfg.window.ok_or_else(need_window)?)?);
        }
    }
    ctx.prepare()?;
    ctx.write_json("asymptote.json", &report)?;
    Ok(())
}
