//! Chi-square fits of decay histograms with the two-exponential and the
//! exponential-plus-power-law models.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tcspc::DecayHistogram;

pub const MAX_ITERATIONS: usize = 500;
const REL_CHI2_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;
const LN_BOUND: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `C1 e^{-(t-t0)/tau1} + C2 e^{-(t-t0)/tau2} + b`
    TwoExponential,
    /// `C e^{-(t-t0)/tau} + C_p (t-t0)^{-beta} + b`
    Nonexponential,
}

impl FitKind {
    pub fn param_names(self) -> [&'static str; 5] {
        match self {
            FitKind::TwoExponential => ["C1", "tau1", "C2", "tau2", "b"],
            FitKind::Nonexponential => ["C", "tau", "C_p", "beta", "b"],
        }
    }

    /// Parameters searched in log space.
    fn log_mask(self) -> [bool; 5] {
        match self {
            FitKind::TwoExponential => [true, true, true, true, false],
            FitKind::Nonexponential => [true, true, true, false, false],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FitKind::TwoExponential => "two-exponential",
            FitKind::Nonexponential => "nonexponential",
        }
    }
}

/// Model row with parameters in `kind.param_names()` order. Serializes the
/// parameters as a name -> value map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawFitModel", try_from = "RawFitModel")]
pub struct FitModel {
    pub kind: FitKind,
    pub params: [f64; 5],
    /// Time origin in ns, never varied by the fit.
    pub t0: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFitModel {
    kind: FitKind,
    params: BTreeMap<String, f64>,
    t0: f64,
}

impl From<FitModel> for RawFitModel {
    fn from(m: FitModel) -> Self {
        RawFitModel {
            kind: m.kind,
            params: m.kind.param_names().iter().map(|n| n.to_string()).zip(m.params).collect(),
            t0: m.t0,
        }
    }
}

impl TryFrom<RawFitModel> for FitModel {
    type Error = String;

    fn try_from(raw: RawFitModel) -> Result<Self, String> {
        let names = raw.kind.param_names();
        if let Some(extra) = raw.params.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(format!("unknown parameter '{extra}' for {}", raw.kind.label()));
        }
        let mut params = [0.0; 5];
        for (slot, name) in params.iter_mut().zip(names) {
            *slot = *raw
                .params
                .get(name)
                .ok_or_else(|| format!("missing parameter '{name}' for {}", raw.kind.label()))?;
        }
        Ok(FitModel { kind: raw.kind, params, t0: raw.t0 })
    }
}

impl FitModel {
    pub fn two_exponential(c1: f64, tau1: f64, c2: f64, tau2: f64, b: f64, t0: f64) -> Self {
        FitModel { kind: FitKind::TwoExponential, params: [c1, tau1, c2, tau2, b], t0 }
    }

    pub fn nonexponential(c: f64, tau: f64, c_p: f64, beta: f64, b: f64, t0: f64) -> Self {
        FitModel { kind: FitKind::Nonexponential, params: [c, tau, c_p, beta, b], t0 }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        let i = self.kind.param_names().iter().position(|n| *n == name)?;
        Some(self.params[i])
    }

    /// Checks amplitudes >= 0 and lifetimes > 0.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |msg: &str| Err(Error::InvalidParams(format!("{}: {msg}", self.kind.label())));
        if p.iter().any(|v| !v.is_finite()) || !self.t0.is_finite() {
            return bad("parameters must be finite");
        }
        match self.kind {
            FitKind::TwoExponential => {
                if p[0] < 0.0 || p[2] < 0.0 {
                    return bad("amplitudes must be non-negative");
                }
                if p[1] <= 0.0 || p[3] <= 0.0 {
                    return bad("lifetimes must be positive");
                }
            }
            FitKind::Nonexponential => {
                if p[0] < 0.0 || p[2] < 0.0 {
                    return bad("amplitudes must be non-negative");
                }
                if p[1] <= 0.0 {
                    return bad("lifetime must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Model value at `t` (ns). The power-law row is undefined for `t <= t0`.
pub fn model_eval(m: &FitModel, t: f64) -> Result<f64> {
    let u = t - m.t0;
    let p = &m.params;
    match m.kind {
        FitKind::TwoExponential => Ok(p[0] * (-u / p[1]).exp() + p[2] * (-u / p[3]).exp() + p[4]),
        FitKind::Nonexponential => {
            if u <= 0.0 {
                return Err(Error::Domain(format!("power-law model needs t > t0 = {}, got t = {t}", m.t0)));
            }
            let power = if p[2] == 0.0 { 0.0 } else { p[2] * u.powf(-p[3]) };
            Ok(p[0] * (-u / p[1]).exp() + power + p[4])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub chi2: f64,
    pub chi2_reduced: f64,
    pub dof: usize,
    /// Covariance of the natural parameters, scaled by chi2_reduced.
    pub covariance: Vec<Vec<f64>>,
    pub stderr: Vec<f64>,
    /// Normalized residuals `(counts - model) / sigma` for the bins in range.
    pub residuals: Vec<f64>,
    pub fit_range: (f64, f64),
    pub converged: bool,
    pub n_iterations: usize,
}

impl FitResult {
    pub fn stderr_of(&self, name: &str) -> Option<f64> {
        let i = self.model.kind.param_names().iter().position(|n| *n == name)?;
        Some(self.stderr[i])
    }
}

struct Data {
    t: Vec<f64>,
    y: Vec<f64>,
    inv_sigma: Vec<f64>,
}

fn select(h: &DecayHistogram, range: (f64, f64), n_free: usize) -> Result<Data> {
    let (lo, hi) = range;
    let edges = &h.bin_edges;
    if !(lo < hi) || lo < edges[0] || hi > edges[edges.len() - 1] {
        return Err(Error::InvalidArgument(format!(
            "fit range ({lo}, {hi}) must lie inside the histogram ({}, {})",
            edges[0],
            edges[edges.len() - 1]
        )));
    }
    let mut d = Data { t: Vec::new(), y: Vec::new(), inv_sigma: Vec::new() };
    for (k, &c) in h.counts.iter().enumerate() {
        let t = 0.5 * (edges[k] + edges[k + 1]);
        if t >= lo && t <= hi {
            d.t.push(t);
            d.y.push(c as f64);
            d.inv_sigma.push(1.0 / (c.max(1) as f64).sqrt());
        }
    }
    let needed = n_free + 5;
    if d.t.len() < needed {
        return Err(Error::EmptyWindow { found: d.t.len(), needed });
    }
    Ok(d)
}

fn to_natural(kind: FitKind, phi: &[f64]) -> [f64; 5] {
    let mut p = [0.0; 5];
    for (k, (&v, &is_log)) in phi.iter().zip(&kind.log_mask()).enumerate() {
        p[k] = if is_log { v.exp() } else { v };
    }
    p
}

fn to_internal(kind: FitKind, p: &[f64; 5]) -> Vec<f64> {
    p.iter()
        .zip(&kind.log_mask())
        .map(|(&v, &is_log)| if is_log { v.max(f64::MIN_POSITIVE).ln() } else { v })
        .collect()
}

/// Model values and derivatives with respect to the internal parameters.
fn model_and_grad(kind: FitKind, p: &[f64; 5], u: f64, grad: &mut [f64; 5]) -> f64 {
    match kind {
        FitKind::TwoExponential => {
            let e1 = (-u / p[1]).exp();
            let e2 = (-u / p[3]).exp();
            grad[0] = p[0] * e1;
            grad[1] = p[0] * e1 * u / p[1];
            grad[2] = p[2] * e2;
            grad[3] = p[2] * e2 * u / p[3];
            grad[4] = 1.0;
            p[0] * e1 + p[2] * e2 + p[4]
        }
        FitKind::Nonexponential => {
            let e = (-u / p[1]).exp();
            let pw = p[2] * u.powf(-p[3]);
            grad[0] = p[0] * e;
            grad[1] = p[0] * e * u / p[1];
            grad[2] = pw;
            grad[3] = -pw * u.ln();
            grad[4] = 1.0;
            p[0] * e + pw + p[4]
        }
    }
}

fn chi2_of(kind: FitKind, phi: &[f64], t0: f64, d: &Data) -> f64 {
    if phi.iter().zip(&kind.log_mask()).any(|(v, &l)| !v.is_finite() || (l && v.abs() > LN_BOUND)) {
        return f64::INFINITY;
    }
    let p = to_natural(kind, phi);
    let mut g = [0.0; 5];
    let mut s = 0.0;
    for k in 0..d.t.len() {
        let r = (d.y[k] - model_and_grad(kind, &p, d.t[k] - t0, &mut g)) * d.inv_sigma[k];
        s += r * r;
    }
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

fn jacobian(kind: FitKind, phi: &[f64], t0: f64, d: &Data) -> (DMatrix<f64>, DVector<f64>) {
    let n = d.t.len();
    let p = to_natural(kind, phi);
    let mut j = DMatrix::<f64>::zeros(n, 5);
    let mut r = DVector::<f64>::zeros(n);
    let mut g = [0.0; 5];
    for k in 0..n {
        let m = model_and_grad(kind, &p, d.t[k] - t0, &mut g);
        r[k] = (d.y[k] - m) * d.inv_sigma[k];
        for c in 0..5 {
            j[(k, c)] = -g[c] * d.inv_sigma[k];
        }
    }
    (j, r)
}

struct Run {
    phi: Vec<f64>,
    chi2: f64,
    iterations: usize,
    converged: bool,
}

/// Levenberg-Marquardt with Marquardt diagonal scaling.
fn levenberg_marquardt(kind: FitKind, start: Vec<f64>, t0: f64, d: &Data) -> Result<Run> {
    let mut phi = start;
    let mut chi2 = chi2_of(kind, &phi, t0, d);
    if !chi2.is_finite() {
        return Err(Error::SingularJacobian("model is not finite at the starting point".into()));
    }
    let mut lambda = 1e-3;
    for it in 1..=MAX_ITERATIONS {
        let (j, r) = jacobian(kind, &phi, t0, d);
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian(format!("non-finite normal matrix at iteration {it}")));
        }
        let diag_floor = a.diagonal().max() * 1e-15;
        loop {
            let mut m = a.clone();
            for c in 0..5 {
                m[(c, c)] += lambda * a[(c, c)].max(diag_floor);
            }
            let Some(step) = m.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Ok(Run { phi, chi2, iterations: it, converged: true });
                }
                continue;
            };
            let trial: Vec<f64> = phi.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let c2 = chi2_of(kind, &trial, t0, d);
            if c2 < chi2 {
                let rel = (chi2 - c2) / chi2.max(f64::MIN_POSITIVE);
                let step_norm = step.norm();
                phi = trial;
                chi2 = c2;
                lambda = (lambda * 0.1).max(1e-12);
                if rel < REL_CHI2_TOL || step_norm < STEP_TOL {
                    return Ok(Run { phi, chi2, iterations: it, converged: true });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left at working precision
                return Ok(Run { phi, chi2, iterations: it, converged: true });
            }
        }
    }
    Ok(Run { phi, chi2, iterations: MAX_ITERATIONS, converged: false })
}

/// Weighted linear least squares for the amplitudes given the nonlinear
/// parameters; used to seed every start.
fn seed(kind: FitKind, shape: (f64, f64), t0: f64, d: &Data) -> [f64; 5] {
    let n = d.t.len();
    let mut a = DMatrix::<f64>::zeros(n, 3);
    let mut y = DVector::<f64>::zeros(n);
    for k in 0..n {
        let u = d.t[k] - t0;
        let (f1, f2) = match kind {
            FitKind::TwoExponential => ((-u / shape.0).exp(), (-u / shape.1).exp()),
            FitKind::Nonexponential => ((-u / shape.0).exp(), u.powf(-shape.1)),
        };
        let w = d.inv_sigma[k];
        a[(k, 0)] = f1 * w;
        a[(k, 1)] = f2 * w;
        a[(k, 2)] = w;
        y[k] = d.y[k] * w;
    }
    let peak = d.y.iter().copied().fold(1.0, f64::max);
    let floor = peak * 1e-6;
    let coef = a
        .svd(true, true)
        .solve(&y, 1e-14)
        .unwrap_or_else(|_| DVector::from_vec(vec![peak, floor, 0.0]));
    let (c1, c2, b) = (coef[0].max(floor), coef[1].max(floor), coef[2]);
    match kind {
        FitKind::TwoExponential => [c1, shape.0, c2, shape.1, b],
        FitKind::Nonexponential => [c1, shape.0, c2, shape.1, b],
    }
}

fn lattice(kind: FitKind) -> Vec<(f64, f64)> {
    let taus = [0.1, 0.5, 2.0, 10.0];
    match kind {
        FitKind::TwoExponential => taus.iter().flat_map(|&t| [(t, 4.0 * t), (t, 20.0 * t)]).collect(),
        FitKind::Nonexponential => taus.iter().flat_map(|&t| [(t, 1.5), (t, 3.0)]).collect(),
    }
}

fn finish(kind: FitKind, run: Run, t0: f64, d: &Data, range: (f64, f64)) -> Result<FitResult> {
    let p = to_natural(kind, &run.phi);
    let (j, r) = jacobian(kind, &run.phi, t0, d);
    let dof = d.t.len() - 5;
    let chi2_reduced = run.chi2 / dof as f64;
    let a = j.transpose() * &j;
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let eps = 1e-12 * a.diagonal().max().max(f64::MIN_POSITIVE);
            a.svd(true, true).pseudo_inverse(eps).map_err(|e| Error::SingularJacobian(e.to_string()))?
        }
    };
    // d(natural)/d(internal) is p for log parameters, 1 otherwise
    let scale: Vec<f64> = p
        .iter()
        .zip(&kind.log_mask())
        .map(|(&v, &l)| if l { v } else { 1.0 })
        .collect();
    let covariance: Vec<Vec<f64>> = (0..5)
        .map(|r_| (0..5).map(|c| inv[(r_, c)] * scale[r_] * scale[c] * chi2_reduced).collect())
        .collect();
    let stderr = (0..5).map(|k| covariance[k][k].max(0.0).sqrt()).collect();
    Ok(FitResult {
        model: FitModel { kind, params: p, t0 },
        chi2: run.chi2,
        chi2_reduced,
        dof,
        covariance,
        stderr,
        residuals: r.iter().copied().collect(),
        fit_range: range,
        converged: run.converged,
        n_iterations: run.iterations,
    })
}

/// Chi-square fit over the bins whose centers lie in `range` (ns), with
/// `t0` fixed at the center of the histogram's maximum bin.
pub fn fit(h: &DecayHistogram, kind: FitKind, range: (f64, f64), init: Option<&[f64; 5]>) -> Result<FitResult> {
    let d = select(h, range, 5)?;
    let t0 = h.t0();
    if kind == FitKind::Nonexponential && d.t[0] <= t0 {
        return Err(Error::Domain(format!(
            "power-law fit range must start after t0 = {t0} ns, first bin center is {}",
            d.t[0]
        )));
    }
    let starts: Vec<[f64; 5]> = match init {
        Some(p) => {
            FitModel { kind, params: *p, t0 }.validate()?;
            vec![*p]
        }
        None => lattice(kind).into_iter().map(|s| seed(kind, s, t0, &d)).collect(),
    };
    let runs: Vec<Result<Run>> = starts
        .par_iter()
        .map(|p| levenberg_marquardt(kind, to_internal(kind, p), t0, &d))
        .collect();
    let mut best: Option<Run> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        run.chi2 < b.chi2
                            || (run.chi2 == b.chi2 && to_natural(kind, &run.phi) < to_natural(kind, &b.phi))
                    }
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(best) = best else {
        return Err(last_err.unwrap_or_else(|| Error::SingularJacobian("no start converged".into())));
    };
    let result = finish(kind, best, t0, &d, range)?;
    if !result.converged {
        return Err(Error::NonConvergence { best: Box::new(result) });
    }
    Ok(result)
}

/// Longest run of consecutive residuals with the same sign.
pub fn longest_sign_run(residuals: &[f64]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut last = 0i8;
    for &r in residuals {
        let s = if r > 0.0 {
            1
        } else if r < 0.0 {
            -1
        } else {
            0
        };
        if s != 0 && s == last {
            run += 1;
        } else {
            run = usize::from(s != 0);
        }
        last = s;
        best = best.max(run);
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub two_exponential: FitResult,
    pub nonexponential: FitResult,
    /// `chi2_reduced(two_exponential) - chi2_reduced(nonexponential)`.
    pub delta_chi2_reduced: f64,
    pub preferred: FitKind,
    pub longest_run_two_exponential: usize,
    pub longest_run_nonexponential: usize,
}

pub fn compare_models(h: &DecayHistogram, range: (f64, f64)) -> Result<ModelComparison> {
    let two = fit(h, FitKind::TwoExponential, range, None)?;
    let non = fit(h, FitKind::Nonexponential, range, None)?;
    let delta = two.chi2_reduced - non.chi2_reduced;
    Ok(ModelComparison {
        preferred: if non.chi2_reduced < two.chi2_reduced { FitKind::Nonexponential } else { FitKind::TwoExponential },
        longest_run_two_exponential: longest_sign_run(&two.residuals),
        longest_run_nonexponential: longest_sign_run(&non.residuals),
        delta_chi2_reduced: delta,
        two_exponential: two,
        nonexponential: non,
    })
}

/// Plain-text table: model, reduced chi2, the four shape parameters, b.
pub fn table_report(label: &str, fits: &[&FitResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Channel: {label}");
    if let Some(f) = fits.first() {
        let _ = writeln!(s, "Fitting range: {:.3} - {:.3} ns, t0 = {:.3} ns", f.fit_range.0, f.fit_range.1, f.model.t0);
    }
    let _ = writeln!(
        s,
        "{:<16} {:>8} {:>12} {:>10} {:>12} {:>10} {:>9}",
        "model", "chi2_red", "C1 | C", "tau1 [ns]", "C2 | C_p", "tau2|beta", "b"
    );
    for f in fits {
        let p = &f.model.params;
        let _ = writeln!(
            s,
            "{:<16} {:>8.3} {:>12.6} {:>10.5} {:>12.6} {:>10.5} {:>9.2}",
            f.model.kind.label(),
            f.chi2_reduced,
            p[0],
            p[1],
            p[2],
            p[3],
            p[4]
        );
    }
    s
}
