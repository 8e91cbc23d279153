use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const REFERENCE_CH1: &str =
    r#"{"kind":"nonexponential","params":{"C":692886,"tau":0.44802,"C_p":2929.81,"beta":1.5469,"b":77.03},"t0":0.432}"#;

fn run(dir: &Path, cmd: &str, config: &Value, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}.json"));
    fs::write(&cfg, config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_decaylab"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    (h, r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect())
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn breit_wigner_survival_is_exponential() {
    let d = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"kind": "breit_wigner", "M": 10.0, "Gamma": 1.0},
        "grid": {"uniform": {"start": 0.0, "stop": 5.0, "n": 11}}
    });
    ok(&run(d.path(), "survival", &cfg, &[]));
    let (h, rows) = csv_rows(d.path().join("out/survival.csv"));
    assert_eq!(h, ["t", "t_ns", "re_A", "im_A", "P", "I", "P_trend"]);
    assert!((num(&rows[0][4]) - 1.0).abs() < 1e-8);
    for r in &rows[1..] {
        let t = num(&r[0]);
        assert!((num(&r[4]) - (-t).exp()).abs() < 1e-6, "P({t}) = {}", r[4]);
        assert!((num(&r[5]) - (-t).exp()).abs() < 1e-5, "I({t}) = {}", r[5]);
    }
    let s = read_json(d.path().join("out/survival.json"));
    assert_eq!(s["failures"], json!([]));
}

#[test]
fn spectral_channel_columns_sum_to_total() {
    let d = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"kind": "multi", "M": 5.0, "Gamma": 0.2, "channels": [
            {"c": 1.0, "gamma": -0.5, "E_th": 0.0, "label": "a"},
            {"c": 2.0, "gamma": 0.5, "E_th": 1.0}
        ]},
        "energy": {"min": -1.0, "max": 9.0, "n": 21}
    });
    ok(&run(d.path(), "spectral", &cfg, &[]));
    let (h, rows) = csv_rows(d.path().join("out/spectral.csv"));
    assert_eq!(h, ["E", "rho", "rho_a", "rho_2"]);
    for r in rows.iter().filter(|r| num(&r[0]) > 1.0) {
        let total = num(&r[1]);
        assert!((num(&r[2]) + num(&r[3]) - total).abs() <= 1e-12 * total.max(1e-300), "{r:?}");
    }
}

#[test]
fn spectral_breit_wigner_is_symmetric_about_the_mass() {
    let d = TempDir::new().unwrap();
    let cfg = json!({"model": {"kind": "breit_wigner", "M": 10.0, "Gamma": 1.0}, "energy": {"min": 5.0, "max": 15.0, "n": 11}});
    ok(&run(d.path(), "spectral", &cfg, &[]));
    let (_, rows) = csv_rows(d.path().join("out/spectral.csv"));
    let rho: Vec<f64> = rows.iter().map(|r| num(&r[1])).collect();
    for k in 0..5 {
        assert!((rho[k] - rho[10 - k]).abs() <= 1e-15 * rho[5], "{k}");
    }
    assert!((rho[5] - 2.0 / std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn spectral_threshold_samples_are_finite_and_growing() {
    let d = TempDir::new().unwrap();
    let cfg = json!({"model": {"kind": "single", "gamma": -0.5, "E0": 5.0, "Gamma": 1.0}, "energy": {"min": 1e-6, "max": 1e-2, "n": 5}});
    ok(&run(d.path(), "spectral", &cfg, &[]));
    let (_, rows) = csv_rows(d.path().join("out/spectral.csv"));
    let rho: Vec<f64> = rows.iter().map(|r| num(&r[1])).collect();
    assert!(rho.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(rho.windows(2).all(|w| w[0] > w[1]), "{rho:?}");
}

#[test]
fn survival_counts_oscillations_in_the_turnover_window() {
    let d = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"kind": "single", "gamma": -0.75, "E0": 2.0, "Gamma": 1.0},
        "grid": {"uniform": {"start": 0.0, "stop": 80.0, "n": 1601}},
        "method": "contour",
        "tol": 1e-10
    });
    ok(&run(d.path(), "survival", &cfg, &[]));
    let s = read_json(d.path().join("out/survival.json"));
    assert!(s["oscillation"]["count"].as_u64().unwrap() >= 4, "{}", s["oscillation"]);
    let (_, rows) = csv_rows(d.path().join("out/survival.csv"));
    assert!((num(&rows[0][4]) - 1.0).abs() < 1e-8);
    assert!(rows.iter().all(|r| !r[6].is_empty()));
}

#[test]
fn same_seed_gives_identical_files() {
    let d = TempDir::new().unwrap();
    let cfg = json!({"curve": {"source": "fit_model", "model": serde_json::from_str::<Value>(REFERENCE_CH1).unwrap()}, "seed": 5});
    ok(&run(d.path(), "synth", &cfg, &["--no-timestamps"]));
    let first = fs::read(d.path().join("out/1.csv")).unwrap();
    let first_meta = fs::read(d.path().join("out/1.meta.json")).unwrap();
    ok(&run(d.path(), "synth", &cfg, &["--no-timestamps"]));
    assert_eq!(first, fs::read(d.path().join("out/1.csv")).unwrap());
    assert_eq!(first_meta, fs::read(d.path().join("out/1.meta.json")).unwrap());
    ok(&run(d.path(), "synth", &cfg, &["--no-timestamps", "--seed", "6"]));
    assert_ne!(first, fs::read(d.path().join("out/1.csv")).unwrap());
}

#[test]
fn zero_duration_gives_zero_counts() {
    let d = TempDir::new().unwrap();
    let cfg = json!({
        "curve": {"source": "fit_model", "model": serde_json::from_str::<Value>(REFERENCE_CH1).unwrap()},
        "duration_s": 0.0
    });
    ok(&run(d.path(), "synth", &cfg, &[]));
    let s = read_json(d.path().join("out/synth.json"));
    assert_eq!(s["detectors"][0]["total_counts"], 0);
}

#[test]
fn fit_and_compare_on_synthetic_reference_data() {
    let d = TempDir::new().unwrap();
    let cfg = json!({"curve": {"source": "fit_model", "model": serde_json::from_str::<Value>(REFERENCE_CH1).unwrap()}, "seed": 1});
    ok(&run(d.path(), "synth", &cfg, &["--no-timestamps"]));
    let hist = d.path().join("out/1.csv");

    ok(&run(d.path(), "fit", &json!({"histogram": hist, "kind": "nonexponential"}), &[]));
    let f = read_json(d.path().join("out/fit.json"));
    let tau = f["model"]["params"]["tau"].as_f64().unwrap();
    let beta = f["model"]["params"]["beta"].as_f64().unwrap();
    assert!((tau - 0.44802).abs() < 0.01, "{tau}");
    assert!((beta - 1.5469).abs() < 0.1, "{beta}");
    assert!(fs::read_to_string(d.path().join("out/fit.txt")).unwrap().starts_with("Channel: 1"));

    // relative histogram path resolves against the config directory
    ok(&run(d.path(), "compare", &json!({"histogram": "out/1.csv"}), &[]));
    let c = read_json(d.path().join("out/compare.json"));
    assert_eq!(c["preferred"], "nonexponential");
    assert!(c["delta_chi2_reduced"].as_f64().unwrap() > 0.0);
}

#[test]
fn fit_init_must_name_the_family_parameters() {
    let d = TempDir::new().unwrap();
    let cfg = json!({"curve": {"source": "fit_model", "model": serde_json::from_str::<Value>(REFERENCE_CH1).unwrap()}});
    ok(&run(d.path(), "synth", &cfg, &[]));
    let o = run(
        d.path(),
        "fit",
        &json!({"histogram": "out/1.csv", "kind": "two_exponential", "init": {"C": 1.0}}),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn two_bands_share_the_lifetime_but_not_the_exponent() {
    // fast beats averaged out by the IRF; no background so both tails stay visible
    let d = TempDir::new().unwrap();
    let cfg = json!({
        "curve": {"source": "qm", "scale": 1e9, "background": 0.0, "t0_ns": 0.384, "time_unit_ns": 0.2,
            "model": {"kind": "multi", "M": 5.0, "Gamma": 1.0, "channels": [
                {"c": 1.0, "gamma": -0.75, "E_th": 0.0},
                {"c": 1.0, "gamma": -0.25, "E_th": 0.0}
            ]}},
        "irf": {"kind": "gaussian", "fwhm": 1.0},
        "bands": [{"name": "lo", "member_channels": [0]}, {"name": "hi", "member_channels": [1]}],
        "seed": 2
    });
    ok(&run(d.path(), "synth", &cfg, &["--no-timestamps"]));
    let mut fits = Vec::new();
    for band in ["lo", "hi"] {
        let hist = d.path().join(format!("out/{band}.csv"));
        let fit_cfg = json!({"histogram": hist, "kind": "nonexponential", "range": [3.0, 94.752]});
        ok(&run(d.path(), "fit", &fit_cfg, &[]));
        fits.push(read_json(d.path().join("out/fit.json")));
    }
    let p = |k: usize, name: &str| fits[k]["model"]["params"][name].as_f64().unwrap();
    let s = |k: usize, i: usize| fits[k]["stderr"][i].as_f64().unwrap();
    for f in &fits {
        assert!(f["chi2_reduced"].as_f64().unwrap() < 1.5, "{}", f["chi2_reduced"]);
    }
    let (t0, t1) = (p(0, "tau"), p(1, "tau"));
    assert!((t0 / t1 - 1.0).abs() < 0.03, "{t0} vs {t1}");
    let (b0, b1) = (p(0, "beta"), p(1, "beta"));
    assert!(b1 - b0 > 10.0 * (s(0, 3).powi(2) + s(1, 3).powi(2)).sqrt(), "{b0} vs {b1}");
}

#[test]
fn asymptote_of_reference_fit_turns_over_after_about_seven_lifetimes() {
    let d = TempDir::new().unwrap();
    let cfg = json!({"input": {"fit_model": serde_json::from_str::<Value>(REFERENCE_CH1).unwrap()}});
    ok(&run(d.path(), "asymptote", &cfg, &[]));
    let a = read_json(d.path().join("out/asymptote.json"));
    let n = a["turnover_lifetimes"].as_f64().unwrap();
    assert!((n - 7.3).abs() < 0.05, "{n}");
}

#[test]
fn pure_exponential_has_no_turnover() {
    let d = TempDir::new().unwrap();
    let m = json!({"kind": "two_exponential", "params": {"C1": 1e5, "tau1": 0.5, "C2": 1e3, "tau2": 3.0, "b": 10.0}, "t0": 0.432});
    let o = run(d.path(), "asymptote", &json!({"input": {"fit_model": m}}), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn asymptote_recovers_an_exact_power_law_series() {
    let d = TempDir::new().unwrap();
    let mut text = String::from("t,I\n");
    for k in 1..=50 {
        let t = k as f64;
        text.push_str(&format!("{t},{}\n", 3.0 * t.powf(-2.5)));
    }
    fs::write(d.path().join("tail.csv"), text).unwrap();
    let cfg = json!({"input": {"series": {"path": "tail.csv"}}, "window": [5.0, 50.0]});
    ok(&run(d.path(), "asymptote", &cfg, &[]));
    let a = read_json(d.path().join("out/asymptote.json"));
    assert!((a["power_law"]["beta"].as_f64().unwrap() - 2.5).abs() < 1e-10);
    assert_eq!(a["power_law"]["n_points"], 46);

    let o = run(d.path(), "asymptote", &json!({"input": {"series": {"path": "tail.csv"}}}), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_io_code() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), "fit", &json!({"histogram": "absent.csv", "kind": "nonexponential"}), &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
}

#[test]
fn unknown_key_exits_with_config_code_and_names_it() {
    let d = TempDir::new().unwrap();
    let cfg = json!({
        "model": {"kind": "breit_wigner", "M": 10.0, "Gamma": 1.0},
        "grid": {"uniform": {"start": 0.0, "stop": 1.0, "n": 3, "step": 0.5}}
    });
    let o = run(d.path(), "survival", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid.uniform") && err.contains("step"), "{err}");
}

#[test]
fn malformed_histogram_exits_with_io_code() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("bad.csv"), "# decaylab-histogram v1\nt_lo,t_hi,counts\n0,1,5\n1,2,x\n").unwrap();
    let o = run(d.path(), "compare", &json!({"histogram": "bad.csv"}), &[]);
    assert_eq!(o.status.code(), Some(4));
}
