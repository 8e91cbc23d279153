use decaylab::fitting::{compare_models, fit, model_eval, FitKind, FitModel};
use decaylab::tcspc::{default_edges, ideal_curve, synth_histogram, CurveSource, DecayHistogram, HistogramMeta};
use proptest::prelude::*;

const RANGE: (f64, f64) = (0.960, 94.752);

fn reference_ch1() -> FitModel {
    FitModel::nonexponential(692886.0, 0.44802, 2929.81, 1.5469, 77.03, 0.432)
}

fn curve(m: &FitModel) -> Vec<f64> {
    ideal_curve(&CurveSource::FitModel { model: m.clone() }, &default_edges()).unwrap()
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn pulls_are_calibrated() {
    let c = curve(&reference_ch1());
    let e = default_edges();
    let (mut tau, mut beta) = (Vec::new(), Vec::new());
    for seed in 0..60 {
        let r = fit(&synth_histogram(&c, &e, 500 + seed, "1").unwrap(), FitKind::Nonexponential, RANGE, None).unwrap();
        tau.push((r.model.params[1] - 0.44802) / r.stderr[1]);
        beta.push((r.model.params[3] - 1.5469) / r.stderr[3]);
    }
    for (name, p) in [("tau", tau), ("beta", beta)] {
        let (m, sd) = mean_sd(&p);
        assert!(m.abs() <= 0.3, "{name} pull mean {m}");
        assert!((0.7..=1.4).contains(&sd), "{name} pull width {sd}");
    }
}

#[test]
fn later_range_start_moves_beta_within_two_stderr() {
    let c = curve(&reference_ch1());
    let e = default_edges();
    for seed in [11, 12, 13] {
        let h = synth_histogram(&c, &e, seed, "1").unwrap();
        let a = fit(&h, FitKind::Nonexponential, RANGE, None).unwrap();
        let b = fit(&h, FitKind::Nonexponential, (2.0, RANGE.1), None).unwrap();
        let d = (a.model.params[3] - b.model.params[3]).abs();
        assert!(d < 2.0 * b.stderr[3], "seed {seed}: {d} vs stderr {}", b.stderr[3]);
    }
}

#[test]
fn two_exponential_data_prefers_two_exponential() {
    let truth = FitModel::two_exponential(6.0e5, 0.45, 2.0e4, 2.5, 60.0, 0.432);
    let c = curve(&truth);
    let e = default_edges();
    for seed in [21, 22, 23] {
        let cmp = compare_models(&synth_histogram(&c, &e, seed, "1").unwrap(), RANGE).unwrap();
        assert!(
            cmp.two_exponential.chi2_reduced <= cmp.nonexponential.chi2_reduced + 0.05,
            "seed {seed}: {} vs {}",
            cmp.two_exponential.chi2_reduced,
            cmp.nonexponential.chi2_reduced
        );
    }
}

#[test]
fn background_only_data_fits_both_families_equally() {
    // zero amplitudes: a flat 4000-count floor with the peak bin at t0
    let truth = FitModel::two_exponential(0.0, 1.0, 0.0, 5.0, 4000.0, 0.432);
    let c = curve(&truth);
    let h = synth_histogram(&c, &default_edges(), 31, "bg").unwrap();
    assert_eq!(h.t0_index, 4);
    let cmp = compare_models(&h, RANGE).unwrap();
    for chi in [cmp.two_exponential.chi2_reduced, cmp.nonexponential.chi2_reduced] {
        assert!((chi - 1.0).abs() < 0.15, "{chi}");
    }
    assert!(cmp.delta_chi2_reduced.abs() < 0.05, "{}", cmp.delta_chi2_reduced);
}

#[test]
fn fits_are_bit_identical() {
    let c = curve(&reference_ch1());
    let h = synth_histogram(&c, &default_edges(), 77, "1").unwrap();
    let a = serde_json::to_string(&fit(&h, FitKind::TwoExponential, RANGE, None).unwrap()).unwrap();
    let b = serde_json::to_string(&fit(&h, FitKind::TwoExponential, RANGE, None).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn covariance_is_symmetric_positive_semidefinite() {
    let c = curve(&reference_ch1());
    let h = synth_histogram(&c, &default_edges(), 8, "1").unwrap();
    let r = fit(&h, FitKind::Nonexponential, RANGE, None).unwrap();
    assert_eq!(r.dof, 977 - 5);
    let m = nalgebra::DMatrix::from_fn(5, 5, |i, j| r.covariance[i][j]);
    for i in 0..5 {
        for j in 0..5 {
            assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-9 * (m[(i, i)] * m[(j, j)]).sqrt());
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let scale = m.diagonal().max();
    assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-9 * scale), "{:?}", eig.eigenvalues);
}

fn exact_histogram(m: &FitModel) -> DecayHistogram {
    // integer counts are rounded; recovery tolerances below allow for that
    let counts = curve(m).iter().map(|v| v.round() as u64).collect();
    DecayHistogram::new(default_edges(), counts, "exact", HistogramMeta::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noise_free_in_family_data_is_recovered(
        c in 3e5f64..1e6,
        tau in 0.3f64..0.8,
        cp in 1e3f64..5e3,
        beta in 1.3f64..2.2,
        b in 20.0f64..150.0,
    ) {
        let truth = FitModel::nonexponential(c, tau, cp, beta, b, 0.432);
        let h = exact_histogram(&truth);
        let r = fit(&h, FitKind::Nonexponential, RANGE, None).unwrap();
        // rounding to integers leaves chi2 of order n / (12 * counts)
        prop_assert!(r.chi2_reduced < 0.01, "{}", r.chi2_reduced);
        prop_assert!((r.model.params[1] / tau - 1.0).abs() < 1e-3);
        prop_assert!((r.model.params[3] / beta - 1.0).abs() < 2e-2);
        let t = 10.432;
        prop_assert!((model_eval(&r.model, t).unwrap() / model_eval(&truth, t).unwrap() - 1.0).abs() < 5e-3);
    }
}
