use num_traits::Float;

use super::{Estimate, QuadValue};
use crate::scalar::Real;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_524_768_799_181,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss 10-point weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// One 21-point Kronrod panel with the QUADPACK error heuristic.
pub fn gk21<T, V, F>(f: &F, a: T, b: T) -> Estimate<V, T>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    gk21_floored(f, a, b).0
}

/// Also reports whether the error estimate sits at the roundoff floor.
fn gk21_floored<T, V, F>(f: &F, a: T, b: T) -> (Estimate<V, T>, bool)
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    let half = (b - a) * T::lit(0.5);
    let center = a + half;
    let hl = half.abs();

    let fc = f(center);
    let mut res_k = fc * T::lit(WGK[10]);
    let mut res_g = V::zero();
    let mut res_abs = fc.norm() * T::lit(WGK[10]);
    let mut fv1 = [V::zero(); 10];
    let mut fv2 = [V::zero(); 10];
    for j in 0..10 {
        let dx = half * T::lit(XGK[j]);
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        let w = T::lit(WGK[j]);
        res_k = res_k + (f1 + f2) * w;
        res_abs = res_abs + (f1.norm() + f2.norm()) * w;
        if j % 2 == 1 {
            res_g = res_g + (f1 + f2) * T::lit(WG[j / 2]);
        }
    }
    let mean = res_k * T::lit(0.5);
    let mut res_asc = (fc - mean).norm() * T::lit(WGK[10]);
    for j in 0..10 {
        res_asc = res_asc + ((fv1[j] - mean).norm() + (fv2[j] - mean).norm()) * T::lit(WGK[j]);
    }

    let value = res_k * half;
    res_abs = res_abs * hl;
    res_asc = res_asc * hl;
    let mut err = ((res_k - res_g) * half).norm();
    if res_asc > T::zero() && err > T::zero() {
        let r = (T::lit(200.0) * err / res_asc).powf(T::lit(1.5));
        err = res_asc * if r < T::one() { r } else { T::one() };
    }
    let floor = T::lit(50.0) * T::epsilon() * res_abs;
    let mut floored = false;
    if res_abs > T::min_positive_value() / (T::lit(50.0) * T::epsilon()) && err <= floor {
        err = floor;
        floored = true;
    }
    let converged = value.is_finite() && Float::is_finite(err);
    (
        Estimate {
            value,
            abs_err: err,
            evals: 21,
            converged,
        },
        floored,
    )
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOptions<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_intervals: usize,
}

impl<T: Real> AdaptiveOptions<T> {
    pub fn abs(tol: T) -> Self {
        AdaptiveOptions {
            abs_tol: tol,
            rel_tol: T::zero(),
            max_intervals: 4000,
        }
    }
}

/// [`adaptive`] over geometric sub-panels `[a 2^k, a 2^(k+1)]` when
/// `0 < a` and `b / a > 4`, so features near `a` are not missed on very
/// long intervals.
pub fn adaptive_graded<T, V, F>(f: &F, a: T, b: T, opts: AdaptiveOptions<T>) -> Estimate<V, T>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    if !(a > T::zero()) || !(b > T::lit(4.0) * a) {
        return adaptive(f, a, b, opts);
    }
    let n = (b / a).log2().ceil().to_usize().unwrap_or(1).max(1);
    let sub = AdaptiveOptions {
        abs_tol: opts.abs_tol / T::lit(n as f64),
        ..opts
    };
    let mut acc = Estimate::exact(V::zero());
    let mut lo = a;
    for k in 0..n {
        let hi = if k + 1 == n { b } else { (lo + lo).min(b) };
        acc = acc.plus(adaptive(f, lo, hi, sub));
        lo = hi;
    }
    acc
}

struct Panel<V, T> {
    a: T,
    b: T,
    est: Estimate<V, T>,
    floored: bool,
}

/// Globally adaptive bisection of the panel with the largest error.
///
/// `converged` is false when the iteration budget runs out or the integrand
/// produces non-finite values. Panels whose error sits at the roundoff floor
/// are not split further.
pub fn adaptive<T, V, F>(f: &F, a: T, b: T, opts: AdaptiveOptions<T>) -> Estimate<V, T>
where
    T: Real,
    V: QuadValue<T>,
    F: Fn(T) -> V,
{
    if a == b {
        return Estimate::exact(V::zero());
    }
    let (first, floored) = gk21_floored(f, a, b);
    let mut panels = vec![Panel {
        a,
        b,
        est: first,
        floored,
    }];
    let mut evals = first.evals;
    let mut total = first.value;
    let mut total_err = first.abs_err;
    loop {
        if !total.is_finite() || !Float::is_finite(total_err) {
            return Estimate {
                value: total,
                abs_err: total_err,
                evals,
                converged: false,
            };
        }
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        if total_err <= target {
            break;
        }
        if panels.len() >= opts.max_intervals {
            return Estimate {
                value: total,
                abs_err: total_err,
                evals,
                converged: false,
            };
        }
        // worst splittable panel
        let mut worst = None;
        let mut worst_err = T::zero();
        for (k, p) in panels.iter().enumerate() {
            let width = (p.b - p.a).abs();
            let scale = p.a.abs().max(p.b.abs());
            if p.floored || width <= T::lit(100.0) * T::epsilon() * scale {
                continue;
            }
            if p.est.abs_err > worst_err {
                worst_err = p.est.abs_err;
                worst = Some(k);
            }
        }
        let Some(k) = worst else {
            // nothing left to split: roundoff-limited
            break;
        };
        let p = panels.swap_remove(k);
        let mid = p.a + (p.b - p.a) * T::lit(0.5);
        let (left, lf) = gk21_floored(f, p.a, mid);
        let (right, rf) = gk21_floored(f, mid, p.b);
        evals += 42;
        let new_err = left.abs_err + right.abs_err;
        total = total - p.est.value + left.value + right.value;
        total_err = total_err - p.est.abs_err + new_err;
        panels.push(Panel {
            a: p.a,
            b: mid,
            est: left,
            floored: lf,
        });
        panels.push(Panel {
            a: mid,
            b: p.b,
            est: right,
            floored: rf,
        });
    }
    // re-sum to shed accumulated cancellation in the running totals
    let mut value = V::zero();
    let mut err = T::zero();
    panels.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap_or(std::cmp::Ordering::Equal));
    for p in &panels {
        value = value + p.est.value;
        err = err + p.est.abs_err;
    }
    Estimate {
        value,
        abs_err: err,
        evals,
        converged: true,
    }
}
