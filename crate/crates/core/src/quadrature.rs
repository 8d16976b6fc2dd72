//! Adaptive Gauss–Kronrod integration (scalar and vector-valued) and
//! Gauss–Legendre rules for fixed-panel work.

use crate::error::{PdError, Result};
use serde::{Deserialize, Serialize};

/// Tolerances and subdivision budget for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureControl {
    fn default() -> Self {
        QuadratureControl {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_subdivisions: 4000,
        }
    }
}

impl QuadratureControl {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self> {
        if !(abs_tol > 0.0 && rel_tol > 0.0) {
            return Err(PdError::domain("quadrature tolerances must be positive"));
        }
        if max_subdivisions == 0 {
            return Err(PdError::domain("max_subdivisions must be at least 1"));
        }
        Ok(QuadratureControl {
            abs_tol,
            rel_tol,
            max_subdivisions,
        })
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
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
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// One GK21 panel. Returns (kronrod estimate, |kronrod - gauss|).
fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[10] * fc;
    let mut gauss = 0.0;
    for i in 0..10 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn gk21_vec<F: FnMut(f64, &mut [f64])>(
    f: &mut F,
    a: f64,
    b: f64,
    buf: &mut [f64],
    kron: &mut [f64],
    err: &mut [f64],
) {
    let dim = kron.len();
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut gauss = vec![0.0; dim];
    f(c, buf);
    for d in 0..dim {
        kron[d] = WGK[10] * buf[d];
    }
    let mut tmp = vec![0.0; dim];
    for i in 0..10 {
        let dx = h * XGK[i];
        f(c - dx, buf);
        f(c + dx, &mut tmp);
        for d in 0..dim {
            let s = buf[d] + tmp[d];
            kron[d] += WGK[i] * s;
            if i % 2 == 1 {
                gauss[d] += WG[i / 2] * s;
            }
        }
    }
    for d in 0..dim {
        err[d] = ((kron[d] - gauss[d]) * h).abs();
        kron[d] *= h;
    }
}

/// Adaptive bisection integral of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    ctl: &QuadratureControl,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
        });
    }
    let (v, e) = gk21(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut total = v;
    let mut total_err = e;
    while total_err > ctl.target(total) {
        if intervals.len() >= ctl.max_subdivisions {
            return Err(PdError::Quadrature {
                error: total_err,
                tolerance: ctl.target(total),
            });
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, pv, pe) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine resolution
            return Err(PdError::Quadrature {
                error: total_err,
                tolerance: ctl.target(total),
            });
        }
        let (v1, e1) = gk21(&mut f, lo, mid);
        let (v2, e2) = gk21(&mut f, mid, hi);
        total += v1 + v2 - pv;
        total_err += e1 + e2 - pe;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    // recompute sums to shed accumulated cancellation
    let value = intervals.iter().map(|i| i.2).sum();
    let error = intervals.iter().map(|i| i.3).sum();
    Ok(QuadResult { value, error })
}

/// Integral of `f` over `[a, ∞)` through `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    ctl: &QuadratureControl,
) -> Result<QuadResult> {
    integrate(
        |t| {
            let one_minus = 1.0 - t;
            let x = a + t / one_minus;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / (one_minus * one_minus)
            }
        },
        0.0,
        1.0,
        ctl,
    )
}

/// Vector-valued adaptive integral; every component must meet the tolerance.
///
/// `f(x, out)` writes the `dim` integrand components at `x` into `out`.
pub fn integrate_vec<F: FnMut(f64, &mut [f64])>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    ctl: &QuadratureControl,
) -> Result<(Vec<f64>, Vec<f64>)> {
    struct Panel {
        lo: f64,
        hi: f64,
        val: Vec<f64>,
        err: Vec<f64>,
    }
    let mut buf = vec![0.0; dim];
    let eval = |lo: f64, hi: f64, f: &mut F, buf: &mut [f64]| {
        let mut val = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        gk21_vec(f, lo, hi, buf, &mut val, &mut err);
        Panel { lo, hi, val, err }
    };
    let first = eval(a, b, &mut f, &mut buf);
    let mut total = first.val.clone();
    let mut total_err = first.err.clone();
    let mut panels = vec![first];
    loop {
        let targets: Vec<f64> = total.iter().map(|v| ctl.target(*v)).collect();
        let worst = total_err
            .iter()
            .zip(&targets)
            .map(|(e, t)| e / t)
            .fold(0.0_f64, f64::max);
        if worst <= 1.0 {
            break;
        }
        if panels.len() >= ctl.max_subdivisions {
            let (e, t) = total_err
                .iter()
                .zip(&targets)
                .max_by(|x, y| (x.0 / x.1).total_cmp(&(y.0 / y.1)))
                .map(|(e, t)| (*e, *t))
                .unwrap_or((f64::NAN, f64::NAN));
            return Err(PdError::Quadrature {
                error: e,
                tolerance: t,
            });
        }
        let badness = |p: &Panel| {
            p.err
                .iter()
                .zip(&targets)
                .map(|(e, t)| e / t)
                .fold(0.0_f64, f64::max)
        };
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| badness(x.1).total_cmp(&badness(y.1)))
            .expect("non-empty");
        let p = panels.swap_remove(idx);
        let mid = 0.5 * (p.lo + p.hi);
        if mid <= p.lo || mid >= p.hi {
            return Err(PdError::Quadrature {
                error: worst,
                tolerance: 1.0,
            });
        }
        let left = eval(p.lo, mid, &mut f, &mut buf);
        let right = eval(mid, p.hi, &mut f, &mut buf);
        for d in 0..dim {
            total[d] += left.val[d] + right.val[d] - p.val[d];
            total_err[d] += left.err[d] + right.err[d] - p.err[d];
        }
        panels.push(left);
        panels.push(right);
    }
    let mut value = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    for p in &panels {
        for d in 0..dim {
            value[d] += p.val[d];
            error[d] += p.err[d];
        }
    }
    Ok((value, error))
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
