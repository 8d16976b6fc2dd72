//! Scalar special functions: log-gamma helpers, the one-sided stable and
//! Mittag-Leffler densities, and the density of a stable subordinator whose
//! Lévy measure is truncated at `λ ∧ 1`.
//!
//! The stable and Mittag-Leffler densities are evaluated by their alternating
//! power series when the series certifies its tolerance against roundoff.
//! Otherwise they fall back to Zolotarev's integral representation
//!
//! ```text
//! F_{S_1}(s) = (1/π) ∫_0^π exp(-A(φ) s^{-α/(1-α)}) dφ,
//! A(φ) = [sin(αφ)/sin φ]^{1/(1-α)} · sin((1-α)φ)/sin(αφ),
//! ```
//!
//! which is a steepest-descent deformation of the Laplace inversion contour and
//! has a positive, non-oscillatory integrand.

use crate::error::{PdError, Result};
use crate::quadrature::{gauss_legendre, integrate, QuadratureControl};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

pub use statrs::function::gamma::{gamma, ln_gamma};

/// `ln k!`.
pub fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// `ln(Γ(r + k) / Γ(r))` for `r > 0`, summed directly for moderate `k`.
pub fn ln_rising(r: f64, k: u64) -> f64 {
    if k <= 64 {
        (0..k).map(|i| (r + i as f64).ln()).sum()
    } else {
        ln_gamma(r + k as f64) - ln_gamma(r)
    }
}

/// `ln γ(a, x)`, the log of the lower incomplete gamma function, `a > 0`.
pub fn ln_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        -x + a * x.ln() + sum.ln()
    } else {
        let ln_q = ln_upper_gamma_cf(a, x) - ln_gamma(a);
        ln_gamma(a) + (-ln_q.exp()).ln_1p()
    }
}

// Lentz continued fraction for ln Γ(a, x), x ≥ a + 1.
fn ln_upper_gamma_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    -x + a * x.ln() + h.ln()
}

/// Truncation rule and budget for the alternating series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl {
            max_terms: 200,
            abs_tol: 1e-15,
            rel_tol: 1e-11,
        }
    }
}

impl SeriesControl {
    pub fn new(max_terms: usize, abs_tol: f64, rel_tol: f64) -> Result<Self> {
        if max_terms == 0 || !(abs_tol > 0.0) || !(rel_tol > 0.0) {
            return Err(PdError::domain(
                "series control needs max_terms >= 1 and positive tolerances",
            ));
        }
        Ok(SeriesControl {
            max_terms,
            abs_tol,
            rel_tol,
        })
    }
}

/// Parameters of the stable subordinator `S_x(α)` with `E e^{-τ S_x} = e^{-x τ^α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub x: f64,
}

impl StableParams {
    pub fn new(alpha: f64, x: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(PdError::domain(format!("time x must be positive, got {x}")));
        }
        Ok(StableParams { alpha, x })
    }
}

/// Parameters of `Y_x(λ)`: the stable Lévy measure truncated at `λ ∧ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncSubParams {
    pub alpha: f64,
    pub x: f64,
    pub lambda: f64,
}

impl TruncSubParams {
    pub fn new(alpha: f64, x: f64, lambda: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(PdError::domain(format!("time x must be positive, got {x}")));
        }
        if !(lambda > 0.0) {
            return Err(PdError::domain(format!(
                "truncation level must be positive, got {lambda}"
            )));
        }
        Ok(TruncSubParams { alpha, x, lambda })
    }

    /// Effective truncation point `λ ∧ 1`.
    pub fn cutoff(&self) -> f64 {
        self.lambda.min(1.0)
    }

    /// `x (λ ∧ 1)^{-α} / Γ(1-α)`: the stable mass of jumps above the cutoff.
    pub fn removed_mass(&self) -> f64 {
        self.x * self.cutoff().powf(-self.alpha) / gamma(1.0 - self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PdError::domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// A summed series together with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub terms: usize,
    /// Estimated rounding error, `4ε Σ|t_k|`.
    pub roundoff: f64,
}

/// Sums `Σ_{k≥1} sign_k · exp(ln_env(k)) · sin(παk)` under the truncation rule.
///
/// Convergence is judged on the envelope `exp(ln_env(k))` so that zeros of
/// `sin(παk)` cannot fake termination.
fn alternating_stable_series<F: Fn(usize) -> f64>(
    alpha: f64,
    ln_env: F,
    ctl: &SeriesControl,
) -> Result<SeriesValue> {
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let mut small_run = 0;
    for k in 1..=ctl.max_terms {
        let env = ln_env(k).exp();
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * env * (PI * alpha * k as f64).sin();
        if !term.is_finite() {
            return Err(PdError::SeriesDivergence {
                terms: k,
                detail: "term overflow".into(),
            });
        }
        sum += term;
        abs_sum += term.abs();
        if env < ctl.abs_tol && env < ctl.rel_tol * sum.abs() {
            small_run += 1;
        } else {
            small_run = 0;
        }
        if small_run >= 2 {
            let roundoff = 4.0 * f64::EPSILON * abs_sum;
            let allowed = ctl.abs_tol.max(ctl.rel_tol * sum.abs());
            if roundoff > allowed {
                return Err(PdError::SeriesDivergence {
                    terms: k,
                    detail: format!("cancellation: roundoff {roundoff:e} above {allowed:e}"),
                });
            }
            return Ok(SeriesValue {
                value: sum,
                terms: k,
                roundoff,
            });
        }
    }
    Err(PdError::SeriesDivergence {
        terms: ctl.max_terms,
        detail: "truncation rule not met".into(),
    })
}

/// Raw power series for `f_{S_x(α)}(s)`; fails rather than falls back.
pub fn stable_density_series(p: &StableParams, s: f64, ctl: &SeriesControl) -> Result<SeriesValue> {
    if !(s > 0.0) {
        return Err(PdError::domain(format!("stable density needs s > 0, got {s}")));
    }
    let (a, ln_x, ln_s) = (p.alpha, p.x.ln(), s.ln());
    let mut r = alternating_stable_series(
        a,
        |k| {
            let kf = k as f64;
            ln_gamma(a * kf + 1.0) - ln_factorial(k as u64) + kf * ln_x - (a * kf + 1.0) * ln_s
        },
        ctl,
    )?;
    r.value /= PI;
    r.roundoff /= PI;
    Ok(r)
}

/// Raw power series for the Mittag-Leffler density `f_{L_α}(s)`.
pub fn mittag_leffler_series(alpha: f64, s: f64, ctl: &SeriesControl) -> Result<SeriesValue> {
    check_alpha(alpha)?;
    if !(s > 0.0) {
        return Err(PdError::domain(format!(
            "Mittag-Leffler density needs s > 0, got {s}"
        )));
    }
    let ln_s = s.ln();
    let mut r = alternating_stable_series(
        alpha,
        |k| {
            let kf = k as f64;
            ln_gamma(alpha * kf + 1.0) - ln_factorial(k as u64) + (kf - 1.0) * ln_s
        },
        ctl,
    )?;
    r.value /= PI * alpha;
    r.roundoff /= PI * alpha;
    Ok(r)
}

/// `ln A(φ)` for Zolotarev's representation.
fn zolotarev_ln_a(alpha: f64, phi: f64) -> f64 {
    let sa = (alpha * phi).sin().ln();
    ((sa - phi.sin().ln()) / (1.0 - alpha)) + ((1.0 - alpha) * phi).sin().ln() - sa
}

fn zolotarev_ctl() -> QuadratureControl {
    QuadratureControl {
        abs_tol: 1e-300,
        rel_tol: 1e-13,
        max_subdivisions: 2000,
    }
}

/// `(1/π) ∫_0^π A e^{-A w} dφ`, evaluated in log form.
fn zolotarev_density_integral(alpha: f64, w: f64) -> Result<f64> {
    let ln_w = w.ln();
    let r = integrate(
        |phi| {
            let ln_a = zolotarev_ln_a(alpha, phi);
            let a = ln_a.exp();
            (ln_a + ln_w - a * w).exp()
        },
        0.0,
        PI,
        &zolotarev_ctl(),
    )?;
    Ok(r.value / PI)
}

/// `(1/π) ∫_0^π e^{-A w} dφ`.
fn zolotarev_cdf_integral(alpha: f64, w: f64) -> Result<f64> {
    let r = integrate(
        |phi| (-zolotarev_ln_a(alpha, phi).exp() * w).exp(),
        0.0,
        PI,
        &zolotarev_ctl(),
    )?;
    Ok(r.value / PI)
}

/// Stable density through Zolotarev's integral; valid for every `s > 0`.
pub fn stable_density_integral(p: &StableParams, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(PdError::domain(format!("stable density needs s > 0, got {s}")));
    }
    let a = p.alpha;
    let scale = p.x.powf(-1.0 / a);
    let u = s * scale;
    let w = u.powf(-a / (1.0 - a));
    // integral carries the factor w
    let i = zolotarev_density_integral(a, w)?;
    Ok(scale * a / ((1.0 - a) * u) * i)
}

/// `P(S_x(α) ≤ s)`.
pub fn stable_cdf(p: &StableParams, s: f64) -> Result<f64> {
    if s <= 0.0 {
        return Ok(0.0);
    }
    let a = p.alpha;
    let u = s * p.x.powf(-1.0 / a);
    zolotarev_cdf_integral(a, u.powf(-a / (1.0 - a)))
}

/// One-sided stable density `f_{S_x(α)}(s)`.
///
/// The alternating series is used when it certifies `ctl`; otherwise the
/// value comes from [`stable_density_integral`]. Tiny negative rounding
/// residue is clamped to zero.
pub fn stable_density(p: &StableParams, s: f64, ctl: &SeriesControl) -> Result<f64> {
    match stable_density_series(p, s, ctl) {
        Ok(v) => Ok(v.value.max(0.0)),
        Err(PdError::SeriesDivergence { .. }) => stable_density_integral(p, s),
        Err(e) => Err(e),
    }
}

/// Mittag-Leffler density through Zolotarev's integral.
pub fn mittag_leffler_integral(alpha: f64, s: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(s > 0.0) {
        return Err(PdError::domain(format!(
            "Mittag-Leffler density needs s > 0, got {s}"
        )));
    }
    let w = s.powf(1.0 / (1.0 - alpha));
    let i = zolotarev_density_integral(alpha, w)?;
    // i carries w = s^{1/(1-α)}; the prefactor is s^{α/(1-α)} / (1-α)
    Ok(i / ((1.0 - alpha) * s))
}

/// Mittag-Leffler density `f_{L_α}(s)` (series with integral fallback).
/// At `s = 0` only the first series term survives: `1/Γ(1-α)`.
pub fn mittag_leffler_density(alpha: f64, s: f64, ctl: &SeriesControl) -> Result<f64> {
    if s == 0.0 {
        check_alpha(alpha)?;
        return Ok(1.0 / gamma(1.0 - alpha));
    }
    match mittag_leffler_series(alpha, s, ctl) {
        Ok(v) => Ok(v.value.max(0.0)),
        Err(PdError::SeriesDivergence { .. }) => mittag_leffler_integral(alpha, s),
        Err(e) => Err(e),
    }
}

/// `P(L_α ≤ s) = 1 - (1/π) ∫_0^π exp(-A(φ) s^{1/(1-α)}) dφ`.
pub fn mittag_leffler_cdf(alpha: f64, s: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if s <= 0.0 {
        return Ok(0.0);
    }
    let tail = zolotarev_cdf_integral(alpha, s.powf(1.0 / (1.0 - alpha)))?;
    Ok((1.0 - tail).clamp(0.0, 1.0))
}

/// Both sides of `(1/(αx)) f_{S_x(α)}(1) = f_{L_α}(x)`, each from its own series.
pub fn sml_bridge(alpha: f64, x: f64, ctl: &SeriesControl) -> Result<(f64, f64)> {
    let p = StableParams::new(alpha, x)?;
    let lhs = stable_density(&p, 1.0, ctl)? / (alpha * x);
    let rhs = mittag_leffler_density(alpha, x, ctl)?;
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// Truncated subordinator density by characteristic-function inversion.

/// `g(w) - 1/α` where `g(w) = ∫_0^1 (e^{iwu} - 1) u^{-α-1} du`, `w ≥ 0`.
pub(crate) fn compensated_g(alpha: f64, w: f64) -> Complex64 {
    if w <= 4.0 {
        // entire power series Σ (iw)^k / (k! (k - α))
        let iw = Complex64::new(0.0, w);
        let mut pow = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for k in 1..200 {
            pow = pow * iw / k as f64;
            let t = pow / (k as f64 - alpha);
            sum += t;
            if t.norm() < 1e-18 * sum.norm().max(1e-300) {
                break;
            }
        }
        sum - 1.0 / alpha
    } else {
        // Γ(-α)(-iw)^α - ∫_1^∞ e^{iwu} u^{-α-1} du
        let gamma_neg = -gamma(1.0 - alpha) / alpha;
        let pw = Complex64::from_polar(w.powf(alpha), -PI * alpha / 2.0);
        gamma_neg * pw - oscillatory_tail(alpha, w)
    }
}

/// `∫_1^∞ e^{iwu} u^{-α-1} du = e^{iw} · CF` where the continued fraction is
/// that of `Γ(-α, -iw)` in Legendre form.
fn oscillatory_tail(alpha: f64, w: f64) -> Complex64 {
    const TINY: f64 = 1e-300;
    let a = -alpha;
    let z = Complex64::new(0.0, -w);
    let mut b = z + (1.0 - a);
    let mut c = Complex64::new(1.0 / TINY, 0.0);
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..5000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = d * an + b;
        if d.norm() < TINY {
            d = Complex64::new(TINY, 0.0);
        }
        c = b + an / c;
        if c.norm() < TINY {
            c = Complex64::new(TINY, 0.0);
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    Complex64::from_polar(1.0, w) * h
}

/// Compensated log characteristic function
/// `x ∫_0^L (e^{iνy} - 1) Π(dy) - x L^{-α}/Γ(1-α)` with `L = λ ∧ 1`.
pub(crate) fn compensated_log_cf(p: &TruncSubParams, nu: f64) -> Complex64 {
    let l = p.cutoff();
    let c = p.x * p.alpha / gamma(1.0 - p.alpha) * l.powf(-p.alpha);
    compensated_g(p.alpha, nu * l) * c
}

const INVERSION_ABS_TOL: f64 = 1e-10;
const INVERSION_MAX_NU: f64 = 1e7;

struct PanelRules {
    fine: (Vec<f64>, Vec<f64>),
    coarse: (Vec<f64>, Vec<f64>),
}

fn panel_rules() -> &'static PanelRules {
    static RULES: OnceLock<PanelRules> = OnceLock::new();
    RULES.get_or_init(|| PanelRules {
        fine: gauss_legendre(20),
        coarse: gauss_legendre(14),
    })
}

/// `e^{-x(λ∧1)^{-α}/Γ(1-α)} f_{Y_x(λ)}(y)` by Fourier inversion.
///
/// This is the density of `S_x(α)` at `y` restricted to paths with no jump
/// above `λ ∧ 1`; it stays O(1) where `f_{Y_x(λ)}` itself overflows.
pub fn tilted_trunc_density_inversion(p: &TruncSubParams, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(PdError::domain(format!(
            "truncated subordinator density needs y > 0, got {y}"
        )));
    }
    let a = p.alpha;
    let decay = p.x * (PI * a / 2.0).cos();
    let mut nu_max = (32.0 / decay).powf(1.0 / a).max(8.0 / p.cutoff());
    loop {
        if nu_max > INVERSION_MAX_NU {
            return Err(PdError::Inversion(format!(
                "characteristic function has not decayed by ν = {INVERSION_MAX_NU:e}"
            )));
        }
        if compensated_log_cf(p, nu_max).re < -30.0 {
            break;
        }
        nu_max *= 1.5;
    }
    let width = PI / y.max(1.0);
    let panels = (nu_max / width).ceil() as usize;
    let rules = panel_rules();
    let integrand = |nu: f64| (compensated_log_cf(p, nu) - Complex64::new(0.0, nu * y)).exp().re;
    let mut fine_total = 0.0;
    let mut err_total = 0.0;
    for i in 0..panels {
        let lo = i as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        let fine: f64 = rules
            .fine
            .0
            .iter()
            .zip(&rules.fine.1)
            .map(|(t, w)| w * integrand(mid + half * t))
            .sum::<f64>()
            * half;
        let coarse: f64 = rules
            .coarse
            .0
            .iter()
            .zip(&rules.coarse.1)
            .map(|(t, w)| w * integrand(mid + half * t))
            .sum::<f64>()
            * half;
        fine_total += fine;
        err_total += (fine - coarse).abs();
    }
    if err_total > INVERSION_ABS_TOL * PI {
        return Err(PdError::Inversion(format!(
            "panel error estimate {:e} above {INVERSION_ABS_TOL:e}",
            err_total / PI
        )));
    }
    Ok(fine_total / PI)
}

/// `e^{-x(λ∧1)^{-α}/Γ(1-α)} f_{Y_x(λ)}(y)`, closed form where available.
///
/// For `λ ≥ 1` and `y ≤ 1` no path reaching `y` can contain a jump above 1,
/// so the value is exactly `f_{S_x(α)}(y)`.
pub fn tilted_trunc_density(p: &TruncSubParams, y: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(y > 0.0) {
        return Err(PdError::domain(format!(
            "truncated subordinator density needs y > 0, got {y}"
        )));
    }
    if p.lambda >= 1.0 && y <= 1.0 {
        stable_density(&StableParams::new(p.alpha, p.x)?, y, ctl)
    } else {
        tilted_trunc_density_inversion(p, y)
    }
}

/// Density `f_{Y_x(λ)}(y)` of the subordinator with Lévy measure
/// `α y^{-α-1} dy / Γ(1-α)` on `(0, λ ∧ 1)`.
///
/// Constant in `λ` on `[1, ∞)`. For `λ ≥ 1, y ≤ 1` this is
/// `e^{x/Γ(1-α)} f_{S_x(α)}(y)`; elsewhere the characteristic function is
/// inverted numerically.
pub fn trunc_sub_density(p: &TruncSubParams, y: f64) -> Result<f64> {
    let tilted = tilted_trunc_density(p, y, &SeriesControl::default())?;
    Ok(p.removed_mass().exp() * tilted)
}
