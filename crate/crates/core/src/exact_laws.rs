//! Exact finite-n joint law of `(M_n, K_n)` for the four models.
//!
//! The closed-form sampling formulas (Ewens, Pitman, PD_α) are evaluated in
//! log space. The trimmed law PD_α^(r) is a one-dimensional λ-integral; it is
//! computed in `s = ln λ` for every spectrum of one `n` at once. Two facts
//! make the range finite:
//!
//! * as `λ → 0` the integrand behaves like `λ^n`, so the left tail is
//!   negligible below `s_lo` and is added as `f(s_lo)/n`;
//! * above `Λ_SAT` the incomplete gammas have saturated, `Ψ(λ) = λ^α Γ(1-α)`
//!   to machine precision and the integrand is exactly `C e^{-αrs}`, so the
//!   right tail is `f(s_sat)/(αr)`.

use crate::error::{PdError, Result};
use crate::quadrature::{integrate, integrate_vec, QuadratureControl};
use crate::special_fn::{check_alpha, ln_factorial, ln_gamma, ln_lower_gamma, ln_rising};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest `n` for which spectra are enumerated (p(30) = 5604).
pub const ENUMERATION_CAP: usize = 30;

/// Above this λ every quantity in the trimmed integrands has saturated.
const LAMBDA_SAT: f64 = 300.0;

/// One of the four species-sampling models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Ewens { theta: f64 },
    StablePd { alpha: f64 },
    PitmanYor { alpha: f64, theta: f64 },
    TrimmedStable { alpha: f64, r: f64 },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Ewens { theta } => {
                if theta > 0.0 && theta.is_finite() {
                    Ok(())
                } else {
                    Err(PdError::domain(format!("theta must be positive, got {theta}")))
                }
            }
            ModelSpec::StablePd { alpha } => check_alpha(alpha),
            ModelSpec::PitmanYor { alpha, theta } => {
                check_alpha(alpha)?;
                if theta > -alpha && theta.is_finite() {
                    Ok(())
                } else {
                    Err(PdError::domain(format!(
                        "theta must exceed -alpha = {}, got {theta}",
                        -alpha
                    )))
                }
            }
            ModelSpec::TrimmedStable { alpha, r } => {
                check_alpha(alpha)?;
                if r > 0.0 && r.is_finite() {
                    Ok(())
                } else {
                    Err(PdError::domain(format!("r must be positive, got {r}")))
                }
            }
        }
    }

    /// The stable index, if the model has one.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            ModelSpec::Ewens { .. } => None,
            ModelSpec::StablePd { alpha }
            | ModelSpec::PitmanYor { alpha, .. }
            | ModelSpec::TrimmedStable { alpha, .. } => Some(alpha),
        }
    }

    /// Exact probability of one spectrum.
    pub fn pmf(&self, spec: &FrequencySpectrum, ctl: &QuadratureControl) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            ModelSpec::Ewens { theta } => ewens_pmf(theta, spec),
            ModelSpec::StablePd { alpha } => stable_pd_pmf(alpha, spec),
            ModelSpec::PitmanYor { alpha, theta } => pitman_pmf(alpha, theta, spec),
            ModelSpec::TrimmedStable { alpha, r } => trimmed_pmf_integral(alpha, r, spec, ctl)?,
        })
    }

    /// Exact probabilities of a list of spectra sharing the same `n`.
    pub fn pmfs(&self, spectra: &[FrequencySpectrum], ctl: &QuadratureControl) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            ModelSpec::TrimmedStable { alpha, r } => trimmed_pmfs_integral(alpha, r, spectra, ctl),
            _ => spectra.iter().map(|s| self.pmf(s, ctl)).collect(),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModelSpec::Ewens { theta } => write!(f, "ewens(theta={theta})"),
            ModelSpec::StablePd { alpha } => write!(f, "stable(alpha={alpha})"),
            ModelSpec::PitmanYor { alpha, theta } => write!(f, "pitman(alpha={alpha},theta={theta})"),
            ModelSpec::TrimmedStable { alpha, r } => write!(f, "trimmed(alpha={alpha},r={r})"),
        }
    }
}

/// Frequency spectrum `m = (m_1, ..., m_n)`: `m_j` species seen exactly `j` times.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrequencySpectrum {
    n: usize,
    m: Vec<u32>,
}

impl FrequencySpectrum {
    /// Validates `Σ j m_j = n` where `n = m.len()`.
    pub fn new(m: Vec<u32>) -> Result<Self> {
        let n = m.len();
        if n == 0 {
            return Err(PdError::domain("spectrum needs n >= 1"));
        }
        let total: u64 = m
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c as u64)
            .sum();
        if total != n as u64 {
            return Err(PdError::domain(format!(
                "spectrum has sum j*m_j = {total}, expected {n}"
            )));
        }
        Ok(FrequencySpectrum { n, m })
    }

    /// Builds the spectrum of a list of species sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let n: usize = sizes.iter().sum();
        if n == 0 {
            return Err(PdError::domain("spectrum needs n >= 1"));
        }
        let mut m = vec![0u32; n];
        for &s in sizes {
            if s == 0 {
                return Err(PdError::domain("species sizes must be positive"));
            }
            m[s - 1] += 1;
        }
        Ok(FrequencySpectrum { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> &[u32] {
        &self.m
    }

    /// `m_j` for `j ≥ 1` (zero past `n`).
    pub fn count(&self, j: usize) -> u32 {
        if j == 0 || j > self.n {
            0
        } else {
            self.m[j - 1]
        }
    }

    /// Number of species `k = Σ m_j`.
    pub fn k(&self) -> usize {
        self.m.iter().map(|&c| c as usize).sum()
    }

    /// `(j, m_j)` for the nonzero entries.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.m
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i + 1, c))
    }

    fn ln_prod_factorials(&self) -> f64 {
        self.nonzero().map(|(_, c)| ln_factorial(c as u64)).sum()
    }
}

/// Every spectrum of `n`, in descending lexicographic order of `m`.
pub fn enumerate_spectra(n: usize) -> Result<Vec<FrequencySpectrum>> {
    if n == 0 {
        return Err(PdError::domain("n must be at least 1"));
    }
    if n > ENUMERATION_CAP {
        return Err(PdError::CapExceeded {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    fn fill(j: usize, remaining: usize, m: &mut Vec<u32>, out: &mut Vec<FrequencySpectrum>) {
        let n = m.len();
        if remaining == 0 {
            out.push(FrequencySpectrum { n, m: m.clone() });
            return;
        }
        if j > n {
            return;
        }
        for c in (0..=remaining / j).rev() {
            m[j - 1] = c as u32;
            fill(j + 1, remaining - c * j, m, out);
        }
        m[j - 1] = 0;
    }
    let mut out = Vec::new();
    let mut m = vec![0u32; n];
    fill(1, n, &mut m, &mut out);
    Ok(out)
}

/// Number of integer partitions of `n`.
pub fn partition_count(n: usize) -> u64 {
    let mut p = vec![0u64; n + 1];
    p[0] = 1;
    for part in 1..=n {
        for t in part..=n {
            p[t] += p[t - part];
        }
    }
    p[n]
}

// ---------------------------------------------------------------------------
// Ψ and F_j

/// `Ψ(λ) - 1 = α ∫_0^1 (1 - e^{-λz}) z^{-α-1} dz`.
pub fn psi_minus_one(alpha: f64, lam: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(lam > 0.0) {
        return Err(PdError::domain(format!("psi needs lambda > 0, got {lam}")));
    }
    Ok(psi_minus_one_raw(alpha, lam))
}

fn psi_minus_one_raw(alpha: f64, lam: f64) -> f64 {
    if lam <= 1.0 {
        psi_minus_one_series(alpha, lam)
    } else {
        psi_minus_one_closed(alpha, lam)
    }
}

// α Σ (-1)^{k+1} λ^k / (k! (k - α))
fn psi_minus_one_series(alpha: f64, lam: f64) -> f64 {
    let mut pow = 1.0;
    let mut sum = 0.0;
    for k in 1..80 {
        pow *= lam / k as f64;
        let t = pow / (k as f64 - alpha);
        sum += if k % 2 == 1 { t } else { -t };
        if t < 1e-18 * sum.abs() {
            break;
        }
    }
    alpha * sum
}

// integration by parts: Ψ = e^{-λ} + λ^α γ(1-α, λ)
fn psi_minus_one_closed(alpha: f64, lam: f64) -> f64 {
    (alpha * lam.ln() + ln_lower_gamma(1.0 - alpha, lam)).exp() + (-lam).exp_m1()
}

/// `Ψ(λ)` of the trimmed model.
pub fn psi(alpha: f64, lam: f64) -> Result<f64> {
    Ok(1.0 + psi_minus_one(alpha, lam)?)
}

/// `ln Ψ(e^s)`, valid for arbitrarily large `s`.
fn ln_psi_at(alpha: f64, s: f64) -> f64 {
    if s >= LAMBDA_SAT.ln() {
        alpha * s + ln_gamma(1.0 - alpha)
    } else {
        psi_minus_one_raw(alpha, s.exp()).ln_1p()
    }
}

/// `F_j(λ) = (α/j!) γ(j - α, λ)`.
pub fn big_f(alpha: f64, j: usize, lam: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if j == 0 {
        return Err(PdError::domain("F_j needs j >= 1"));
    }
    if !(lam > 0.0) {
        return Err(PdError::domain(format!("F_j needs lambda > 0, got {lam}")));
    }
    Ok(ln_big_f(alpha, j, lam).exp())
}

fn ln_big_f(alpha: f64, j: usize, lam: f64) -> f64 {
    alpha.ln() + ln_lower_gamma(j as f64 - alpha, lam) - ln_factorial(j as u64)
}

/// `F_j(∞) = α Γ(j - α) / j!`.
pub fn big_f_limit(alpha: f64, j: usize) -> f64 {
    (alpha.ln() + ln_gamma(j as f64 - alpha) - ln_factorial(j as u64)).exp()
}

// ---------------------------------------------------------------------------
// Closed-form sampling formulas

fn ln_ascending(start: f64, step: f64, count: usize) -> f64 {
    (0..count).map(|i| (start + step * i as f64).ln()).sum()
}

// Σ_j m_j ln((1-α)_{j-1} / j!) - Σ ln m_j!
fn ln_stable_weights(alpha: f64, spec: &FrequencySpectrum) -> f64 {
    spec.nonzero()
        .map(|(j, c)| {
            c as f64 * (ln_ascending(1.0 - alpha, 1.0, j - 1) - ln_factorial(j as u64))
                - ln_factorial(c as u64)
        })
        .sum()
}

/// Ewens sampling formula `n! θ^k / θ^{(n)} Π (1/m_j!) j^{-m_j}`.
pub fn ewens_pmf(theta: f64, spec: &FrequencySpectrum) -> f64 {
    let n = spec.n();
    let k = spec.k();
    let ln_p = ln_factorial(n as u64) + k as f64 * theta.ln()
        - ln_ascending(theta, 1.0, n)
        - spec
            .nonzero()
            .map(|(j, c)| c as f64 * (j as f64).ln() + ln_factorial(c as u64))
            .sum::<f64>();
    ln_p.exp()
}

/// PD_α sampling formula `n (k-1)!/α (α/Γ(1-α))^k Π (1/m_j!) (Γ(j-α)/j!)^{m_j}`.
pub fn stable_pd_pmf(alpha: f64, spec: &FrequencySpectrum) -> f64 {
    let n = spec.n();
    let k = spec.k();
    let ln_p = (n as f64).ln() + ln_factorial(k as u64 - 1) + (k as f64 - 1.0) * alpha.ln()
        + ln_stable_weights(alpha, spec);
    ln_p.exp()
}

/// Pitman's sampling formula for PD(α, θ).
pub fn pitman_pmf(alpha: f64, theta: f64, spec: &FrequencySpectrum) -> f64 {
    let n = spec.n();
    let k = spec.k();
    // n! Π_{i=1}^{k-1}(θ + iα) / (θ+1)_{n-1}
    let ln_p = ln_factorial(n as u64) + ln_ascending(theta + alpha, alpha, k - 1)
        - ln_ascending(theta + 1.0, 1.0, n - 1)
        + ln_stable_weights(alpha, spec);
    ln_p.exp()
}

// ---------------------------------------------------------------------------
// Trimmed law PD_α^(r)

struct SpectrumTerms {
    k: usize,
    nonzero: Vec<(usize, f64)>,
    ln_prod_fact: f64,
}

fn spectrum_terms(spectra: &[FrequencySpectrum]) -> Result<(usize, Vec<SpectrumTerms>)> {
    let n = spectra.first().map(|s| s.n()).unwrap_or(1);
    if spectra.iter().any(|s| s.n() != n) {
        return Err(PdError::domain("all spectra must share the same n"));
    }
    let terms = spectra
        .iter()
        .map(|s| SpectrumTerms {
            k: s.k(),
            nonzero: s.nonzero().map(|(j, c)| (j, c as f64)).collect(),
            ln_prod_fact: s.ln_prod_factorials(),
        })
        .collect();
    Ok((n, terms))
}

/// `ln F_j(e^s)` for `j = 1..=n`, saturated above `Λ_SAT`.
fn ln_f_vector(alpha: f64, n: usize, s: f64) -> Vec<f64> {
    let sat = s >= LAMBDA_SAT.ln();
    let lam = s.exp();
    (1..=n)
        .map(|j| {
            if sat {
                big_f_limit(alpha, j).ln()
            } else {
                ln_big_f(alpha, j, lam)
            }
        })
        .collect()
}

fn trim_ranges(n: usize, r: f64) -> (f64, f64) {
    let s_lo = -(60.0 / n as f64) - 5.0 - r.ln_1p();
    (s_lo, LAMBDA_SAT.ln())
}

/// Integrates `exp(ln_f(s))` over `s ∈ R`; `ln_f` fills one log-value per spectrum.
fn trimmed_integral<G>(n: usize, alpha: f64, r: f64, dim: usize, mut ln_f: G, ctl: &QuadratureControl) -> Result<Vec<f64>>
where
    G: FnMut(f64, &mut [f64]) -> Result<()>,
{
    let (s_lo, s_sat) = trim_ranges(n, r);
    let mut failure: Option<PdError> = None;
    let (mut body, _) = integrate_vec(
        |s, out| {
            if let Err(e) = ln_f(s, out) {
                failure.get_or_insert(e);
            }
            for v in out.iter_mut() {
                *v = v.exp();
            }
        },
        dim,
        s_lo,
        s_sat,
        ctl,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut buf = vec![0.0; dim];
    ln_f(s_lo, &mut buf)?;
    for (b, v) in body.iter_mut().zip(&buf) {
        *b += v.exp() / n as f64;
    }
    ln_f(s_sat, &mut buf)?;
    for (b, v) in body.iter_mut().zip(&buf) {
        *b += v.exp() / (alpha * r);
    }
    Ok(body)
}

fn check_trimmed(alpha: f64, r: f64) -> Result<()> {
    ModelSpec::TrimmedStable { alpha, r }.validate()
}

/// Trimmed pmf of every spectrum in `spectra` from the direct λ-integral
/// `n ∫ Γ(r+k)/Γ(r) λ^{αk} Ψ^{-(r+k)} Π F_j^{m_j}/m_j! dλ/λ`.
pub fn trimmed_pmfs_integral(
    alpha: f64,
    r: f64,
    spectra: &[FrequencySpectrum],
    ctl: &QuadratureControl,
) -> Result<Vec<f64>> {
    check_trimmed(alpha, r)?;
    if spectra.is_empty() {
        return Ok(Vec::new());
    }
    let (n, terms) = spectrum_terms(spectra)?;
    let consts: Vec<f64> = terms
        .iter()
        .map(|t| (n as f64).ln() + ln_rising(r, t.k as u64) - t.ln_prod_fact)
        .collect();
    trimmed_integral(
        n,
        alpha,
        r,
        terms.len(),
        |s, out| {
            let ln_f = ln_f_vector(alpha, n, s);
            let ln_psi = ln_psi_at(alpha, s);
            for ((o, t), c) in out.iter_mut().zip(&terms).zip(&consts) {
                let k = t.k as f64;
                *o = c + alpha * k * s - (r + k) * ln_psi
                    + t.nonzero.iter().map(|&(j, m)| m * ln_f[j - 1]).sum::<f64>();
            }
            Ok(())
        },
        ctl,
    )
}

/// Single-spectrum form of [`trimmed_pmfs_integral`].
pub fn trimmed_pmf_integral(alpha: f64, r: f64, spec: &FrequencySpectrum, ctl: &QuadratureControl) -> Result<f64> {
    Ok(trimmed_pmfs_integral(alpha, r, std::slice::from_ref(spec), ctl)?[0])
}

fn inner_control() -> QuadratureControl {
    QuadratureControl {
        abs_tol: 1e-300,
        rel_tol: 1e-13,
        max_subdivisions: 500,
    }
}

/// `ln ℓ_n(e^s)` with the numerator integral evaluated by quadrature.
fn ln_ell_at(alpha: f64, n: usize, s: f64) -> Result<f64> {
    let lam_eff = s.min(LAMBDA_SAT.ln()).exp();
    // ∫_0^λ e^{-z} z^{-α-1} Σ_{j≤n} z^j/j! dz with z = λ t^{1/(1-α)}
    let num = integrate(
        |t| {
            let z = lam_eff * t.powf(1.0 / (1.0 - alpha));
            let mut term = 1.0;
            let mut sum = 0.0;
            for j in 1..=n {
                term *= if j == 1 { 1.0 } else { z / j as f64 };
                sum += term;
            }
            // sum = Σ_{j≤n} z^{j-1}/j!
            (-z).exp() * sum
        },
        0.0,
        1.0,
        &inner_control(),
    )?
    .value
        * lam_eff.powf(1.0 - alpha)
        / (1.0 - alpha);
    let ln_psi = ln_psi_at(alpha, s);
    let ln_psi_m1 = if s >= LAMBDA_SAT.ln() {
        ln_psi + (-(-ln_psi).exp()).ln_1p()
    } else {
        psi_minus_one_raw(alpha, s.exp()).ln()
    };
    // denominator (Ψ - 1) / (α λ^α)
    Ok(num.ln() - (ln_psi_m1 - alpha.ln() - alpha * s))
}

/// `ℓ_n(λ) = (Ψ_n(λ) - 1)/(Ψ(λ) - 1) ≤ 1`.
pub fn ell_n(alpha: f64, n: usize, lam: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 || !(lam > 0.0) {
        return Err(PdError::domain("ell_n needs n >= 1 and lambda > 0"));
    }
    Ok(ln_ell_at(alpha, n, lam.ln())?.exp())
}

/// Trimmed pmf from the mixture representation
/// `n ∫ ℓ_n^k P(Mult(k, p_n) = m) P(NegBin(r, 1/Ψ) = k) dλ/λ`.
pub fn trimmed_pmfs_negbin(
    alpha: f64,
    r: f64,
    spectra: &[FrequencySpectrum],
    ctl: &QuadratureControl,
) -> Result<Vec<f64>> {
    check_trimmed(alpha, r)?;
    if spectra.is_empty() {
        return Ok(Vec::new());
    }
    let (n, terms) = spectrum_terms(spectra)?;
    trimmed_integral(
        n,
        alpha,
        r,
        terms.len(),
        |s, out| {
            let ln_f = ln_f_vector(alpha, n, s);
            let max = ln_f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ln_sum_f = max + ln_f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let ln_ell = ln_ell_at(alpha, n, s)?;
            let ln_psi = ln_psi_at(alpha, s);
            // ln(1 - 1/Ψ)
            let ln_q = (-(-ln_psi).exp()).ln_1p();
            for (o, t) in out.iter_mut().zip(&terms) {
                let k = t.k as f64;
                let ln_fact_k = ln_factorial(t.k as u64);
                let ln_mult = ln_fact_k - t.ln_prod_fact
                    + t.nonzero
                        .iter()
                        .map(|&(j, m)| m * (ln_f[j - 1] - ln_sum_f))
                        .sum::<f64>();
                let ln_nb = ln_rising(r, t.k as u64) - ln_fact_k + k * ln_q - r * ln_psi;
                *o = (n as f64).ln() + k * ln_ell + ln_mult + ln_nb;
            }
            Ok(())
        },
        ctl,
    )
}

/// Single-spectrum form of [`trimmed_pmfs_negbin`].
pub fn trimmed_pmf_negbin(alpha: f64, r: f64, spec: &FrequencySpectrum, ctl: &QuadratureControl) -> Result<f64> {
    Ok(trimmed_pmfs_negbin(alpha, r, std::slice::from_ref(spec), ctl)?[0])
}

// ---------------------------------------------------------------------------
// Finite-n proportions

/// Finite-n proportions `q_{jn}`, `j = 1..=J`.
///
/// With `lam`, `q_{jn} = F_j(λn)/Σ_{ℓ≤n} F_ℓ(λn)`; without it the λ-free
/// version `(Γ(j-α)/j!)/Σ_{ℓ≤n} Γ(ℓ-α)/ℓ!`.
pub fn q_jn_diag(alpha: f64, n: usize, j_max: usize, lam: Option<f64>) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if j_max == 0 || j_max > n {
        return Err(PdError::domain(format!("need 1 <= J <= n, got J={j_max}, n={n}")));
    }
    let weights: Vec<f64> = match lam {
        Some(l) => {
            if !(l > 0.0) {
                return Err(PdError::domain(format!("lambda must be positive, got {l}")));
            }
            let x = l * n as f64;
            let ln_w: Vec<f64> = (1..=n).map(|j| ln_big_f(alpha, j, x)).collect();
            let max = ln_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ln_w.iter().map(|v| (v - max).exp()).collect()
        }
        None => {
            // Γ(ℓ-α)/ℓ! up to a common factor, by t_{ℓ+1} = t_ℓ (ℓ-α)/(ℓ+1)
            let mut t = 1.0;
            (1..=n)
                .map(|l| {
                    let cur = t;
                    t *= (l as f64 - alpha) / (l as f64 + 1.0);
                    cur
                })
                .collect()
        }
    };
    let total = neumaier_sum(weights.iter().rev().cloned());
    Ok(weights[..j_max].iter().map(|w| w / total).collect())
}

/// Compensated summation.
pub(crate) fn neumaier_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

// ---------------------------------------------------------------------------
// Tables

/// One enumerated spectrum with the pmf under each tabulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub m: Vec<u32>,
    pub k: usize,
    pub pmf: Vec<f64>,
}

/// Exhaustive joint law of `(M_n, K_n)` for one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTable {
    pub n: usize,
    pub models: Vec<ModelSpec>,
    pub rows: Vec<PartitionRow>,
}

impl PartitionTable {
    /// Enumerates the spectra of `n` and evaluates every model on them.
    pub fn build(n: usize, models: &[ModelSpec], ctl: &QuadratureControl) -> Result<Self> {
        let spectra = enumerate_spectra(n)?;
        let columns = models
            .iter()
            .map(|m| m.pmfs(&spectra, ctl))
            .collect::<Result<Vec<_>>>()?;
        let rows = spectra
            .into_iter()
            .enumerate()
            .map(|(i, s)| PartitionRow {
                k: s.k(),
                pmf: columns.iter().map(|c| c[i]).collect(),
                m: s.m,
            })
            .collect();
        Ok(PartitionTable {
            n,
            models: models.to_vec(),
            rows,
        })
    }

    /// Spectra only, without pmfs.
    pub fn spectra_only(n: usize) -> Result<Self> {
        Self::build(n, &[], &QuadratureControl::default())
    }

    /// Column `col` of pmf values in row order.
    pub fn column(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.pmf[col]).collect()
    }

    pub fn spectrum(&self, row: usize) -> FrequencySpectrum {
        FrequencySpectrum {
            n: self.n,
            m: self.rows[row].m.clone(),
        }
    }

    /// `|Σ pmf - 1|` for each model column.
    pub fn normalization_residuals(&self) -> Vec<f64> {
        (0..self.models.len())
            .map(|c| (neumaier_sum(self.column(c)) - 1.0).abs())
            .collect()
    }

    /// CSV with columns `m_1..m_n, k` and one pmf column per model.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (1..=self.n).map(|j| format!("m_{j}")).collect();
        header.push("k".into());
        if self.models.len() == 1 {
            header.push("pmf".into());
        } else {
            header.extend(self.models.iter().map(|m| format!("pmf[{m}]")));
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut fields: Vec<String> = row.m.iter().map(|c| c.to_string()).collect();
            fields.push(row.k.to_string());
            fields.extend(row.pmf.iter().map(|&p| crate::fmt_f64(p)));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(m: &[u32]) -> FrequencySpectrum {
        FrequencySpectrum::new(m.to_vec()).unwrap()
    }

    #[test]
    fn enumeration_order_and_counts() {
        let two = enumerate_spectra(2).unwrap();
        assert_eq!(two, vec![spec(&[2, 0]), spec(&[0, 1])]);
        assert_eq!(enumerate_spectra(1).unwrap(), vec![spec(&[1])]);
        for n in 1..=20 {
            assert_eq!(enumerate_spectra(n).unwrap().len() as u64, partition_count(n));
        }
        assert_eq!(partition_count(5), 7);
        assert_eq!(partition_count(30), 5604);
        assert!(matches!(enumerate_spectra(31), Err(PdError::CapExceeded { .. })));
    }

    #[test]
    fn spectrum_validation() {
        assert!(FrequencySpectrum::new(vec![1, 1]).is_err());
        assert!(FrequencySpectrum::new(vec![]).is_err());
        let s = FrequencySpectrum::from_sizes(&[3, 1, 1]).unwrap();
        assert_eq!(s.m(), &[2, 0, 1, 0, 0]);
        assert_eq!(s.k(), 3);
    }

    #[test]
    fn psi_series_and_closed_form_agree_at_switch() {
        for &a in &[0.1, 0.5, 0.9] {
            for &lam in &[0.5, 1.0, 2.0] {
                let series = psi_minus_one_series(a, lam);
                let closed = psi_minus_one_closed(a, lam);
                assert!((series - closed).abs() < 1e-13 * series, "α={a} λ={lam}: {series} {closed}");
            }
        }
    }

    #[test]
    fn big_f_example() {
        let v = big_f(0.5, 2, 1.0).unwrap();
        assert!((v - 0.25 * 0.378_944_691_640_985).abs() < 1e-14, "{v}");
    }
}
