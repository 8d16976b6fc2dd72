//! Limit laws of the normalized frequency spectrum.
//!
//! For the three α-models the limit of `(K_n/n^α, n^{α/2}(M_{jn}/K_n - q_j))`
//! has a joint density that factorizes into an `x`-marginal and the
//! conditional Gaussian `N(0, Q/x)`. Under PD(θ) the small counts are
//! asymptotically independent Poisson(θ/j) variables and the normalized
//! `K_n` is standard normal.
//!
//! The trimmed marginal splits its λ-integral at 1. Above 1 it has a closed
//! form in the Mittag-Leffler density. Below 1 the tilted density
//! `h_λ(y) = e^{-xλ^{-α}/Γ(1-α)} f_{Y_x(λ)}(y)` is tabulated on a `(λ, y)`
//! grid from the transport equation
//!
//! ```text
//! ∂_λ h_λ(y) = ν(λ) h_λ(y - λ),   ν(λ) = x α λ^{-α-1} / Γ(1-α),
//! h_λ(y) = f_{S_x(α)}(y)  for y ≤ λ,
//! ```
//!
//! marched downward from `λ = 1`, followed by Richardson extrapolation in
//! the grid step.

use crate::error::{PdError, Result};
use crate::exact_laws::ModelSpec;
use crate::quadrature::{integrate, integrate_to_infinity, QuadratureControl};
use crate::special_fn::{
    check_alpha, gamma, ln_gamma, mittag_leffler_cdf, mittag_leffler_density, stable_cdf,
    stable_density, tilted_trunc_density, SeriesControl, StableParams, TruncSubParams,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Euler's constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Standard normal CDF.
pub fn std_normal_cdf(c: f64) -> f64 {
    0.5 * erfc(-c / SQRT_2)
}

/// Hensley's constant `w_θ(1) = e^{-γθ}/Γ(θ)`.
pub fn hensley_w1(theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(PdError::domain(format!("theta must be > 0, got {theta}")));
    }
    Ok((-EULER_GAMMA * theta - ln_gamma(theta)).exp())
}

/// `q_j = α Γ(j - α) / (j! Γ(1 - α))` for `j = 1..=J`.
pub fn q_vector(alpha: f64, j_max: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let mut q = Vec::with_capacity(j_max);
    let mut t = alpha;
    for j in 1..=j_max {
        q.push(t);
        // q_{j+1} / q_j = (j - α) / (j + 1)
        t *= (j as f64 - alpha) / (j as f64 + 1.0);
    }
    Ok(q)
}

/// The q-vector with its covariance matrix `Q`, the inverse `Q^{-1}` and `det Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawQ {
    pub j: usize,
    pub alpha: f64,
    pub q: Vec<f64>,
    pub q_inv: DMatrix<f64>,
    pub q_mat: DMatrix<f64>,
    /// `(1 - Σ q_j) Π q_j`.
    pub det_q: f64,
    /// Determinant of `Q` from its LU factorization.
    pub det_lu: f64,
}

/// Tolerance on `|Q Q^{-1} - I|` before the law is rejected.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Builds `Q^{-1}` from its closed form, inverts it and checks the result.
///
/// The diagonal entries are `Q_j = (1 - Σ_{i≠j} q_i) Π_{i≠j} q_i` for every
/// `j`, the off-diagonal ones `Q = Π q_i`, all divided by `(1 - Σ q) Π q`.
pub fn build_q_law(alpha: f64, j: usize) -> Result<LimitLawQ> {
    if j == 0 {
        return Err(PdError::domain("J must be at least 1"));
    }
    let q = q_vector(alpha, j)?;
    let sum: f64 = q.iter().sum();
    let a = 1.0 - sum;
    if !(a > 0.0) {
        return Err(PdError::domain(format!("Σ q_j = {sum} is not below 1")));
    }
    let prod: f64 = q.iter().product();
    let det_q = a * prod;
    let mut q_inv = DMatrix::from_element(j, j, prod / det_q);
    for i in 0..j {
        let others: f64 = q.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v).product();
        let q_i = (a + q[i]) * others;
        q_inv[(i, i)] = q_i / det_q;
    }
    let q_mat = q_inv
        .clone()
        .lu()
        .try_inverse()
        .ok_or(PdError::IllConditioned(f64::INFINITY))?;
    let dev = (&q_mat * &q_inv - DMatrix::identity(j, j)).abs().max();
    if !(dev <= IDENTITY_TOL) {
        return Err(PdError::IllConditioned(dev));
    }
    let det_lu = q_mat.clone().lu().determinant();
    Ok(LimitLawQ {
        j,
        alpha,
        q,
        q_inv,
        q_mat,
        det_q,
        det_lu,
    })
}

impl LimitLawQ {
    /// `yᵀ Q^{-1} y`.
    pub fn quad_form(&self, y: &[f64]) -> f64 {
        let v = DVector::from_column_slice(y);
        (v.transpose() * &self.q_inv * &v)[(0, 0)]
    }

    /// Lower Cholesky factor of `Q`.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        self.q_mat
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or(PdError::IllConditioned(f64::NAN))
    }

    fn check(&self, alpha: f64, y: &[f64]) -> Result<()> {
        if (alpha - self.alpha).abs() > 1e-15 {
            return Err(PdError::domain(format!(
                "law built for α = {}, density asked for α = {alpha}",
                self.alpha
            )));
        }
        if y.len() != self.j {
            return Err(PdError::domain(format!(
                "y has length {}, law has J = {}",
                y.len(),
                self.j
            )));
        }
        Ok(())
    }
}

fn check_x(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(PdError::domain(format!("x must be a positive real, got {x}")))
    }
}

/// Density of `N(0, Q/x)` at `y`.
pub fn conditional_normal_density(law: &LimitLawQ, x: f64, y: &[f64]) -> Result<f64> {
    check_x(x)?;
    if y.len() != law.j {
        return Err(PdError::domain(format!(
            "y has length {}, law has J = {}",
            y.len(),
            law.j
        )));
    }
    let jf = law.j as f64;
    let ln = 0.5 * jf * x.ln()
        - 0.5 * x * law.quad_form(y)
        - 0.5 * (jf * (2.0 * PI).ln() + law.det_q.ln());
    Ok(ln.exp())
}

// ---------------------------------------------------------------------------
// PD_α

/// `(1/(αx)) e^{-x/Γ(1-α)} f_{Y_x(1)}(1)`, the limit density of `K_n/n^α`.
pub fn stable_marginal(alpha: f64, x: f64) -> Result<f64> {
    check_x(x)?;
    let p = TruncSubParams::new(alpha, x, 1.0)?;
    Ok(tilted_trunc_density(&p, 1.0, &SeriesControl::default())? / (alpha * x))
}

/// Joint limit density under PD_α.
pub fn limit_density_stable(alpha: f64, law: &LimitLawQ, x: f64, y: &[f64]) -> Result<f64> {
    law.check(alpha, y)?;
    Ok(stable_marginal(alpha, x)? * conditional_normal_density(law, x, y)?)
}

// ---------------------------------------------------------------------------
// PD(α, θ)

fn check_pitman(alpha: f64, theta: f64) -> Result<()> {
    check_alpha(alpha)?;
    if !(theta > -alpha) || !theta.is_finite() {
        return Err(PdError::domain(format!("need θ > -α, got θ = {theta}, α = {alpha}")));
    }
    Ok(())
}

/// `(Γ(θ+1)/Γ(θ/α+1)) x^{θ/α} f_{L_α}(x)`.
pub fn pitman_marginal(alpha: f64, theta: f64, x: f64) -> Result<f64> {
    check_pitman(alpha, theta)?;
    check_x(x)?;
    let ml = mittag_leffler_density(alpha, x, &SeriesControl::default())?;
    if ml == 0.0 {
        return Ok(0.0);
    }
    let t = theta / alpha;
    Ok((ln_gamma(theta + 1.0) - ln_gamma(t + 1.0) + t * x.ln() + ml.ln()).exp())
}

/// Joint limit density under PD(α, θ).
pub fn limit_density_pitman(
    alpha: f64,
    theta: f64,
    law: &LimitLawQ,
    x: f64,
    y: &[f64],
) -> Result<f64> {
    law.check(alpha, y)?;
    Ok(pitman_marginal(alpha, theta, x)? * conditional_normal_density(law, x, y)?)
}

// ---------------------------------------------------------------------------
// PD(θ)

/// `Π_{j≤J} Poisson(θ/j){m_j} · Φ(c)`, with `J = m.len()`.
pub fn limit_density_ewens(theta: f64, m: &[u32], c: f64) -> Result<f64> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(PdError::domain(format!("theta must be > 0, got {theta}")));
    }
    let mut ln = 0.0;
    for (i, &mj) in m.iter().enumerate() {
        let mu = theta / (i + 1) as f64;
        let k = mj as f64;
        ln += -mu + k * mu.ln() - ln_gamma(k + 1.0);
    }
    Ok(ln.exp() * std_normal_cdf(c))
}

// ---------------------------------------------------------------------------
// PD_α^(r)

/// Grid resolution for the `(λ, y)` transport table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimmedControl {
    /// Number of fine steps on `[0, 1]`; the coarse table uses half as many.
    pub grid: usize,
}

impl Default for TrimmedControl {
    fn default() -> Self {
        TrimmedControl { grid: 2000 }
    }
}

impl TrimmedControl {
    pub fn new(grid: usize) -> Result<Self> {
        if grid < 16 || grid % 2 != 0 {
            return Err(PdError::domain(format!(
                "grid must be even and at least 16, got {grid}"
            )));
        }
        Ok(TrimmedControl { grid })
    }
}

/// `h_λ(1)` for `λ = j/n`, `j = 0..=n`, from the stable density and CDF on
/// the grid `i/n`, `i = 0..=n` (both passed at the resolution of `n`).
fn transport_column(alpha: f64, x: f64, dens: &[f64], cdf: &[f64]) -> Vec<f64> {
    let n = dens.len() - 1;
    let step = 1.0 / n as f64;
    let c_nu = x * alpha / gamma(1.0 - alpha);
    let nu = |mu: f64| c_nu * mu.powf(-alpha - 1.0);
    let mut out = vec![0.0; n + 1];
    out[n] = dens[n];
    let mut old = dens.to_vec();
    let mut new = vec![0.0; n + 1];
    for j in (2..=n).rev() {
        // step from λ = j/n down to (j-1)/n
        let lo = j - 1;
        let mu_lo = lo as f64 * step;
        let mu_hi = j as f64 * step;
        let nu_lo = nu(mu_lo);
        let nu_hi = nu(mu_hi);
        let nu_mid = nu(0.5 * (mu_lo + mu_hi));
        new[..=lo].copy_from_slice(&dens[..=lo]);
        for i in lo + 1..=n {
            let flux = if i <= 2 * lo {
                // both ends of the step see y - μ ≤ μ, where h is the stable density
                nu_mid * (cdf[i - lo] - cdf[i - j])
            } else {
                0.5 * step * (nu_lo * new[i - lo] + nu_hi * old[i - j])
            };
            new[i] = old[i] - flux;
        }
        out[lo] = new[n];
        std::mem::swap(&mut old, &mut new);
    }
    out
}

/// Tabulated `λ ↦ h_λ(1)` on `(0, 1]` at two resolutions, for one `(α, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerProfile {
    pub alpha: f64,
    pub x: f64,
    /// `h_{j/n}(1)` on the fine grid.
    pub fine: Vec<f64>,
    /// Same on the grid with half as many steps.
    pub coarse: Vec<f64>,
}

impl LowerProfile {
    pub fn compute(alpha: f64, x: f64, ctl: &TrimmedControl) -> Result<Self> {
        check_alpha(alpha)?;
        check_x(x)?;
        let n = ctl.grid;
        let p = StableParams::new(alpha, x)?;
        let sctl = SeriesControl::default();
        let mut dens = vec![0.0; n + 1];
        let mut cdf = vec![0.0; n + 1];
        for i in 1..=n {
            let y = i as f64 / n as f64;
            dens[i] = stable_density(&p, y, &sctl)?;
            cdf[i] = stable_cdf(&p, y)?;
        }
        let fine = transport_column(alpha, x, &dens, &cdf);
        let half = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<_>>();
        let coarse = transport_column(alpha, x, &half(&dens), &half(&cdf));
        Ok(LowerProfile {
            alpha,
            x,
            fine,
            coarse,
        })
    }

    /// Smallest coarse index kept in the λ-integral.
    ///
    /// `h_λ(1)` is nondecreasing in `λ` and vanishes faster than any power
    /// as `λ → 0`. Walking down from `λ = 1`, the table is trusted until the
    /// extrapolated value drops below the largest error estimate seen so far
    /// or stops decreasing by more than that; below that point the explicit
    /// march is either noise or unstable.
    fn cutoff(&self) -> usize {
        let nc = self.coarse.len() - 1;
        let mut prev = f64::INFINITY;
        let mut floor: f64 = 0.0;
        for j in (1..=nc).rev() {
            let f = self.fine[2 * j];
            let c = self.coarse[j];
            let rich = (4.0 * f - c) / 3.0;
            floor = floor.max((f - c).abs() / 3.0).max(1e-12 * rich.abs());
            if !(rich > floor) || rich > prev + floor {
                return j + 1;
            }
            prev = rich;
        }
        1
    }

    fn trapezoid(col: &[f64], from: usize, alpha: f64, r: f64) -> f64 {
        let n = col.len() - 1;
        let step = 1.0 / n as f64;
        let mut s = 0.0;
        for (j, &h) in col.iter().enumerate().skip(from) {
            let lam = j as f64 * step;
            let w = if j == n || j == from { 0.5 } else { 1.0 };
            s += w * h * lam.powf(-alpha * r - 1.0);
        }
        s * step
    }

    /// `∫_0^1 h_λ(1) λ^{-αr-1} dλ` with a Richardson error estimate.
    pub fn lambda_integral(&self, r: f64) -> (f64, f64) {
        let jc = self.cutoff();
        if jc >= self.coarse.len() - 1 {
            return (0.0, 0.0);
        }
        let f = Self::trapezoid(&self.fine, 2 * jc, self.alpha, r);
        let c = Self::trapezoid(&self.coarse, jc, self.alpha, r);
        ((4.0 * f - c) / 3.0, (f - c).abs() / 3.0)
    }

    /// Extrapolated `h_λ(1)` on the coarse grid, `λ = j / (grid/2)`.
    pub fn extrapolated(&self) -> Vec<(f64, f64)> {
        let nc = self.coarse.len() - 1;
        (0..=nc)
            .map(|j| {
                let v = (4.0 * self.fine[2 * j] - self.coarse[j]) / 3.0;
                (j as f64 / nc as f64, v)
            })
            .collect()
    }
}

fn check_trimmed(alpha: f64, r: f64) -> Result<()> {
    check_alpha(alpha)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(PdError::domain(format!("r must be > 0, got {r}")));
    }
    Ok(())
}

/// `ln(Γ(r) Γ(1-α)^r)`.
fn ln_trim_norm(alpha: f64, r: f64) -> f64 {
    ln_gamma(r) + r * ln_gamma(1.0 - alpha)
}

/// The two halves of the trimmed marginal density at one `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimmedParts {
    /// Contribution of `λ ∈ (0, 1)`.
    pub lower: f64,
    /// Richardson error estimate of `lower`.
    pub lower_error: f64,
    /// Contribution of `λ ∈ (1, ∞)`, `x^r f_{L_α}(x) / (Γ(r+1) Γ(1-α)^r)`.
    pub upper: f64,
}

impl TrimmedParts {
    pub fn total(&self) -> f64 {
        self.lower + self.upper
    }
}

/// Trimmed marginal split at `λ = 1`, reusing a precomputed profile.
pub fn trimmed_parts_from_profile(profile: &LowerProfile, r: f64) -> Result<TrimmedParts> {
    let (alpha, x) = (profile.alpha, profile.x);
    check_trimmed(alpha, r)?;
    let ln_norm = ln_trim_norm(alpha, r);
    let (li, le) = profile.lambda_integral(r);
    let pre = ((r - 1.0) * x.ln() - ln_norm).exp();
    let ml = mittag_leffler_density(alpha, x, &SeriesControl::default())?;
    let upper = if ml == 0.0 {
        0.0
    } else {
        (r * x.ln() + ml.ln() - r.ln() - ln_norm).exp()
    };
    Ok(TrimmedParts {
        lower: (pre * li).max(0.0),
        lower_error: pre * le,
        upper,
    })
}

/// Trimmed marginal split at `λ = 1`.
pub fn trimmed_parts(alpha: f64, r: f64, x: f64, ctl: &TrimmedControl) -> Result<TrimmedParts> {
    check_trimmed(alpha, r)?;
    let profile = LowerProfile::compute(alpha, x, ctl)?;
    trimmed_parts_from_profile(&profile, r)
}

/// Limit density of `K_n/n^α` under PD_α^(r).
pub fn trimmed_marginal(alpha: f64, r: f64, x: f64, ctl: &TrimmedControl) -> Result<f64> {
    Ok(trimmed_parts(alpha, r, x, ctl)?.total())
}

/// The same marginal with the `λ > 1` half integrated numerically from the
/// truncated-subordinator density instead of the Mittag-Leffler closed form.
pub fn trimmed_marginal_direct(
    alpha: f64,
    r: f64,
    x: f64,
    ctl: &TrimmedControl,
    qctl: &QuadratureControl,
) -> Result<f64> {
    check_trimmed(alpha, r)?;
    let profile = LowerProfile::compute(alpha, x, ctl)?;
    let (li, _) = profile.lambda_integral(r);
    let sctl = SeriesControl::default();
    let mut failure = None;
    // λ = e^s on s ∈ (0, ∞)
    let upper = integrate_to_infinity(
        |s| {
            let lam = s.exp();
            let v = TruncSubParams::new(alpha, x, lam)
                .and_then(|p| tilted_trunc_density(&p, 1.0, &sctl));
            match v {
                Ok(h) => h * (-alpha * r * s).exp(),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        qctl,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let pre = ((r - 1.0) * x.ln() - ln_trim_norm(alpha, r)).exp();
    Ok((pre * (li + upper.value)).max(0.0))
}

/// Joint limit density under PD_α^(r).
pub fn limit_density_trimmed(
    alpha: f64,
    r: f64,
    law: &LimitLawQ,
    x: f64,
    y: &[f64],
    ctl: &TrimmedControl,
) -> Result<f64> {
    law.check(alpha, y)?;
    Ok(trimmed_marginal(alpha, r, x, ctl)? * conditional_normal_density(law, x, y)?)
}

// ---------------------------------------------------------------------------
// Model-level marginals and CDFs

/// Limit density of the model's normalized `K_n`.
pub fn k_limit_density(model: &ModelSpec, x: f64, ctl: &TrimmedControl) -> Result<f64> {
    model.validate()?;
    match *model {
        ModelSpec::Ewens { .. } => Ok((-0.5 * x * x).exp() / (2.0 * PI).sqrt()),
        ModelSpec::StablePd { alpha } => {
            if x <= 0.0 {
                return Ok(0.0);
            }
            mittag_leffler_density(alpha, x, &SeriesControl::default())
        }
        ModelSpec::PitmanYor { alpha, theta } => {
            if x <= 0.0 {
                return Ok(0.0);
            }
            pitman_marginal(alpha, theta, x)
        }
        ModelSpec::TrimmedStable { alpha, r } => {
            if x <= 0.0 {
                return Ok(0.0);
            }
            trimmed_marginal(alpha, r, x, ctl)
        }
    }
}

/// Joint limit density of one of the continuous-limit models.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimitDensity {
    pub model: ModelSpec,
    pub j: usize,
    pub law: LimitLawQ,
    pub trimmed: TrimmedControl,
}

impl JointLimitDensity {
    pub fn new(model: ModelSpec, j: usize) -> Result<Self> {
        model.validate()?;
        let alpha = match model.alpha() {
            Some(a) => a,
            None => {
                return Err(PdError::domain(
                    "PD(θ) has a discrete spectrum limit; use limit_density_ewens",
                ))
            }
        };
        Ok(JointLimitDensity {
            model,
            j,
            law: build_q_law(alpha, j)?,
            trimmed: TrimmedControl::default(),
        })
    }

    pub fn marginal(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        k_limit_density(&self.model, x, &self.trimmed)
    }

    pub fn density(&self, x: f64, y: &[f64]) -> Result<f64> {
        Ok(self.marginal(x)? * conditional_normal_density(&self.law, x, y)?)
    }
}

/// Smallest `x = 2^k` past which `P(L_α > x) < tol`, certified by the
/// Zolotarev tail integral.
pub fn ml_tail_cutoff(alpha: f64, tol: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let mut x = 1.0;
    while 1.0 - mittag_leffler_cdf(alpha, x)? >= tol {
        x *= 2.0;
        if x > 1e6 {
            return Err(PdError::domain("Mittag-Leffler tail did not fall below tolerance"));
        }
    }
    Ok(x)
}

/// Limit CDF of the model's normalized `K_n`.
///
/// PD(θ) and PD_α use closed-form CDFs. The other two are tabulated by
/// quadrature on a fixed grid and interpolated linearly, which keeps the
/// interpolant monotone.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitCdf {
    StdNormal,
    MittagLeffler { alpha: f64 },
    Tabulated { xs: Vec<f64>, cdf: Vec<f64> },
}

/// Nodes of the tabulated CDFs.
pub const CDF_PANELS: usize = 200;

impl LimitCdf {
    pub fn build(model: &ModelSpec, ctl: &TrimmedControl) -> Result<Self> {
        model.validate()?;
        match *model {
            ModelSpec::Ewens { .. } => Ok(LimitCdf::StdNormal),
            ModelSpec::StablePd { alpha } => Ok(LimitCdf::MittagLeffler { alpha }),
            ModelSpec::PitmanYor { alpha, .. } | ModelSpec::TrimmedStable { alpha, .. } => {
                // the tilt by x^{θ/α} or x^r only slows the tail polynomially
                let x_max = 2.0 * ml_tail_cutoff(alpha, 1e-14)?;
                let f = |x: f64| k_limit_density(model, x, ctl);
                let xs: Vec<f64> = (0..=CDF_PANELS)
                    .map(|i| x_max * i as f64 / CDF_PANELS as f64)
                    .collect();
                let mut cdf = vec![0.0; xs.len()];
                if matches!(model, ModelSpec::PitmanYor { .. }) {
                    let qctl = QuadratureControl::new(1e-13, 1e-10, 200)?;
                    for i in 1..xs.len() {
                        let mut failure = None;
                        let v = integrate(
                            |x| {
                                if x <= 0.0 {
                                    return 0.0;
                                }
                                f(x).unwrap_or_else(|e| {
                                    failure.get_or_insert(e);
                                    0.0
                                })
                            },
                            xs[i - 1],
                            xs[i],
                            &qctl,
                        )?;
                        if let Some(e) = failure {
                            return Err(e);
                        }
                        cdf[i] = cdf[i - 1] + v.value;
                    }
                } else {
                    // Simpson on each panel with the midpoint as third node
                    let mut left = 0.0;
                    for i in 1..xs.len() {
                        let mid = f(0.5 * (xs[i - 1] + xs[i]))?;
                        let right = f(xs[i])?;
                        cdf[i] = cdf[i - 1] + (xs[i] - xs[i - 1]) * (left + 4.0 * mid + right) / 6.0;
                        left = right;
                    }
                }
                Ok(LimitCdf::Tabulated { xs, cdf })
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            LimitCdf::StdNormal => Ok(std_normal_cdf(x)),
            LimitCdf::MittagLeffler { alpha } => mittag_leffler_cdf(*alpha, x),
            LimitCdf::Tabulated { xs, cdf } => Ok(interp(xs, cdf, x)),
        }
    }

    /// Total mass of a tabulated CDF (1 for the closed forms).
    pub fn mass(&self) -> f64 {
        match self {
            LimitCdf::Tabulated { cdf, .. } => *cdf.last().unwrap_or(&0.0),
            _ => 1.0,
        }
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x);
    let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

// ---------------------------------------------------------------------------
// Sampling from the joint limit and the √x·y transform

/// Inverse-CDF sampler for `x` with an exact Gaussian draw of `y | x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    chol: DMatrix<f64>,
}

impl GridSampler {
    /// Tabulates the marginal of `joint` on `nodes` equal panels of `[0, x_max]`.
    pub fn new(joint: &JointLimitDensity, x_max: f64, nodes: usize) -> Result<Self> {
        check_x(x_max)?;
        if nodes < 2 {
            return Err(PdError::domain("grid sampler needs at least 2 nodes"));
        }
        let xs: Vec<f64> = (0..=nodes).map(|i| x_max * i as f64 / nodes as f64).collect();
        let dens = xs
            .iter()
            .map(|&x| if x > 0.0 { joint.marginal(x) } else { Ok(0.0) })
            .collect::<Result<Vec<_>>>()?;
        let mut cdf = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (dens[i] + dens[i - 1]);
        }
        let total = cdf[nodes];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(GridSampler {
            xs,
            cdf,
            chol: joint.law.cholesky()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<f64>) {
        let u: f64 = rng.gen();
        let x = interp(&self.cdf, &self.xs, u).max(f64::MIN_POSITIVE);
        let j = self.chol.nrows();
        let z = DVector::from_iterator(j, (0..j).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = (&self.chol * z) / x.sqrt();
        (x, y.iter().copied().collect())
    }
}

/// Outcome of checking that `z = √x·y` is `N(0, Q)` and uncorrelated with `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub draws: usize,
    /// Empirical covariance of `z`, row-major.
    pub covariance: Vec<f64>,
    /// Largest `|cov_ij - Q_ij|` in units of its standard error.
    pub max_cov_sigma: f64,
    /// Largest `|corr(z_j, x)|`.
    pub max_corr_x: f64,
    /// Largest KS distance of `z_j / √Q_jj` to the standard normal.
    pub max_ks: f64,
    pub pass: bool,
}

/// Tests the fixed `N(0, Q)` law of `√x·y` and its independence from `x`.
///
/// Passes when every covariance entry is within 3 standard errors of `Q`
/// and every `|corr(z_j, x)| < 0.02`.
pub fn corollary_transform_check(law: &LimitLawQ, draws: &[(f64, Vec<f64>)]) -> Result<CorollaryReport> {
    let n = draws.len();
    if n < 2 {
        return Err(PdError::InsufficientData(format!("{n} draws")));
    }
    let j = law.j;
    let mut z = vec![vec![0.0; n]; j];
    let mut xs = vec![0.0; n];
    for (k, (x, y)) in draws.iter().enumerate() {
        check_x(*x)?;
        if y.len() != j {
            return Err(PdError::domain("draw dimension does not match J"));
        }
        xs[k] = *x;
        for d in 0..j {
            z[d][k] = x.sqrt() * y[d];
        }
    }
    let nf = n as f64;
    let mut cov = vec![0.0; j * j];
    let mut max_cov_sigma: f64 = 0.0;
    for a in 0..j {
        for b in 0..j {
            // the mean is known to be 0
            let c = z[a].iter().zip(&z[b]).map(|(u, v)| u * v).sum::<f64>() / nf;
            cov[a * j + b] = c;
            let qa = law.q_mat[(a, a)];
            let qb = law.q_mat[(b, b)];
            let qab = law.q_mat[(a, b)];
            let se = ((qa * qb + qab * qab) / nf).sqrt();
            max_cov_sigma = max_cov_sigma.max((c - qab).abs() / se);
        }
    }
    let mut max_corr_x: f64 = 0.0;
    let mut max_ks: f64 = 0.0;
    for d in 0..j {
        max_corr_x = max_corr_x.max(pearson(&z[d], &xs).abs());
        let sd = law.q_mat[(d, d)].sqrt();
        let mut s: Vec<f64> = z[d].iter().map(|v| v / sd).collect();
        s.sort_by(f64::total_cmp);
        max_ks = max_ks.max(ks_sorted(&s, std_normal_cdf));
    }
    Ok(CorollaryReport {
        draws: n,
        covariance: cov,
        max_cov_sigma,
        max_corr_x,
        max_ks,
        pass: max_cov_sigma < 3.0 && max_corr_x < 0.02,
    })
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Two-sided KS distance of a sorted sample to a continuous CDF.
pub fn ks_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

// ---------------------------------------------------------------------------
// Export

/// Density values on a grid, ready for CSV (`x, y_1..y_J, density`).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DensityGrid {
    /// Joint density on the product of `xs` with the diagonal `y = (t, .., t)`
    /// for `t` in `ts`, or the marginal alone when `ts` is empty.
    pub fn joint(joint: &JointLimitDensity, xs: &[f64], ts: &[f64]) -> Result<Self> {
        let mut columns = vec!["x".to_string()];
        if ts.is_empty() {
            columns.push("density".into());
            let rows = xs
                .iter()
                .map(|&x| Ok(vec![x, joint.marginal(x)?]))
                .collect::<Result<Vec<_>>>()?;
            return Ok(DensityGrid { columns, rows });
        }
        columns.extend((1..=joint.j).map(|j| format!("y{j}")));
        columns.push("density".into());
        let mut rows = Vec::with_capacity(xs.len() * ts.len());
        for &x in xs {
            let m = joint.marginal(x)?;
            for &t in ts {
                let y = vec![t; joint.j];
                let mut row = vec![x];
                row.extend(&y);
                row.push(m * conditional_normal_density(&joint.law, x, &y)?);
                rows.push(row);
            }
        }
        Ok(DensityGrid { columns, rows })
    }

    /// A scalar function on `xs`.
    pub fn scalar<F: FnMut(f64) -> Result<f64>>(name: &str, xs: &[f64], mut f: F) -> Result<Self> {
        let rows = xs
            .iter()
            .map(|&x| Ok(vec![x, f(x)?]))
            .collect::<Result<Vec<_>>>()?;
        Ok(DensityGrid {
            columns: vec!["x".into(), name.into()],
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| crate::fmt_f64(v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_law_small_cases() {
        let l = build_q_law(0.5, 1).unwrap();
        assert!((l.det_q - 0.25).abs() < 1e-15);
        let l = build_q_law(0.5, 2).unwrap();
        assert!((l.q[1] - 0.125).abs() < 1e-15);
        assert!((l.det_q - 0.0234375).abs() < 1e-15);
        assert!((l.det_lu - l.det_q).abs() < 1e-12 * l.det_q);
    }

    #[test]
    fn q_is_multinomial_covariance() {
        let l = build_q_law(0.3, 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { l.q[a] } else { 0.0 } - l.q[a] * l.q[b];
                assert!((l.q_mat[(a, b)] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ewens_hand_values() {
        let v = limit_density_ewens(1.0, &[1], 0.0).unwrap();
        assert!((v - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn hensley_cancels_euler_factor() {
        for &t in &[0.3, 1.0, 2.5] {
            let w = hensley_w1(t).unwrap();
            assert!((w * (EULER_GAMMA * t).exp() * gamma(t) - 1.0).abs() < 1e-13);
        }
    }
}
