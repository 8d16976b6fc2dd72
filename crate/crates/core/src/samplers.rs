//! Random generation of `(M_n, K_n)`.
//!
//! Every draw is a pure function of `(seed, stream)`. Batches are cut into
//! fixed chunks of [`CHUNK`] draws and chunk `c` always uses substream `c`, so
//! the output does not depend on how many workers share the chunks.

use crate::error::{PdError, Result};
use crate::exact_laws::{enumerate_spectra, trimmed_pmfs_negbin, FrequencySpectrum, ModelSpec, ENUMERATION_CAP};
use crate::quadrature::QuadratureControl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Draws per independently seeded chunk of a batch.
pub const CHUNK: usize = 4096;

/// Name of the generator recorded in batch headers.
pub const GENERATOR: &str = "ChaCha8Rng(seed_from_u64, stream = base << 32 | chunk)";

/// Default number of atoms kept by the subordinator sampler.
pub const DEFAULT_ATOM_BUDGET: usize = 100_000;

/// Default bound on the law error of the subordinator sampler.
pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// `(seed, stream)` pair that fixes every draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngSeed { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Substream used for chunk `chunk` of a batch.
    pub fn chunk(&self, chunk: u64) -> RngSeed {
        RngSeed {
            seed: self.seed,
            stream: (self.stream << 32) | (chunk & 0xffff_ffff),
        }
    }
}

// ---------------------------------------------------------------------------
// Chinese restaurant process

/// Reusable state for sequential seating.
#[derive(Debug, Default)]
pub struct Restaurant {
    owner: Vec<u32>,
    sizes: Vec<u32>,
}

impl Restaurant {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seats `n` customers with the two-parameter prediction rule and returns
    /// the table sizes.
    ///
    /// One uniform `u` on `[0, i + θ)` decides each step: below `θ + kα` a new
    /// table opens; otherwise the rescaled remainder picks a uniform earlier
    /// customer, whose table is accepted with probability `1 - α/n_j`, so an
    /// existing table is chosen with probability `∝ n_j - α`. The fractional
    /// part left after picking the customer drives the first acceptance test.
    pub fn seat<R: Rng + ?Sized>(&mut self, alpha: f64, theta: f64, n: usize, rng: &mut R) -> &[u32] {
        self.owner.clear();
        self.sizes.clear();
        if n == 0 {
            return &self.sizes;
        }
        self.owner.reserve(n);
        self.owner.push(0);
        self.sizes.push(1);
        for i in 1..n {
            let fi = i as f64;
            let new_weight = theta + self.sizes.len() as f64 * alpha;
            let u = rng.gen::<f64>() * (fi + theta);
            if u < new_weight {
                self.owner.push(self.sizes.len() as u32);
                self.sizes.push(1);
                continue;
            }
            let mut v = ((u - new_weight) / (fi - self.sizes.len() as f64 * alpha)).min(1.0 - f64::EPSILON) * fi;
            let table = loop {
                let c = (v as usize).min(i - 1);
                let t = self.owner[c] as usize;
                if alpha == 0.0 || (v - c as f64) * (self.sizes[t] as f64) >= alpha {
                    break t;
                }
                v = rng.gen::<f64>() * fi;
            };
            self.owner.push(table as u32);
            self.sizes[table] += 1;
        }
        &self.sizes
    }
}

fn check_crp(alpha: f64, theta: f64, n: usize) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(PdError::domain(format!("CRP needs alpha in [0, 1), got {alpha}")));
    }
    if !(theta > -alpha) && !(alpha == 0.0 && theta == 0.0 && n <= 1) {
        return Err(PdError::domain(format!(
            "CRP needs theta > -alpha, got alpha={alpha}, theta={theta}"
        )));
    }
    if n == 0 {
        return Err(PdError::domain("n must be at least 1"));
    }
    Ok(())
}

/// One spectrum from the two-parameter Chinese restaurant process.
pub fn crp_sample(alpha: f64, theta: f64, n: usize, seed: RngSeed) -> Result<FrequencySpectrum> {
    check_crp(alpha, theta, n)?;
    let mut rng = seed.rng();
    let sizes: Vec<usize> = Restaurant::new()
        .seat(alpha, theta, n, &mut rng)
        .iter()
        .map(|&s| s as usize)
        .collect();
    FrequencySpectrum::from_sizes(&sizes)
}

// ---------------------------------------------------------------------------
// Trimmed stable subordinator

/// Atom sizes of one normalized trimmed subordinator, plus its dust mass.
#[derive(Debug, Clone)]
pub struct TrimmedAtoms {
    /// Unnormalized jumps `Γ_i^{-1/α}`, `i = r+1..`, in decreasing order.
    pub atoms: Vec<f64>,
    /// Total mass of the unrepresented small jumps.
    pub tail: f64,
    /// Estimated error in the law of a size-`n` sample.
    pub error: f64,
}

impl TrimmedAtoms {
    pub fn total(&self) -> f64 {
        self.atoms.iter().sum::<f64>() + self.tail
    }
}

/// Tuning of the subordinator sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorControl {
    pub atom_budget: usize,
    pub tail_tol: f64,
}

impl Default for SubordinatorControl {
    fn default() -> Self {
        SubordinatorControl {
            atom_budget: DEFAULT_ATOM_BUDGET,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

// law error of representing the jumps beyond arrival time g by a gamma variable
fn tail_error(alpha: f64, g: f64, total: f64, n: usize) -> f64 {
    let p = 1.0 / alpha;
    let pairs = (n * n.saturating_sub(1)) as f64 / 2.0;
    let second = g.powf(1.0 - 2.0 * p) / (2.0 * p - 1.0);
    let collision = pairs * second / (total * total);
    let mean = g.powf(1.0 - p) / (p - 1.0);
    let third = g.powf(1.0 - 3.0 * p) / (3.0 * p - 1.0);
    let gamma_third = 2.0 * second * second / mean;
    let skew = (n as f64).powi(3) * (third - gamma_third).abs() / (6.0 * total.powi(3));
    collision.max(skew)
}

/// Simulates the jumps `Γ_i^{-1/α}` of a stable subordinator (scale dropped),
/// removes the `r` largest and keeps atoms until the representation error for
/// an `n`-sample falls below `ctl.tail_tol`. The remaining jumps are replaced
/// by one gamma variable with their exact mean and variance.
pub fn trimmed_atoms<R: Rng + ?Sized>(
    alpha: f64,
    r: u32,
    n: usize,
    ctl: &SubordinatorControl,
    rng: &mut R,
) -> Result<TrimmedAtoms> {
    let p = 1.0 / alpha;
    let mut g = 0.0;
    for _ in 0..r {
        let e: f64 = Exp1.sample(rng);
        g += e;
    }
    let mut atoms = Vec::with_capacity(64);
    let mut sum = 0.0;
    let mut check_at = 32usize.min(ctl.atom_budget.max(1));
    loop {
        let e: f64 = Exp1.sample(rng);
        g += e;
        let a = g.powf(-p);
        atoms.push(a);
        sum += a;
        if atoms.len() == check_at {
            let err = tail_error(alpha, g, sum, n);
            if err <= ctl.tail_tol {
                let mean = g.powf(1.0 - p) / (p - 1.0);
                let var = g.powf(1.0 - 2.0 * p) / (2.0 * p - 1.0);
                let shape = mean * mean / var;
                let scale = var / mean;
                let tail = Gamma::new(shape, scale)
                    .map_err(|e| PdError::Inversion(format!("tail gamma: {e}")))?
                    .sample(rng);
                return Ok(TrimmedAtoms { atoms, tail, error: err });
            }
            if check_at >= ctl.atom_budget {
                return Err(PdError::AtomBudget {
                    budget: ctl.atom_budget,
                    error: err,
                    tolerance: ctl.tail_tol,
                });
            }
            check_at = (check_at * 2).min(ctl.atom_budget);
        }
    }
}

/// Assigns `n` individuals to atoms by sweeping sorted uniforms over the
/// cumulative masses; individuals landing in the tail become singletons.
fn assign_individuals<R: Rng + ?Sized>(atoms: &TrimmedAtoms, n: usize, rng: &mut R) -> Vec<usize> {
    let total = atoms.total();
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * total).collect();
    u.sort_by(|a, b| a.partial_cmp(b).expect("finite uniforms"));
    let mut sizes = Vec::new();
    let mut cum = 0.0;
    let mut idx = 0;
    for &a in &atoms.atoms {
        cum += a;
        let mut c = 0;
        while idx < n && u[idx] < cum {
            c += 1;
            idx += 1;
        }
        if c > 0 {
            sizes.push(c);
        }
        if idx == n {
            break;
        }
    }
    sizes.extend(std::iter::repeat(1).take(n - idx));
    sizes
}

/// One spectrum of PD_α^(r) for integer `r ≥ 1` from the trimmed subordinator.
pub fn trimmed_stable_sample(
    alpha: f64,
    r: u32,
    n: usize,
    ctl: &SubordinatorControl,
    seed: RngSeed,
) -> Result<FrequencySpectrum> {
    check_trimmed_subordinator(alpha, r, n)?;
    let mut rng = seed.rng();
    let atoms = trimmed_atoms(alpha, r, n, ctl, &mut rng)?;
    FrequencySpectrum::from_sizes(&assign_individuals(&atoms, n, &mut rng))
}

fn check_trimmed_subordinator(alpha: f64, r: u32, n: usize) -> Result<()> {
    crate::special_fn::check_alpha(alpha)?;
    if r == 0 {
        return Err(PdError::domain(
            "r = 0 is the untrimmed law PD_alpha; use the CRP with theta = 0",
        ));
    }
    if n == 0 {
        return Err(PdError::domain("n must be at least 1"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exact-table inversion

/// Inverse-CDF sampler over an exact partition table.
#[derive(Debug, Clone)]
pub struct ExactTableSampler {
    spectra: Vec<FrequencySpectrum>,
    cdf: Vec<f64>,
}

impl ExactTableSampler {
    /// Table of PD_α^(r) built from the mixture representation.
    pub fn trimmed(alpha: f64, r: f64, n: usize, ctl: &QuadratureControl) -> Result<Self> {
        if n > ENUMERATION_CAP {
            return Err(PdError::CapExceeded {
                n,
                cap: ENUMERATION_CAP,
            });
        }
        let spectra = enumerate_spectra(n)?;
        let pmf = trimmed_pmfs_negbin(alpha, r, &spectra, ctl)?;
        Ok(Self::from_pmf(spectra, &pmf))
    }

    /// Table of any model from its exact pmf.
    pub fn for_model(model: &ModelSpec, n: usize, ctl: &QuadratureControl) -> Result<Self> {
        if let ModelSpec::TrimmedStable { alpha, r } = *model {
            return Self::trimmed(alpha, r, n, ctl);
        }
        let spectra = enumerate_spectra(n)?;
        let pmf = model.pmfs(&spectra, ctl)?;
        Ok(Self::from_pmf(spectra, &pmf))
    }

    fn from_pmf(spectra: Vec<FrequencySpectrum>, pmf: &[f64]) -> Self {
        let total: f64 = pmf.iter().map(|p| p.max(0.0)).sum();
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p.max(0.0) / total;
                acc
            })
            .collect();
        ExactTableSampler { spectra, cdf }
    }

    pub fn spectra(&self) -> &[FrequencySpectrum] {
        &self.spectra
    }

    /// Row index of one draw.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &FrequencySpectrum {
        &self.spectra[self.sample_index(rng)]
    }
}

/// One spectrum of PD_α^(r) for real `r > 0` by inverting the exact table.
pub fn trimmed_exact_sample(alpha: f64, r: f64, n: usize, seed: RngSeed) -> Result<FrequencySpectrum> {
    let table = ExactTableSampler::trimmed(alpha, r, n, &QuadratureControl::default())?;
    Ok(table.sample(&mut seed.rng()).clone())
}

// ---------------------------------------------------------------------------
// Batches

/// Sampler selection for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    /// CRP for the closed-form models; subordinator for integer `r`,
    /// exact table otherwise.
    Auto,
    Crp,
    Subordinator,
    ExactTable,
}

impl SamplerMethod {
    fn resolve(self, model: &ModelSpec) -> Result<SamplerMethod> {
        let m = match (self, model) {
            (SamplerMethod::Auto, ModelSpec::TrimmedStable { r, .. }) => {
                if r.fract() == 0.0 && *r >= 1.0 {
                    SamplerMethod::Subordinator
                } else {
                    SamplerMethod::ExactTable
                }
            }
            (SamplerMethod::Auto, _) => SamplerMethod::Crp,
            (m, _) => m,
        };
        match (m, model) {
            (SamplerMethod::Crp, ModelSpec::TrimmedStable { .. }) => Err(PdError::domain(
                "the trimmed law has no sequential prediction rule here",
            )),
            (SamplerMethod::Subordinator, ModelSpec::TrimmedStable { r, .. }) if r.fract() != 0.0 => {
                Err(PdError::domain("the subordinator sampler needs integer r"))
            }
            (SamplerMethod::Subordinator, ModelSpec::TrimmedStable { .. }) => Ok(m),
            (SamplerMethod::Subordinator, _) => Err(PdError::domain(
                "the subordinator sampler applies to the trimmed law only",
            )),
            _ => Ok(m),
        }
    }
}

/// Sufficient statistics of one draw: `(m_1..m_J, k)`, or the full spectrum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRow {
    pub m: Vec<u32>,
    pub k: usize,
}

impl SampleRow {
    fn from_sizes(sizes: impl Iterator<Item = usize>, n: usize, j: usize) -> Self {
        let width = if j == 0 { n } else { j.min(n) };
        let mut m = vec![0u32; width];
        let mut k = 0;
        for s in sizes {
            k += 1;
            if s <= width {
                m[s - 1] += 1;
            }
        }
        if j > n {
            m.resize(j, 0);
        }
        SampleRow { m, k }
    }

    fn from_spectrum(s: &FrequencySpectrum, j: usize) -> Self {
        let width = if j == 0 { s.n() } else { j };
        SampleRow {
            m: (1..=width).map(|i| s.count(i)).collect(),
            k: s.k(),
        }
    }

    pub fn count(&self, j: usize) -> u32 {
        self.m.get(j - 1).copied().unwrap_or(0)
    }
}

/// Provenance of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub model: ModelSpec,
    pub n: usize,
    pub count: usize,
    pub j: usize,
    pub seed: RngSeed,
    pub generator: String,
    pub method: SamplerMethod,
    pub chunk: usize,
}

/// `count` independent draws of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub header: BatchHeader,
    pub rows: Vec<SampleRow>,
}

/// Options for [`sample_batch`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub method: SamplerMethod,
    pub subordinator: SubordinatorControl,
    pub quadrature: QuadratureControl,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            method: SamplerMethod::Auto,
            subordinator: SubordinatorControl::default(),
            quadrature: QuadratureControl::default(),
        }
    }
}

enum Prepared {
    Crp { alpha: f64, theta: f64 },
    Subordinator { alpha: f64, r: u32 },
    Table(ExactTableSampler),
}

fn prepare(model: &ModelSpec, n: usize, method: SamplerMethod, opts: &BatchOptions) -> Result<Prepared> {
    Ok(match (method, *model) {
        (SamplerMethod::Crp, ModelSpec::Ewens { theta }) => Prepared::Crp { alpha: 0.0, theta },
        (SamplerMethod::Crp, ModelSpec::StablePd { alpha }) => Prepared::Crp { alpha, theta: 0.0 },
        (SamplerMethod::Crp, ModelSpec::PitmanYor { alpha, theta }) => Prepared::Crp { alpha, theta },
        (SamplerMethod::Subordinator, ModelSpec::TrimmedStable { alpha, r }) => {
            check_trimmed_subordinator(alpha, r as u32, n)?;
            Prepared::Subordinator { alpha, r: r as u32 }
        }
        (SamplerMethod::ExactTable, m) => Prepared::Table(ExactTableSampler::for_model(&m, n, &opts.quadrature)?),
        _ => unreachable!("method resolved against model"),
    })
}

fn draw_chunk(prep: &Prepared, n: usize, j: usize, draws: usize, seed: RngSeed, opts: &BatchOptions) -> Result<Vec<SampleRow>> {
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(draws);
    match prep {
        Prepared::Crp { alpha, theta } => {
            let mut restaurant = Restaurant::new();
            for _ in 0..draws {
                let sizes = restaurant.seat(*alpha, *theta, n, &mut rng);
                out.push(SampleRow::from_sizes(sizes.iter().map(|&s| s as usize), n, j));
            }
        }
        Prepared::Subordinator { alpha, r } => {
            for _ in 0..draws {
                let atoms = trimmed_atoms(*alpha, *r, n, &opts.subordinator, &mut rng)?;
                let sizes = assign_individuals(&atoms, n, &mut rng);
                out.push(SampleRow::from_sizes(sizes.into_iter(), n, j));
            }
        }
        Prepared::Table(t) => {
            for _ in 0..draws {
                out.push(SampleRow::from_spectrum(t.sample(&mut rng), j));
            }
        }
    }
    Ok(out)
}

/// Draws `count` spectra. Chunk `c` of [`CHUNK`] draws uses substream
/// `seed.chunk(c)`; chunks are spread over `workers` threads and
/// concatenated in order, so the result is independent of `workers`.
/// With `j > 0` only `(m_1..m_J, k)` is kept.
pub fn sample_batch(
    model: &ModelSpec,
    n: usize,
    count: usize,
    j: usize,
    seed: RngSeed,
    workers: usize,
    opts: &BatchOptions,
) -> Result<SampleBatch> {
    model.validate()?;
    if n == 0 {
        return Err(PdError::domain("n must be at least 1"));
    }
    if workers == 0 {
        return Err(PdError::domain("workers must be at least 1"));
    }
    let method = opts.method.resolve(model)?;
    let header = BatchHeader {
        model: *model,
        n,
        count,
        j,
        seed,
        generator: GENERATOR.to_string(),
        method,
        chunk: CHUNK,
    };
    if count == 0 {
        return Ok(SampleBatch { header, rows: Vec::new() });
    }
    let prep = prepare(model, n, method, opts)?;
    let chunks: Vec<(usize, usize)> = (0..count)
        .step_by(CHUNK)
        .enumerate()
        .map(|(c, start)| (c, CHUNK.min(count - start)))
        .collect();
    let run = || {
        chunks
            .par_iter()
            .map(|&(c, len)| draw_chunk(&prep, n, j, len, seed.chunk(c as u64), opts))
            .collect::<Result<Vec<_>>>()
    };
    let parts = if workers == 1 {
        chunks
            .iter()
            .map(|&(c, len)| draw_chunk(&prep, n, j, len, seed.chunk(c as u64), opts))
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PdError::domain(format!("thread pool: {e}")))?
            .install(run)?
    };
    Ok(SampleBatch {
        header,
        rows: parts.into_iter().flatten().collect(),
    })
}

impl SampleBatch {
    pub fn header_json(&self) -> String {
        serde_json::to_string(&self.header).expect("header serializes")
    }

    /// CSV body with columns `m_1..m_W, k`.
    pub fn to_csv(&self) -> String {
        let width = self.rows.first().map(|r| r.m.len()).unwrap_or(if self.header.j == 0 {
            self.header.n
        } else {
            self.header.j
        });
        let mut out = String::with_capacity(self.rows.len() * (2 * width + 4));
        let mut cols: Vec<String> = (1..=width).map(|j| format!("m_{j}")).collect();
        cols.push("k".into());
        out.push_str(&cols.join(","));
        out.push('\n');
        for row in &self.rows {
            for c in &row.m {
                out.push_str(&c.to_string());
                out.push(',');
            }
            out.push_str(&row.k.to_string());
            out.push('\n');
        }
        out
    }

    /// `K_n` of every draw.
    pub fn k_values(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.k).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restaurant_sizes_sum_to_n() {
        let mut rng = RngSeed::new(1, 0).rng();
        let mut r = Restaurant::new();
        for &(a, t) in &[(0.0, 1.0), (0.5, 0.0), (0.9, 2.0), (0.3, -0.2)] {
            let s = r.seat(a, t, 1000, &mut rng);
            assert_eq!(s.iter().map(|&x| x as usize).sum::<usize>(), 1000);
        }
    }

    #[test]
    fn chunk_streams_are_distinct() {
        let s = RngSeed::new(9, 3);
        assert_ne!(s.chunk(0), s.chunk(1));
        assert_eq!(s.chunk(5).stream, (3 << 32) | 5);
    }

    #[test]
    fn tail_error_shrinks_with_more_atoms() {
        let a = tail_error(0.5, 100.0, 1.0, 6);
        let b = tail_error(0.5, 1000.0, 1.0, 6);
        assert!(b < a && b > 0.0);
    }

    #[test]
    fn assignment_handles_dust() {
        let atoms = TrimmedAtoms {
            atoms: vec![],
            tail: 1.0,
            error: 0.0,
        };
        let mut rng = RngSeed::new(0, 0).rng();
        assert_eq!(assign_individuals(&atoms, 4, &mut rng), vec![1, 1, 1, 1]);
    }
}
