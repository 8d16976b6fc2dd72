//! Command-line flags, the TOML run configuration, and their merge.
//!
//! A run is described by one [`RunConfig`]. Values come from the config file
//! (`--config` or `PDLAWS_CONFIG`), then from flags, then from per-command
//! defaults. The fully resolved config is what ends up in output headers.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdlaws::limit_laws::TrimmedControl;
use pdlaws::samplers::{SamplerMethod, SubordinatorControl};
use pdlaws::special_fn::SeriesControl;
use pdlaws::{ModelSpec, QuadratureControl};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "pdlaws",
    version,
    about = "Exact laws, samplers and limit checks for Poisson-Dirichlet partitions"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true, env = "PDLAWS_CONFIG")]
    pub config: Option<PathBuf>,

    /// Print the resolved configuration as TOML and exit
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact partition table of one model
    Pmf(PmfArgs),
    /// Independent draws of the frequency spectrum
    Sample(SampleArgs),
    /// A density evaluated on a grid
    Density(DensityArgs),
    /// Monte-Carlo and exact verification suites
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pmf(_) => "pmf",
            Command::Sample(_) => "sample",
            Command::Density(_) => "density",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ewens,
    Stable,
    Pitman,
    Trimmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Auto,
    Crp,
    Subordinator,
    ExactTable,
}

impl From<Method> for SamplerMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Auto => SamplerMethod::Auto,
            Method::Crp => SamplerMethod::Crp,
            Method::Subordinator => SamplerMethod::Subordinator,
            Method::ExactTable => SamplerMethod::ExactTable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    /// Mittag-Leffler density f_L(x)
    Ml,
    /// Stable subordinator density f_{S_scale}(x)
    Stable,
    /// Truncated subordinator density f_{Y_scale(lambda)}(x)
    Truncated,
    /// Limit density of the model's normalized K_n
    Marginal,
    /// Joint limit density on the diagonal y = (t, .., t)
    Joint,
    /// Both sides of the stable / Mittag-Leffler identity
    SmlCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    KLimit,
    Spectrum,
    EwensProduct,
    RContinuity,
    Diagram,
    Appendix,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::KLimit,
        Suite::Spectrum,
        Suite::EwensProduct,
        Suite::RContinuity,
        Suite::Diagram,
        Suite::Appendix,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Everything a run depends on. Unset fields take per-command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_from: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_to: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureControl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesControl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trimmed: Option<TrimmedControl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subordinator: Option<SubordinatorControl>,
}

/// Keys left out of output headers: they change paths or wall time, never results.
pub const NON_PROVENANCE_KEYS: [&str; 3] = ["workers", "output", "series_output"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Compact JSON without the non-provenance keys.
    pub fn provenance_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for k in NON_PROVENANCE_KEYS {
                map.remove(k);
            }
        }
        v.to_string()
    }

    /// Fills model parameters and keeps only those the model uses.
    pub fn resolve_model(&mut self) -> Result<ModelSpec, CliError> {
        let kind = *self.model.get_or_insert(ModelKind::Stable);
        let alpha = self.alpha.unwrap_or(0.5);
        let theta = self.theta.unwrap_or(1.0);
        let r = self.r.unwrap_or(1.0);
        let (spec, a, t, rr) = match kind {
            ModelKind::Ewens => (ModelSpec::Ewens { theta }, None, Some(theta), None),
            ModelKind::Stable => (ModelSpec::StablePd { alpha }, Some(alpha), None, None),
            ModelKind::Pitman => (ModelSpec::PitmanYor { alpha, theta }, Some(alpha), Some(theta), None),
            ModelKind::Trimmed => (ModelSpec::TrimmedStable { alpha, r }, Some(alpha), None, Some(r)),
        };
        spec.validate()?;
        self.alpha = a;
        self.theta = t;
        self.r = rr;
        Ok(spec)
    }

    pub fn quadrature_control(&mut self) -> Result<QuadratureControl, CliError> {
        let q = *self.quadrature.get_or_insert_with(QuadratureControl::default);
        Ok(QuadratureControl::new(q.abs_tol, q.rel_tol, q.max_subdivisions)?)
    }

    pub fn series_control(&mut self) -> Result<SeriesControl, CliError> {
        let s = *self.series.get_or_insert_with(SeriesControl::default);
        Ok(SeriesControl::new(s.max_terms, s.abs_tol, s.rel_tol)?)
    }

    pub fn trimmed_control(&mut self) -> Result<TrimmedControl, CliError> {
        let t = *self.trimmed.get_or_insert_with(TrimmedControl::default);
        Ok(TrimmedControl::new(t.grid)?)
    }

    pub fn subordinator_control(&mut self) -> SubordinatorControl {
        *self.subordinator.get_or_insert_with(SubordinatorControl::default)
    }

    pub fn require_n(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| CliError::Usage("missing --n".into()))
    }
}

macro_rules! overlay {
    ($cfg:expr, $args:expr, $($field:ident),+) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = Some(v); } )+
    };
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Model family
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Stable index, 0 < alpha < 1
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Concentration (Ewens: theta > 0; Pitman: theta > -alpha)
    #[arg(long)]
    pub theta: Option<f64>,
    /// Number of removed largest jumps of the trimmed law, r > 0
    #[arg(long)]
    pub r: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct OutputArgs {
    /// Output file (stdout when absent); a `.meta.json` sidecar is written next to it
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug, Default)]
pub struct NumericArgs {
    /// Absolute quadrature tolerance
    #[arg(long)]
    pub abs_tol: Option<f64>,
    /// Relative quadrature tolerance
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Fine grid of the trimmed-law transport table
    #[arg(long)]
    pub trimmed_grid: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct RngArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stream: Option<u64>,
    /// Worker threads; changes wall time only
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PmfArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample size, at most 30
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of draws
    #[arg(long, alias = "count")]
    pub draws: Option<usize>,
    /// Keep only (m_1..m_J, k); 0 keeps the full spectrum
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub rng: RngArgs,
    /// Atom budget of the subordinator sampler
    #[arg(long)]
    pub atom_budget: Option<usize>,
    /// Law-error tolerance of the subordinator sampler
    #[arg(long)]
    pub tail_tol: Option<f64>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    /// Which density to evaluate
    #[arg(long, value_enum)]
    pub density: Option<DensityKind>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// First grid point
    #[arg(long)]
    pub from: Option<f64>,
    /// Last grid point
    #[arg(long)]
    pub to: Option<f64>,
    /// Number of grid points
    #[arg(long)]
    pub points: Option<usize>,
    /// Scale x of the subordinator S_x or Y_x(lambda)
    #[arg(long)]
    pub scale: Option<f64>,
    /// Jump cutoff of the truncated subordinator
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Spectrum dimension of the joint density
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long)]
    pub y_from: Option<f64>,
    #[arg(long)]
    pub y_to: Option<f64>,
    #[arg(long)]
    pub y_points: Option<usize>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Suite to run
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    /// Increasing list of sample sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[command(flatten)]
    pub rng: RngArgs,
    /// Plot-ready series CSV (statistic against n)
    #[arg(long)]
    pub series_output: Option<PathBuf>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self, model, alpha, theta, r);
    }
}

impl OutputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self, output, format);
    }
}

impl RngArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self, seed, stream, workers);
    }
}

impl NumericArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.abs_tol.is_some() || self.rel_tol.is_some() {
            let q = cfg.quadrature.get_or_insert_with(QuadratureControl::default);
            if let Some(v) = self.abs_tol {
                q.abs_tol = v;
            }
            if let Some(v) = self.rel_tol {
                q.rel_tol = v;
            }
        }
        if let Some(grid) = self.trimmed_grid {
            cfg.trimmed = Some(TrimmedControl { grid });
        }
    }
}

impl Command {
    /// Writes the flags of this command over `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Pmf(a) => {
                a.model.apply(cfg);
                overlay!(cfg, a, n);
                a.numeric.apply(cfg);
                a.out.apply(cfg);
            }
            Command::Sample(a) => {
                a.model.apply(cfg);
                overlay!(cfg, a, n, draws, j, method);
                a.rng.apply(cfg);
                if a.atom_budget.is_some() || a.tail_tol.is_some() {
                    let s = cfg.subordinator.get_or_insert_with(SubordinatorControl::default);
                    if let Some(v) = a.atom_budget {
                        s.atom_budget = v;
                    }
                    if let Some(v) = a.tail_tol {
                        s.tail_tol = v;
                    }
                }
                a.numeric.apply(cfg);
                a.out.apply(cfg);
            }
            Command::Density(a) => {
                a.model.apply(cfg);
                overlay!(cfg, a, density, from, to, points, scale, lambda, j, y_from, y_to, y_points);
                a.numeric.apply(cfg);
                a.out.apply(cfg);
            }
            Command::Verify(a) => {
                a.model.apply(cfg);
                overlay!(cfg, a, suite, n, n_grid, j, draws, series_output);
                a.rng.apply(cfg);
                a.numeric.apply(cfg);
                a.out.apply(cfg);
            }
        }
    }
}
