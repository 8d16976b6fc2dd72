mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::Parser;
use pdlaws::PdError;
use serde_json::json;
use thiserror::Error;

use config::{Cli, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] PdError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for usage and domain errors, 3 for numerical failures.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Core(PdError::Domain(_)) => "domain",
            CliError::Core(PdError::CapExceeded { .. }) => "cap_exceeded",
            CliError::Core(PdError::InsufficientData(_)) => "insufficient_data",
            CliError::Core(_) => "numerical",
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    let code = err.exit_code();
    let report = json!({ "error": err.kind(), "message": err.to_string(), "exit_code": code });
    eprintln!("{report}");
    ExitCode::from(code)
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let name = cli.command.name();
    if let Some(c) = &cfg.command {
        if c != name {
            return Err(CliError::Usage(format!("config is for `{c}`, not `{name}`")));
        }
    }
    cfg.command = Some(name.to_string());
    cli.command.apply(&mut cfg);
    let plan = commands::plan(&mut cfg)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(true);
    }

    let out = commands::execute(&plan, &cfg)?;
    match &cfg.output {
        Some(path) => write_file(path, &out.body)?,
        None => print!("{}", out.body),
    }
    if let (Some(path), Some(series)) = (&cfg.series_output, &out.series) {
        write_file(path, series)?;
    }
    if let Some(path) = &cfg.output {
        let since = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let meta = json!({
            "pdlaws_version": env!("CARGO_PKG_VERSION"),
            "argv": std::env::args().collect::<Vec<_>>(),
            "started_unix_seconds": since,
            "elapsed_seconds": clock.elapsed().as_secs_f64(),
            "workers": cfg.workers,
        });
        let mut meta_path = path.clone().into_os_string();
        meta_path.push(".meta.json");
        write_file(Path::new(&meta_path), &serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    }
    eprintln!("{}", out.summary);
    Ok(out.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim().to_string())),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => fail(&e),
    }
}
