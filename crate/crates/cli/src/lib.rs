//! `trapline` command dispatch. Every command returns a [`CommandResult`];
//! the binary prints its summary and exits with its code.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;
use trapline_service::config::{ConfigError, ServiceConfig};

pub use commands::{config::ConfigCommand, eval::EvalCommand, report::ReportCommand};

#[derive(Debug, Parser)]
#[command(name = "trapline", version, about = "Camera-trap bird detection: data preparation, service, evaluation and reporting")]
pub struct Cli {
    /// Service configuration file (TOML). TRAPLINE_* variables override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse annotations, drop unusable data, split and export record files.
    Prepare(commands::prepare::PrepareArgs),
    /// Run the ingest, classify and store loop.
    Serve(commands::serve::ServeArgs),
    /// Detection metrics and classification trials.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Training profile and service configuration files.
    #[command(subcommand)]
    Config(ConfigCommand),
    /// Species counts, record queries and trial export from the store.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResult {
    pub exit_code: u8,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl CommandResult {
    pub fn ok(summary: impl Into<String>) -> Self {
        Self {
            exit_code: 0,
            summary: summary.into(),
            artifacts: Vec::new(),
        }
    }

    pub fn with_artifact(mut self, path: impl Into<PathBuf>) -> Self {
        self.artifacts.push(path.into());
        self
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] trapline_core::harness::HarnessError),
    #[error(transparent)]
    Profile(#[from] trapline_core::train_config::ProfileError),
    #[error(transparent)]
    Store(#[from] trapline_service::store::StoreError),
    #[error(transparent)]
    Interchange(#[from] trapline_core::metrics::InterchangeError),
    #[error(transparent)]
    Mock(#[from] trapline_service::inference::MockError),
    #[error(transparent)]
    Export(#[from] trapline_core::annotations::ExportError),
    #[error(transparent)]
    Dataset(#[from] trapline_core::annotations::DatasetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Loads the service configuration (defaults when no file is given), then
/// applies environment overrides and validates.
pub fn load_service_config(path: Option<&Path>) -> Result<ServiceConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Uses the given seed or draws one; a drawn seed is reported so the run can
/// be repeated.
pub(crate) fn resolve_seed(seed: Option<u64>, notes: &mut Vec<String>) -> u64 {
    seed.unwrap_or_else(|| {
        let s: u64 = rand::random();
        notes.push(format!("seed: {s} (pass --seed {s} to repeat this run)"));
        tracing::info!(seed = s, "no seed given; drew one");
        s
    })
}

/// Parses `argv` (program name first) and runs the command. Usage errors exit
/// with 2, runtime failures with 1.
pub fn dispatch<I, T>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let exit_code = if e.use_stderr() { 2 } else { 0 };
            return CommandResult {
                exit_code,
                summary: e.render().to_string(),
                artifacts: Vec::new(),
            };
        }
    };
    match run(cli) {
        Ok(result) => result,
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            CommandResult {
                exit_code: 1,
                summary: format!("error: {e}\n"),
                artifacts: Vec::new(),
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<CommandResult, CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Prepare(args) => commands::prepare::run(args),
        Command::Serve(args) => commands::serve::run(args, config),
        Command::Eval(cmd) => commands::eval::run(cmd),
        Command::Config(cmd) => commands::config::run(cmd, config),
        Command::Report(cmd) => commands::report::run(cmd, config),
    }
}

/// JSON log lines on stderr; level from `TRAPLINE_LOG` (default `info`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("TRAPLINE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn given_seed_is_used_silently() {
        let mut notes = Vec::new();
        assert_eq!(resolve_seed(Some(7), &mut notes), 7);
        assert!(notes.is_empty());
    }

    #[test]
    fn drawn_seed_is_reported() {
        let mut notes = Vec::new();
        let s = resolve_seed(None, &mut notes);
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains(&format!("--seed {s}")));
    }

    #[test]
    fn write_file_creates_parents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/c.txt");
        write_file(&path, b"x").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"x");
    }

    #[test]
    fn bad_flag_value_is_a_usage_error() {
        let out = dispatch(["trapline", "eval", "trial", "--fixtures", "x", "--folds", "many"]);
        assert_eq!(out.exit_code, 2);
        let out = dispatch(["trapline", "eval", "trial", "--fixtures", "/nonexistent/x.jsonl"]);
        assert_eq!(out.exit_code, 1);
        assert!(out.summary.starts_with("error:"));
    }
}
