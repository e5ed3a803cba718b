use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use trapline_core::train_config::{parse_profile, reference_profile, render_profile, validate_profile};
use trapline_service::config::ServiceConfig;

use crate::{io_err, load_service_config, write_file, CliError, CommandResult};

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// Write the reference training profile.
    Emit(EmitArgs),
    /// Check a training profile file.
    Validate {
        #[arg(value_name = "FILE")]
        path: PathBuf,
    },
    /// Write a service configuration with every default filled in.
    Service {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Load the --config file with environment overrides and report problems.
    Check,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<u32>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
}

fn output(text: String, out: Option<PathBuf>) -> Result<CommandResult, CliError> {
    match out {
        Some(path) => {
            write_file(&path, text.as_bytes())?;
            Ok(CommandResult::ok(format!("wrote {}\n", path.display())).with_artifact(path))
        }
        None => Ok(CommandResult::ok(text)),
    }
}

pub fn run(cmd: ConfigCommand, config: Option<&Path>) -> Result<CommandResult, CliError> {
    match cmd {
        ConfigCommand::Emit(args) => {
            let mut profile = reference_profile();
            if let Some(b) = args.batch_size {
                profile.batch_size = b;
            }
            if let Some(lr) = args.learning_rate {
                profile.learning_rate = lr;
            }
            if let Some(s) = args.steps {
                profile.steps = s;
            }
            output(render_profile(&profile)?, args.out)
        }
        ConfigCommand::Validate { path } => {
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let profile = parse_profile(&text)?;
            let violations = validate_profile(&profile);
            if violations.is_empty() {
                return Ok(CommandResult::ok(format!("{}: ok\n", path.display())));
            }
            let mut msg = format!("{} has {} problem(s):", path.display(), violations.len());
            for v in &violations {
                let _ = write!(msg, "\n  - {v}");
            }
            Err(CliError::Failed(msg))
        }
        ConfigCommand::Service { out } => output(ServiceConfig::default().to_toml(), out),
        ConfigCommand::Check => {
            let cfg = load_service_config(config)?;
            Ok(CommandResult::ok(format!(
                "configuration ok: {} camera(s), {} alert rule(s), backend {}\n",
                cfg.cameras.len(),
                cfg.alerts.len(),
                if cfg.mock.is_some() { "mock".to_string() } else { cfg.backend.endpoint.clone() }
            )))
        }
    }
}
