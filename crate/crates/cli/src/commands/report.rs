use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Subcommand};
use serde::Deserialize;
use trapline_core::domain::SpeciesLabel;
use trapline_core::harness::write_trial_records;
use trapline_service::store::{DetectionFilter, Store, TimeRange};

use crate::{io_err, load_service_config, write_file, CliError, CommandResult};

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Images and detections per species.
    Counts(CountArgs),
    /// Stored detection records as line-delimited JSON.
    Detections(DetectionQueryArgs),
    /// Trial records for events with operator-verified labels.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct StoreArg {
    /// Store file (overrides the configuration).
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub store: StoreArg,
    /// Inclusive start of the capture-time window (RFC 3339).
    #[arg(long)]
    pub from: Option<DateTime<Utc>>,
    /// Exclusive end of the capture-time window (RFC 3339).
    #[arg(long)]
    pub to: Option<DateTime<Utc>>,
    #[arg(long)]
    pub camera: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DetectionQueryArgs {
    #[command(flatten)]
    pub store: StoreArg,
    #[arg(long)]
    pub species: Option<String>,
    #[arg(long)]
    pub camera: Option<String>,
    #[arg(long)]
    pub from: Option<DateTime<Utc>>,
    #[arg(long)]
    pub to: Option<DateTime<Utc>>,
    #[arg(long)]
    pub min_score: Option<f64>,
    #[arg(long)]
    pub max_score: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub store: StoreArg,
    /// Line-delimited {"event_id", "label"} verified labels.
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn open_store(arg: &StoreArg, config: Option<&Path>) -> Result<Store, CliError> {
    let cfg = load_service_config(config)?;
    let path = arg.store.clone().unwrap_or(cfg.store.path);
    if !path.exists() {
        return Err(CliError::Failed(format!("store {} does not exist", path.display())));
    }
    Ok(Store::open(&path, cfg.backend.confidence_floor)?)
}

#[derive(Deserialize)]
struct VerifiedLabel {
    event_id: String,
    label: SpeciesLabel,
}

pub fn run(cmd: ReportCommand, config: Option<&Path>) -> Result<CommandResult, CliError> {
    match cmd {
        ReportCommand::Counts(args) => {
            let store = open_store(&args.store, config)?;
            let range = TimeRange { from: args.from, to: args.to };
            let counts = store.species_counts(&range, args.camera.as_deref())?;
            if args.json {
                return Ok(CommandResult::ok(serde_json::to_string_pretty(&counts).expect("json") + "\n"));
            }
            let mut text = format!("{:<24} {:>10} {:>10}\n", "species", "detections", "images");
            for (species, n) in &counts.detections_by_species {
                let _ = writeln!(text, "{species:<24} {n:>10} {:>10}", counts.images_by_species.get(species).copied().unwrap_or(0));
            }
            let _ = writeln!(text, "{:<24} {:>10} {:>10}", "(all species)", counts.detection_records, counts.detection_images);
            let _ = writeln!(text, "{:<24} {:>10} {:>10}", "Blank", "", counts.blank_images);
            let _ = writeln!(text, "{:<24} {:>10} {:>10}", "total images", "", counts.total_images);
            Ok(CommandResult::ok(text))
        }
        ReportCommand::Detections(args) => {
            let store = open_store(&args.store, config)?;
            let filter = DetectionFilter {
                species: args.species,
                camera_id: args.camera,
                range: TimeRange { from: args.from, to: args.to },
                min_score: args.min_score,
                max_score: args.max_score,
            };
            let records = store.all_detections(&filter)?;
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).expect("json"));
                text.push('\n');
            }
            match args.out {
                Some(path) => {
                    write_file(&path, text.as_bytes())?;
                    Ok(CommandResult::ok(format!("{} record(s) written to {}\n", records.len(), path.display())).with_artifact(path))
                }
                None => Ok(CommandResult::ok(text)),
            }
        }
        ReportCommand::Export(args) => {
            let store = open_store(&args.store, config)?;
            let text = std::fs::read_to_string(&args.labels).map_err(io_err(&args.labels))?;
            let mut verified = HashMap::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let v: VerifiedLabel = serde_json::from_str(line)
                    .map_err(|e| CliError::Failed(format!("{} line {}: {e}", args.labels.display(), i + 1)))?;
                verified.insert(v.event_id, v.label);
            }
            let (records, missing) = store.trial_records(&verified)?;
            let mut buf = Vec::new();
            write_trial_records(&mut buf, &records).map_err(io_err(&args.out))?;
            write_file(&args.out, &buf)?;
            let mut summary = format!("{} trial record(s) written to {}\n", records.len(), args.out.display());
            if !missing.is_empty() {
                let _ = writeln!(summary, "{} labelled event(s) not in the store: {}", missing.len(), missing.join(", "));
            }
            Ok(CommandResult::ok(summary).with_artifact(args.out))
        }
    }
}
