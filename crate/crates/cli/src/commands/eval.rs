use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use trapline_core::domain::SpeciesLabel;
use trapline_core::harness::{
    aggregate_trial, emit_report, evaluate_fold, folds_from_records, read_trial_records, required_sample_size,
    sample_folds, Confidence, FoldSpec, ReportFormat, TrialRecord,
};
use trapline_core::metrics::{read_image_evals, summarize_detections};

use crate::{io_err, resolve_seed, write_file, CliError, CommandResult};

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Per-fold classification metrics, fold averages and the pooled confusion matrix.
    Trial(TrialArgs),
    /// mAP and AR summary for detections against ground truth.
    Detections(DetectionArgs),
}

#[derive(Debug, Args)]
pub struct TrialArgs {
    /// Line-delimited (image_id, true_label, predicted_label[, score, fold]) records.
    #[arg(long, value_name = "FILE")]
    pub fixtures: PathBuf,
    /// Draw this many folds. Without --folds or --per-class the records are
    /// replayed as given, grouped by their fold field.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Images drawn per class and fold.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated class list; defaults to the true labels in file order.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Margin of error for the recommended sample size.
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Confidence level for the recommended sample size (0.90, 0.95 or 0.99).
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value = "text")]
    pub format: String,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectionArgs {
    /// Line-delimited {image_id, truths, detections} records.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "text")]
    pub format: String,
}

pub fn run(cmd: EvalCommand) -> Result<CommandResult, CliError> {
    match cmd {
        EvalCommand::Trial(args) => trial(args),
        EvalCommand::Detections(args) => detections(args),
    }
}

fn class_list(records: &[TrialRecord], given: Option<Vec<String>>) -> Result<Vec<SpeciesLabel>, CliError> {
    if let Some(names) = given {
        return names
            .iter()
            .map(|n| match n.trim() {
                t if t.eq_ignore_ascii_case("blank") => Ok(SpeciesLabel::blank()),
                t => SpeciesLabel::species(t).map_err(|e| CliError::Failed(format!("class {t:?}: {e}"))),
            })
            .collect();
    }
    let mut seen = HashSet::new();
    Ok(records
        .iter()
        .filter(|r| seen.insert(r.true_label.clone()))
        .map(|r| r.true_label.clone())
        .collect())
}

fn trial(args: TrialArgs) -> Result<CommandResult, CliError> {
    let format: ReportFormat = args.format.parse()?;
    let confidence = Confidence::try_from(args.confidence)?;
    let file = File::open(&args.fixtures).map_err(io_err(&args.fixtures))?;
    let records = read_trial_records(BufReader::new(file))?;
    if records.is_empty() {
        return Err(CliError::Failed(format!("{} holds no records", args.fixtures.display())));
    }
    let classes = class_list(&records, args.classes)?;
    let mut notes = Vec::new();

    let sampling = args.folds.is_some() || args.per_class.is_some();
    let (classes, excluded, folds) = if sampling {
        let seed = resolve_seed(args.seed, &mut notes);
        let spec = FoldSpec::new(classes, args.per_class.unwrap_or(25), args.folds.unwrap_or(10), seed)?;
        let plan = sample_folds(&records, &spec)?;
        (plan.classes, plan.excluded, plan.folds)
    } else {
        (classes, Vec::new(), folds_from_records(&records))
    };

    let mut reports = Vec::with_capacity(folds.len());
    for fold in &folds {
        reports.push(evaluate_fold(fold, &fold.predictions(), &classes)?);
    }
    let mut trial = aggregate_trial(&classes, reports, excluded)?;
    trial.recommended_sample = Some(required_sample_size(records.len() as u64, args.margin, confidence)?);
    let rendered = emit_report(&trial, format)?;

    let mut text = String::new();
    for n in &notes {
        let _ = writeln!(text, "{n}");
    }
    match args.out {
        Some(path) => {
            write_file(&path, rendered.as_bytes())?;
            let _ = writeln!(text, "{} fold(s), {} class(es); report written to {}", trial.folds.len(), trial.classes.len(), path.display());
            Ok(CommandResult::ok(text).with_artifact(path))
        }
        None => {
            text.push_str(&rendered);
            Ok(CommandResult::ok(text))
        }
    }
}

fn detections(args: DetectionArgs) -> Result<CommandResult, CliError> {
    let file = File::open(&args.input).map_err(io_err(&args.input))?;
    let images = read_image_evals(BufReader::new(file))?;
    let summary = summarize_detections(&images);
    match args.format.as_str() {
        "json" => Ok(CommandResult::ok(serde_json::to_string_pretty(&summary).expect("json") + "\n")),
        "text" => {
            let mut text = String::new();
            for (name, value) in summary.rows() {
                let shown = value.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(text, "{name:<26} {shown}");
            }
            Ok(CommandResult::ok(text))
        }
        other => Err(CliError::Failed(format!("unknown format {other:?}; use text or json"))),
    }
}
