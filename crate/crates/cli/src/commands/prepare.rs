use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use trapline_core::annotations::{
    dataset_summary, export_records, filter_unusable, load_annotation_dir, split_dataset, split_tag_counts,
    DirectoryImages, RemovalReason,
};

use crate::{io_err, resolve_seed, write_file, CliError, CommandResult};

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of annotation XML documents.
    #[arg(long, value_name = "DIR")]
    pub annotations: PathBuf,
    /// Directory holding the images the annotations name.
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,
    /// Output directory for record files and summaries.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Fraction of images assigned to training.
    #[arg(long, default_value_t = 0.9)]
    pub ratio: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: PrepareArgs) -> Result<CommandResult, CliError> {
    let mut notes = Vec::new();
    let seed = resolve_seed(args.seed, &mut notes);
    let (parsed, failed) = load_annotation_dir(&args.annotations).map_err(io_err(&args.annotations))?;
    for (path, e) in &failed {
        tracing::warn!(stage = "prepare", path = %path.display(), error = %e, "annotation unreadable");
    }
    let warnings: usize = parsed.iter().map(|p| p.warnings.len()).sum();
    let images: Vec<_> = parsed.into_iter().map(|p| p.image).collect();
    let raw = dataset_summary(&images)?;
    let filtered = filter_unusable(images);
    let clean = dataset_summary(&filtered.kept)?;
    let split = split_dataset(&filtered.kept, args.ratio, seed)?;
    let (train_tags, val_tags) = split_tag_counts(&split, &filtered.kept);

    let by_id = |ids: &[String]| {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        filtered
            .kept
            .iter()
            .filter(|i| wanted.contains(i.image_id.as_str()))
            .cloned()
            .collect::<Vec<_>>()
    };
    let source = DirectoryImages::new(&args.images);
    let train_path = args.out.join("train.record");
    let val_path = args.out.join("val.record");
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let train = export_records(&by_id(&split.train), &source, &train_path)?;
    let val = export_records(&by_id(&split.validation), &source, &val_path)?;

    let removed: Vec<_> = filtered
        .removed
        .iter()
        .map(|(image, reason)| {
            let reason = match reason {
                RemovalReason::QualityFlag(f) => format!("quality flag {f:?}"),
                RemovalReason::NoValidObjects => "no valid objects".to_string(),
            };
            json!({"image_id": image.image_id, "reason": reason})
        })
        .collect();
    let summary = json!({
        "seed": seed,
        "ratio": args.ratio,
        "unreadable_documents": failed.iter().map(|(p, e)| json!({"path": p.display().to_string(), "error": e.to_string()})).collect::<Vec<_>>(),
        "parse_warnings": warnings,
        "before_filtering": raw,
        "after_filtering": clean,
        "removed_images": removed,
        "dropped_objects": filtered.dropped_objects.len(),
        "train": {"images": split.train.len(), "tags": train_tags, "written": train.written, "skipped": train.skipped},
        "validation": {"images": split.validation.len(), "tags": val_tags, "written": val.written, "skipped": val.skipped},
    });
    let summary_path = args.out.join("summary.json");
    let split_path = args.out.join("split.json");
    write_file(&summary_path, serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
    write_file(&split_path, serde_json::to_string_pretty(&split).expect("json").as_bytes())?;

    let mut text = String::new();
    for n in &notes {
        let _ = writeln!(text, "{n}");
    }
    let _ = writeln!(
        text,
        "images: {} read, {} kept ({} removed); tags {} -> {}",
        raw.image_count,
        clean.image_count,
        filtered.removed.len(),
        raw.tag_count,
        clean.tag_count
    );
    let _ = writeln!(
        text,
        "split {:.2}: train {} images / {} tags, validation {} images / {} tags",
        args.ratio,
        split.train.len(),
        train_tags,
        split.validation.len(),
        val_tags
    );
    let _ = writeln!(text, "records: {} train, {} validation", train.written, val.written);
    Ok(CommandResult::ok(text)
        .with_artifact(train_path)
        .with_artifact(val_path)
        .with_artifact(split_path)
        .with_artifact(summary_path))
}
