//! Annotation parsing, dataset filtering and statistics, train/validation
//! splitting and export to the checksummed record container.

mod dataset;
pub mod example;
mod export;
pub mod records;
mod voc;

use std::fs;
use std::io;
use std::path::Path;

pub use dataset::{
    dataset_summary, filter_unusable, split_dataset, split_ids, split_tag_counts, train_size,
    DatasetError, DatasetSummary, DroppedObject, FilterOutcome, RemovalReason, SplitAssignment,
};
pub use example::Example;
pub use export::{export_records, DirectoryImages, ExportError, ExportReport, ImageSource};
pub use records::{read_records, RecordError, RecordReader, RecordWriter};
pub use voc::{parse_annotation, ParsedAnnotation, VocError, VocWarning};

/// Parses every `*.xml` file directly under `dir`, in file-name order.
///
/// Documents that fail to parse are returned alongside their path rather than
/// aborting the whole directory.
pub fn load_annotation_dir(
    dir: &Path,
) -> io::Result<(Vec<ParsedAnnotation>, Vec<(std::path::PathBuf, VocError)>)> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("xml"))
        })
        .collect();
    paths.sort();
    let mut parsed = Vec::new();
    let mut failed = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path)?;
        match parse_annotation(&text) {
            Ok(p) => parsed.push(p),
            Err(e) => failed.push((path, e)),
        }
    }
    Ok((parsed, failed))
}
