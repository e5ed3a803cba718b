use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::example::Example;
use super::records::RecordWriter;
use crate::domain::AnnotatedImage;

/// Resolves the encoded bytes behind an annotated image.
pub trait ImageSource {
    fn image_bytes(&self, image: &AnnotatedImage) -> io::Result<Vec<u8>>;
}

/// Looks images up by `image_id` (the annotation's filename) under a directory.
#[derive(Debug, Clone)]
pub struct DirectoryImages {
    root: PathBuf,
}

impl DirectoryImages {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageSource for DirectoryImages {
    fn image_bytes(&self, image: &AnnotatedImage) -> io::Result<Vec<u8>> {
        let name = Path::new(&image.image_id);
        // Reject ids that would escape the image root.
        if name.components().count() != 1 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("image id {:?} is not a plain file name", image.image_id),
            ));
        }
        fs::read(self.root.join(name))
    }
}

impl<F> ImageSource for F
where
    F: Fn(&AnnotatedImage) -> io::Result<Vec<u8>>,
{
    fn image_bytes(&self, image: &AnnotatedImage) -> io::Result<Vec<u8>> {
        self(image)
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

#[derive(Debug, Default)]
pub struct ExportReport {
    pub written: usize,
    pub skipped: Vec<(String, String)>,
}

/// Writes one example record per image to a fresh container file at `path`.
///
/// Images whose bytes cannot be resolved are skipped and listed in the report;
/// any write failure aborts the export.
pub fn export_records(
    images: &[AnnotatedImage],
    source: &dyn ImageSource,
    path: &Path,
) -> Result<ExportReport, ExportError> {
    let write_err = |source| ExportError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = RecordWriter::create(path).map_err(write_err)?;
    let mut report = ExportReport::default();
    for image in images {
        match source.image_bytes(image) {
            Ok(bytes) => {
                let payload = Example::from_annotated(image, bytes).encode();
                writer.write_record(&payload).map_err(write_err)?;
            }
            Err(e) => {
                tracing::warn!(image_id = %image.image_id, error = %e, "skipping image");
                report.skipped.push((image.image_id.clone(), e.to_string()));
            }
        }
    }
    writer.flush().map_err(write_err)?;
    report.written = writer.records_written();
    Ok(report)
}
