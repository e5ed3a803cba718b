//! Drop-directory transport: `<root>/<camera_id>/*.jpg`, each image with an
//! optional `<name>.meta` sidecar of `key=value` lines (`camera_id`, `time`).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use walkdir::WalkDir;

use super::mail::parse_time_value;
use super::{EventFlag, IngestEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct DirectoryScan {
    pub events: Vec<IngestEvent>,
    pub skipped: Vec<SkippedFile>,
}

pub fn read_sidecar(path: &Path) -> io::Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
        .collect())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        .unwrap_or(false)
}

/// Remembers which files it has emitted so each is processed once per run.
#[derive(Debug)]
pub struct DirectoryWatcher {
    root: PathBuf,
    seen: HashSet<PathBuf>,
}

impl DirectoryWatcher {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            seen: HashSet::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Events for image files not emitted before, in path order.
    pub fn scan(&mut self) -> io::Result<DirectoryScan> {
        if !self.root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} is not a directory", self.root.display()),
            ));
        }
        let mut scan = DirectoryScan::default();
        let walker = WalkDir::new(&self.root)
            .min_depth(1)
            .max_depth(2)
            .sort_by_file_name();
        for entry in walker {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    scan.skipped.push(SkippedFile {
                        path: e.path().map(Path::to_path_buf).unwrap_or_else(|| self.root.clone()),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let path = entry.path();
            if !entry.file_type().is_file() || !is_image(path) || self.seen.contains(path) {
                continue;
            }
            match self.load(path, entry.depth()) {
                Ok(event) => {
                    tracing::info!(stage = "poller", path = %path.display(), event_id = %event.event_id, "image picked up");
                    self.seen.insert(path.to_path_buf());
                    scan.events.push(event);
                }
                Err((reason, permanent)) => {
                    tracing::warn!(stage = "poller", path = %path.display(), %reason, "image skipped");
                    if permanent {
                        self.seen.insert(path.to_path_buf());
                    }
                    scan.skipped.push(SkippedFile {
                        path: path.to_path_buf(),
                        reason,
                    });
                }
            }
        }
        Ok(scan)
    }

    /// Err carries the reason and whether retrying later is pointless.
    fn load(&self, path: &Path, depth: usize) -> Result<IngestEvent, (String, bool)> {
        let sidecar_path = path.with_extension("meta");
        let sidecar = if sidecar_path.is_file() {
            read_sidecar(&sidecar_path).map_err(|e| (format!("sidecar unreadable: {e}"), false))?
        } else {
            BTreeMap::new()
        };
        let dir_camera = (depth == 2)
            .then(|| path.parent()?.file_name()?.to_str().map(str::to_string))
            .flatten();
        let camera_id = sidecar
            .get("camera_id")
            .or_else(|| sidecar.get("camera"))
            .cloned()
            .or(dir_camera)
            .ok_or_else(|| ("no camera directory or sidecar camera_id".to_string(), true))?;

        let bytes = fs::read(path).map_err(|e| (format!("unreadable: {e}"), false))?;
        let modified: Option<DateTime<Utc>> = fs::metadata(path)
            .and_then(|m| m.modified())
            .ok()
            .map(DateTime::<Utc>::from);
        let received_at = Utc::now();
        let raw_time = sidecar.get("time").or_else(|| sidecar.get("captured_at"));
        let parsed = raw_time.and_then(|t| parse_time_value(t));
        let captured_at = parsed.or(modified);

        let mut event = IngestEvent::new(&camera_id, captured_at, received_at, bytes, path.display().to_string())
            .map_err(|e| (e.to_string(), true))?;
        if raw_time.is_some() && parsed.is_none() {
            event = event.with_flag(EventFlag::TimestampSubstituted { raw: raw_time.cloned() });
        }
        Ok(event)
    }
}

/// One pass over a drop directory.
pub fn ingest_directory(root: impl Into<PathBuf>) -> io::Result<DirectoryScan> {
    DirectoryWatcher::new(root).scan()
}
