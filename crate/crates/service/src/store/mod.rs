//! Embedded SQLite persistence: cameras, events, detections, blanks, alerts
//! and the retry queue. See `docs/schema.md` for the table layout.

mod query;
mod retry;

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, OptionalExtension, Transaction};
use serde::Serialize;
use trapline_core::domain::{CameraSource, Sensitivity};

use crate::inference::ClassifiedImage;
use crate::ingest::{EventFlag, IngestEvent};

pub use query::{
    BlankRecord, DetectionFilter, DetectionPage, DetectionRecord, ImagePrediction, PageCursor,
    PageRequest, SpeciesCounts, TimeRange, MAX_PAGE_SIZE,
};
pub use retry::ParkedEvent;

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS cameras (
    camera_id      TEXT PRIMARY KEY,
    width          INTEGER NOT NULL,
    height         INTEGER NOT NULL,
    dpi            INTEGER NOT NULL,
    sensitivity    TEXT NOT NULL,
    registered_at  TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    event_id        TEXT PRIMARY KEY,
    camera_id       TEXT NOT NULL,
    content_hash    TEXT NOT NULL,
    captured_at     TEXT NOT NULL,
    received_at     TEXT NOT NULL,
    stored_at       TEXT NOT NULL,
    is_blank        INTEGER NOT NULL,
    detection_count INTEGER NOT NULL,
    latency_ms      INTEGER NOT NULL,
    flags           TEXT NOT NULL,
    UNIQUE (camera_id, content_hash)
);
CREATE INDEX IF NOT EXISTS events_captured ON events (captured_at);
CREATE TABLE IF NOT EXISTS detections (
    record_id   INTEGER PRIMARY KEY AUTOINCREMENT,
    event_id    TEXT NOT NULL REFERENCES events (event_id),
    camera_id   TEXT NOT NULL,
    captured_at TEXT NOT NULL,
    label       TEXT NOT NULL,
    score       REAL NOT NULL,
    xmin        REAL NOT NULL,
    ymin        REAL NOT NULL,
    xmax        REAL NOT NULL,
    ymax        REAL NOT NULL,
    stored_at   TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS detections_order ON detections (captured_at, record_id);
CREATE INDEX IF NOT EXISTS detections_event ON detections (event_id);
CREATE TABLE IF NOT EXISTS blanks (
    record_id   INTEGER PRIMARY KEY AUTOINCREMENT,
    event_id    TEXT NOT NULL UNIQUE REFERENCES events (event_id),
    camera_id   TEXT NOT NULL,
    captured_at TEXT NOT NULL,
    stored_at   TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS alerts (
    alert_id    INTEGER PRIMARY KEY AUTOINCREMENT,
    rule_id     TEXT NOT NULL,
    event_id    TEXT NOT NULL,
    species     TEXT NOT NULL,
    score       REAL NOT NULL,
    camera_id   TEXT NOT NULL,
    captured_at TEXT NOT NULL,
    channel     TEXT NOT NULL,
    delivered   INTEGER,
    error       TEXT,
    fired_at    TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS retry_queue (
    event_id    TEXT PRIMARY KEY,
    event_json  TEXT NOT NULL,
    attempts    INTEGER NOT NULL,
    last_error  TEXT NOT NULL,
    parked_at   TEXT NOT NULL
);
"#;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("camera {0} is already registered")]
    DuplicateCamera(String),
    #[error("refusing to store result: {0}")]
    InvalidRecord(String),
    #[error("malformed query: {0}")]
    BadFilter(String),
    #[error("injected write failure after {0} detection write(s)")]
    Injected(usize),
    #[error("stored data is unreadable: {0}")]
    Corrupt(String),
}

/// Receive-side metadata stored with a classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventMeta {
    pub received_at: DateTime<Utc>,
    pub flags: Vec<EventFlag>,
}

impl IngestEvent {
    pub fn meta(&self) -> EventMeta {
        EventMeta {
            received_at: self.received_at,
            flags: self.flags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum StoreOutcome {
    Stored {
        event_id: String,
        detection_ids: Vec<i64>,
        blank_id: Option<i64>,
        flags: Vec<EventFlag>,
    },
    /// Same camera and image content already stored under `event_id`.
    Duplicate { event_id: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BatchOutcome {
    pub stored: usize,
    pub duplicates: usize,
}

pub(crate) fn ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

pub(crate) fn parse_ts(s: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| StoreError::Corrupt(format!("timestamp {s:?}: {e}")))
}

pub struct Store {
    conn: Mutex<Connection>,
    confidence_floor: f64,
    fail_after: Mutex<Option<usize>>,
}

impl Store {
    pub fn open(path: impl AsRef<Path>, confidence_floor: f64) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.query_row("PRAGMA journal_mode = WAL", [], |_| Ok(()))?;
        conn.execute_batch("PRAGMA synchronous = NORMAL; PRAGMA busy_timeout = 5000;")?;
        Self::init(conn, confidence_floor)
    }

    pub fn in_memory(confidence_floor: f64) -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?, confidence_floor)
    }

    fn init(conn: Connection, confidence_floor: f64) -> Result<Self, StoreError> {
        conn.execute_batch("PRAGMA foreign_keys = ON;")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
            confidence_floor,
            fail_after: Mutex::new(None),
        })
    }

    pub(crate) fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn confidence_floor(&self) -> f64 {
        self.confidence_floor
    }

    /// Makes the next result write fail after `writes` detection rows, before
    /// commit. Used to exercise rollback.
    pub fn inject_failure_after(&self, writes: usize) {
        *self.fail_after.lock().unwrap_or_else(|p| p.into_inner()) = Some(writes);
    }

    pub fn register_camera(&self, camera: &CameraSource) -> Result<(), StoreError> {
        let conn = self.conn();
        let inserted = conn.execute(
            "INSERT OR IGNORE INTO cameras (camera_id, width, height, dpi, sensitivity, registered_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                camera.camera_id,
                camera.resolution.0,
                camera.resolution.1,
                camera.dpi,
                camera.sensitivity.to_string(),
                ts(&Utc::now())
            ],
        )?;
        if inserted == 0 {
            return Err(StoreError::DuplicateCamera(camera.camera_id.clone()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<CameraSource>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT camera_id, width, height, dpi, sensitivity FROM cameras ORDER BY camera_id")?;
        let rows = stmt.query_map([], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, u32>(1)?, r.get::<_, u32>(2)?, r.get::<_, u32>(3)?, r.get::<_, String>(4)?))
        })?;
        rows.map(|row| {
            let (id, w, h, dpi, sens) = row?;
            let sensitivity: Sensitivity = sens.parse().map_err(StoreError::Corrupt)?;
            CameraSource::new(id, (w, h), dpi, sensitivity).map_err(|e| StoreError::Corrupt(e.to_string()))
        })
        .collect()
    }

    fn validate(&self, c: &ClassifiedImage) -> Result<(), StoreError> {
        if c.is_blank != c.detections.is_empty() {
            return Err(StoreError::InvalidRecord(format!(
                "event {}: blank flag disagrees with {} detection(s)",
                c.event_id,
                c.detections.len()
            )));
        }
        if let Some(d) = c.detections.iter().find(|d| d.score <= self.confidence_floor) {
            return Err(StoreError::InvalidRecord(format!(
                "event {}: score {} does not exceed the floor {}",
                c.event_id, d.score, self.confidence_floor
            )));
        }
        Ok(())
    }

    fn insert(&self, tx: &Transaction, c: &ClassifiedImage, meta: &EventMeta) -> Result<StoreOutcome, StoreError> {
        let existing: Option<String> = tx
            .query_row(
                "SELECT event_id FROM events WHERE camera_id = ?1 AND content_hash = ?2",
                params![c.camera_id, c.content_hash],
                |r| r.get(0),
            )
            .optional()?;
        if let Some(event_id) = existing {
            return Ok(StoreOutcome::Duplicate { event_id });
        }

        let mut flags = meta.flags.clone();
        let known: bool = tx
            .query_row("SELECT 1 FROM cameras WHERE camera_id = ?1", [&c.camera_id], |_| Ok(()))
            .optional()?
            .is_some();
        if !known && !flags.contains(&EventFlag::UnknownCamera) {
            flags.push(EventFlag::UnknownCamera);
        }
        let now = ts(&Utc::now());
        let captured = ts(&c.captured_at);
        let flags_json = serde_json::to_string(&flags).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        tx.execute(
            "INSERT INTO events (event_id, camera_id, content_hash, captured_at, received_at, stored_at,
                                 is_blank, detection_count, latency_ms, flags)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
            params![
                c.event_id,
                c.camera_id,
                c.content_hash,
                captured,
                ts(&meta.received_at),
                now,
                c.is_blank,
                c.detections.len() as i64,
                c.latency_ms as i64,
                flags_json
            ],
        )?;

        let fail_after = self.fail_after.lock().unwrap_or_else(|p| p.into_inner()).take();
        let mut detection_ids = Vec::with_capacity(c.detections.len());
        let mut stmt = tx.prepare_cached(
            "INSERT INTO detections (event_id, camera_id, captured_at, label, score, xmin, ymin, xmax, ymax, stored_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
        )?;
        for (i, d) in c.detections.iter().enumerate() {
            if fail_after == Some(i) {
                return Err(StoreError::Injected(i));
            }
            let b = d.bbox;
            stmt.execute(params![
                c.event_id,
                c.camera_id,
                captured,
                d.label.name(),
                d.score,
                b.xmin,
                b.ymin,
                b.xmax,
                b.ymax,
                now
            ])?;
            detection_ids.push(tx.last_insert_rowid());
        }
        if let Some(n) = fail_after {
            return Err(StoreError::Injected(n.min(c.detections.len())));
        }
        let blank_id = if c.is_blank {
            tx.execute(
                "INSERT INTO blanks (event_id, camera_id, captured_at, stored_at) VALUES (?1, ?2, ?3, ?4)",
                params![c.event_id, c.camera_id, captured, now],
            )?;
            Some(tx.last_insert_rowid())
        } else {
            None
        };
        Ok(StoreOutcome::Stored {
            event_id: c.event_id.clone(),
            detection_ids,
            blank_id,
            flags,
        })
    }

    /// Stores one classified image atomically: a blank row, or one row per
    /// detection. Re-submitted content is recognised and stored nothing.
    pub fn record_result(&self, c: &ClassifiedImage, meta: &EventMeta) -> Result<StoreOutcome, StoreError> {
        self.validate(c)?;
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let outcome = self.insert(&tx, c, meta)?;
        tx.commit()?;
        match &outcome {
            StoreOutcome::Stored { event_id, detection_ids, .. } => {
                tracing::info!(stage = "store", %event_id, detections = detection_ids.len(), blank = c.is_blank, "result stored")
            }
            StoreOutcome::Duplicate { event_id } => {
                tracing::info!(stage = "store", %event_id, duplicate_of = %event_id, "duplicate content ignored")
            }
        }
        Ok(outcome)
    }

    /// Stores many results in one transaction (bulk import); all or nothing.
    pub fn record_batch<'a>(
        &self,
        items: impl IntoIterator<Item = (&'a ClassifiedImage, &'a EventMeta)>,
    ) -> Result<BatchOutcome, StoreError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let mut out = BatchOutcome::default();
        for (c, meta) in items {
            self.validate(c)?;
            match self.insert(&tx, c, meta)? {
                StoreOutcome::Stored { .. } => out.stored += 1,
                StoreOutcome::Duplicate { .. } => out.duplicates += 1,
            }
        }
        tx.commit()?;
        Ok(out)
    }

    /// Flags stored with an event, if it exists.
    pub fn event_flags(&self, event_id: &str) -> Result<Option<Vec<EventFlag>>, StoreError> {
        let conn = self.conn();
        let raw: Option<String> = conn
            .query_row("SELECT flags FROM events WHERE event_id = ?1", [event_id], |r| r.get(0))
            .optional()?;
        raw.map(|s| serde_json::from_str(&s).map_err(|e| StoreError::Corrupt(e.to_string())))
            .transpose()
    }

    pub fn record_alert(
        &self,
        alert: &crate::alerts::FiredAlert,
        delivered: Option<bool>,
        error: Option<&str>,
    ) -> Result<i64, StoreError> {
        let conn = self.conn();
        conn.execute(
            "INSERT INTO alerts (rule_id, event_id, species, score, camera_id, captured_at, channel, delivered, error, fired_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
            params![
                alert.rule_id,
                alert.event_id,
                alert.species.name(),
                alert.score,
                alert.camera_id,
                ts(&alert.captured_at),
                alert.channel.to_string(),
                delivered,
                error,
                ts(&Utc::now())
            ],
        )?;
        Ok(conn.last_insert_rowid())
    }

    pub fn alert_count(&self) -> Result<u64, StoreError> {
        Ok(self.conn().query_row("SELECT COUNT(*) FROM alerts", [], |r| r.get::<_, i64>(0))? as u64)
    }
}
