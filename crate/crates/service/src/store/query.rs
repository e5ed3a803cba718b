use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use rusqlite::types::Value;
use rusqlite::params_from_iter;
use serde::{Deserialize, Serialize};
use trapline_core::domain::{BoundingBox, SpeciesLabel};
use trapline_core::harness::TrialRecord;

use super::{parse_ts, ts, Store, StoreError};

pub const MAX_PAGE_SIZE: usize = 1000;

/// Half-open interval on capture time; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn all() -> Self {
        Self::default()
    }

    fn check(&self) -> Result<(), StoreError> {
        match (self.from, self.to) {
            (Some(f), Some(t)) if f > t => Err(StoreError::BadFilter(format!("time range starts after it ends ({f} > {t})"))),
            _ => Ok(()),
        }
    }

    fn push_sql(&self, column: &str, sql: &mut Vec<String>, args: &mut Vec<Value>) {
        if let Some(f) = self.from {
            sql.push(format!("{column} >= ?"));
            args.push(Value::Text(ts(&f)));
        }
        if let Some(t) = self.to {
            sql.push(format!("{column} < ?"));
            args.push(Value::Text(ts(&t)));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SpeciesCounts {
    /// Detection records per species.
    pub detections_by_species: BTreeMap<String, u64>,
    /// Images with at least one detection of the species.
    pub images_by_species: BTreeMap<String, u64>,
    pub detection_records: u64,
    /// Images with at least one detection.
    pub detection_images: u64,
    pub blank_images: u64,
    /// Classified images; always `detection_images + blank_images`.
    pub total_images: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionFilter {
    pub species: Option<String>,
    pub camera_id: Option<String>,
    #[serde(default)]
    pub range: TimeRange,
    pub min_score: Option<f64>,
    pub max_score: Option<f64>,
}

impl DetectionFilter {
    fn check(&self) -> Result<(), StoreError> {
        self.range.check()?;
        for s in [self.min_score, self.max_score].into_iter().flatten() {
            if !(0.0..=1.0).contains(&s) {
                return Err(StoreError::BadFilter(format!("score bound {s} outside [0, 1]")));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_score, self.max_score) {
            if lo > hi {
                return Err(StoreError::BadFilter(format!("score range [{lo}, {hi}] is empty")));
            }
        }
        if let Some(s) = &self.species {
            if s.trim().is_empty() {
                return Err(StoreError::BadFilter("species filter is empty".into()));
            }
        }
        Ok(())
    }
}

/// Position after the last record of a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageCursor {
    pub captured_at: String,
    pub record_id: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRequest {
    pub size: usize,
    pub after: Option<PageCursor>,
}

impl PageRequest {
    pub fn first(size: usize) -> Self {
        Self { size, after: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub record_id: i64,
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub label: SpeciesLabel,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub stored_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlankRecord {
    pub record_id: i64,
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub stored_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionPage {
    pub records: Vec<DetectionRecord>,
    pub next: Option<PageCursor>,
}

/// Image-level outcome of one stored event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImagePrediction {
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub label: SpeciesLabel,
    pub score: Option<f64>,
}

fn count_query(conn: &rusqlite::Connection, sql: &str, args: &[Value]) -> Result<u64, StoreError> {
    Ok(conn.query_row(sql, params_from_iter(args.iter()), |r| r.get::<_, i64>(0))? as u64)
}

impl Store {
    pub fn species_counts(&self, range: &TimeRange, camera: Option<&str>) -> Result<SpeciesCounts, StoreError> {
        range.check()?;
        let mut clauses = Vec::new();
        let mut args = Vec::new();
        range.push_sql("captured_at", &mut clauses, &mut args);
        if let Some(c) = camera {
            clauses.push("camera_id = ?".to_string());
            args.push(Value::Text(c.to_string()));
        }
        let filter = if clauses.is_empty() {
            String::new()
        } else {
            format!(" WHERE {}", clauses.join(" AND "))
        };
        let conn = self.conn();
        let mut out = SpeciesCounts {
            total_images: count_query(&conn, &format!("SELECT COUNT(*) FROM events{filter}"), &args)?,
            ..SpeciesCounts::default()
        };
        let blank_filter = if filter.is_empty() { " WHERE is_blank = 1".to_string() } else { format!("{filter} AND is_blank = 1") };
        out.blank_images = count_query(&conn, &format!("SELECT COUNT(*) FROM events{blank_filter}"), &args)?;
        let det_filter = if filter.is_empty() { " WHERE is_blank = 0".to_string() } else { format!("{filter} AND is_blank = 0") };
        out.detection_images = count_query(&conn, &format!("SELECT COUNT(*) FROM events{det_filter}"), &args)?;

        let mut stmt = conn.prepare(&format!(
            "SELECT label, COUNT(*), COUNT(DISTINCT event_id) FROM detections{filter} GROUP BY label ORDER BY label"
        ))?;
        let rows = stmt.query_map(params_from_iter(args.iter()), |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?, r.get::<_, i64>(2)?))
        })?;
        for row in rows {
            let (label, records, images) = row?;
            out.detection_records += records as u64;
            out.detections_by_species.insert(label.clone(), records as u64);
            out.images_by_species.insert(label, images as u64);
        }
        Ok(out)
    }

    /// Detection records matching `filter`, ordered by (captured_at, record_id).
    pub fn query_detections(&self, filter: &DetectionFilter, page: &PageRequest) -> Result<DetectionPage, StoreError> {
        filter.check()?;
        if page.size == 0 || page.size > MAX_PAGE_SIZE {
            return Err(StoreError::BadFilter(format!("page size must be 1..={MAX_PAGE_SIZE}")));
        }
        let mut clauses = Vec::new();
        let mut args = Vec::new();
        filter.range.push_sql("captured_at", &mut clauses, &mut args);
        if let Some(s) = &filter.species {
            let label = SpeciesLabel::species(s).map_err(|e| StoreError::BadFilter(e.to_string()))?;
            clauses.push("label = ? COLLATE NOCASE".into());
            args.push(Value::Text(label.name().to_string()));
        }
        if let Some(c) = &filter.camera_id {
            clauses.push("camera_id = ?".into());
            args.push(Value::Text(c.clone()));
        }
        if let Some(lo) = filter.min_score {
            clauses.push("score >= ?".into());
            args.push(Value::Real(lo));
        }
        if let Some(hi) = filter.max_score {
            clauses.push("score <= ?".into());
            args.push(Value::Real(hi));
        }
        if let Some(after) = &page.after {
            clauses.push("(captured_at > ? OR (captured_at = ? AND record_id > ?))".into());
            args.push(Value::Text(after.captured_at.clone()));
            args.push(Value::Text(after.captured_at.clone()));
            args.push(Value::Integer(after.record_id));
        }
        let filter_sql = if clauses.is_empty() {
            String::new()
        } else {
            format!(" WHERE {}", clauses.join(" AND "))
        };
        args.push(Value::Integer(page.size as i64 + 1));

        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT record_id, event_id, camera_id, captured_at, label, score, xmin, ymin, xmax, ymax, stored_at
             FROM detections{filter_sql} ORDER BY captured_at, record_id LIMIT ?"
        ))?;
        let rows = stmt.query_map(params_from_iter(args.iter()), |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, f64>(5)?,
                [r.get::<_, f64>(6)?, r.get::<_, f64>(7)?, r.get::<_, f64>(8)?, r.get::<_, f64>(9)?],
                r.get::<_, String>(10)?,
            ))
        })?;
        let mut raw = Vec::new();
        for row in rows {
            raw.push(row?);
        }
        let more = raw.len() > page.size;
        raw.truncate(page.size);
        let next = if more {
            raw.last().map(|r| PageCursor {
                captured_at: r.3.clone(),
                record_id: r.0,
            })
        } else {
            None
        };
        let records = raw
            .into_iter()
            .map(|(record_id, event_id, camera_id, captured, label, score, b, stored)| {
                Ok(DetectionRecord {
                    record_id,
                    event_id,
                    camera_id,
                    captured_at: parse_ts(&captured)?,
                    label: SpeciesLabel::species(&label).map_err(|e| StoreError::Corrupt(e.to_string()))?,
                    score,
                    bbox: BoundingBox::from(b),
                    stored_at: parse_ts(&stored)?,
                })
            })
            .collect::<Result<_, StoreError>>()?;
        Ok(DetectionPage { records, next })
    }

    /// Every matching detection record, following pages.
    pub fn all_detections(&self, filter: &DetectionFilter) -> Result<Vec<DetectionRecord>, StoreError> {
        let mut out = Vec::new();
        let mut page = PageRequest::first(MAX_PAGE_SIZE);
        loop {
            let got = self.query_detections(filter, &page)?;
            out.extend(got.records);
            match got.next {
                Some(c) => page.after = Some(c),
                None => return Ok(out),
            }
        }
    }

    pub fn blank_records(&self, range: &TimeRange) -> Result<Vec<BlankRecord>, StoreError> {
        range.check()?;
        let mut clauses = Vec::new();
        let mut args = Vec::new();
        range.push_sql("captured_at", &mut clauses, &mut args);
        let filter = if clauses.is_empty() { String::new() } else { format!(" WHERE {}", clauses.join(" AND ")) };
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT record_id, event_id, camera_id, captured_at, stored_at FROM blanks{filter} ORDER BY captured_at, record_id"
        ))?;
        let rows = stmt.query_map(params_from_iter(args.iter()), |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?, r.get::<_, String>(4)?))
        })?;
        rows.map(|row| {
            let (record_id, event_id, camera_id, captured, stored) = row?;
            Ok(BlankRecord {
                record_id,
                event_id,
                camera_id,
                captured_at: parse_ts(&captured)?,
                stored_at: parse_ts(&stored)?,
            })
        })
        .collect()
    }

    /// Image-level label of every stored event: its best-scoring detection,
    /// Blank when it has none. Ordered by capture time then event id.
    pub fn image_predictions(&self) -> Result<Vec<ImagePrediction>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT e.event_id, e.camera_id, e.captured_at,
                    (SELECT label FROM detections d WHERE d.event_id = e.event_id ORDER BY score DESC, record_id LIMIT 1),
                    (SELECT MAX(score) FROM detections d WHERE d.event_id = e.event_id)
             FROM events e ORDER BY e.captured_at, e.event_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, Option<String>>(3)?,
                r.get::<_, Option<f64>>(4)?,
            ))
        })?;
        rows.map(|row| {
            let (event_id, camera_id, captured, label, score) = row?;
            let label = match label {
                Some(l) => SpeciesLabel::species(&l).map_err(|e| StoreError::Corrupt(e.to_string()))?,
                None => SpeciesLabel::blank(),
            };
            Ok(ImagePrediction {
                event_id,
                camera_id,
                captured_at: parse_ts(&captured)?,
                label,
                score,
            })
        })
        .collect()
    }

    /// Trial records for events with an operator-verified label; also
    /// returns labelled event ids that are not in the store.
    pub fn trial_records(
        &self,
        verified: &HashMap<String, SpeciesLabel>,
    ) -> Result<(Vec<TrialRecord>, Vec<String>), StoreError> {
        let predictions = self.image_predictions()?;
        let mut found = std::collections::HashSet::new();
        let records = predictions
            .into_iter()
            .filter_map(|p| {
                let truth = verified.get(&p.event_id)?;
                found.insert(p.event_id.clone());
                Some(TrialRecord {
                    image_id: p.event_id,
                    true_label: truth.clone(),
                    predicted_label: p.label,
                    score: p.score,
                    fold: None,
                })
            })
            .collect();
        let mut missing: Vec<String> = verified.keys().filter(|k| !found.contains(*k)).cloned().collect();
        missing.sort();
        Ok((records, missing))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::classified;
    use super::*;
    use chrono::{Duration, TimeZone};

    fn store_with(n_det: usize, n_blank: usize) -> Store {
        let store = Store::in_memory(0.5).unwrap();
        for i in 0..n_det {
            let (mut c, m) = classified(&format!("d{i}"), "CAM-1", &[0.9]);
            c.captured_at += Duration::minutes(i as i64);
            store.record_result(&c, &m).unwrap();
        }
        for i in 0..n_blank {
            let (c, m) = classified(&format!("b{i}"), "CAM-2", &[]);
            store.record_result(&c, &m).unwrap();
        }
        store
    }

    #[test]
    fn counts_partition_images() {
        let empty = Store::in_memory(0.5).unwrap();
        assert_eq!(empty.species_counts(&TimeRange::all(), None).unwrap(), SpeciesCounts::default());

        let store = store_with(2, 1);
        let c = store.species_counts(&TimeRange::all(), None).unwrap();
        assert_eq!((c.blank_images, c.detection_images, c.total_images), (1, 2, 3));
        assert_eq!(c.detections_by_species["Pica pica"], 2);

        let only_cam2 = store.species_counts(&TimeRange::all(), Some("CAM-2")).unwrap();
        assert_eq!((only_cam2.blank_images, only_cam2.total_images), (1, 1));
    }

    #[test]
    fn record_and_image_counts_differ_for_multi_bird_images() {
        let store = Store::in_memory(0.5).unwrap();
        let (c, m) = classified("two", "C", &[0.9, 0.8]);
        store.record_result(&c, &m).unwrap();
        let counts = store.species_counts(&TimeRange::all(), None).unwrap();
        assert_eq!(counts.detection_records, 2);
        assert_eq!(counts.images_by_species["Pica pica"], 1);
        assert_eq!(counts.detection_images, 1);
    }

    #[test]
    fn time_range_is_half_open() {
        let store = store_with(3, 0);
        let t0 = Utc.with_ymd_and_hms(2021, 3, 5, 10, 0, 0).unwrap();
        let range = TimeRange { from: Some(t0), to: Some(t0 + Duration::minutes(2)) };
        assert_eq!(store.species_counts(&range, None).unwrap().total_images, 2);
        let bad = TimeRange { from: Some(t0), to: Some(t0 - Duration::minutes(1)) };
        assert!(store.species_counts(&bad, None).is_err());
    }

    #[test]
    fn paging() {
        let store = store_with(5, 0);
        let mut pages = 0;
        let mut seen = Vec::new();
        let mut req = PageRequest::first(2);
        loop {
            let page = store.query_detections(&DetectionFilter::default(), &req).unwrap();
            pages += 1;
            seen.extend(page.records.iter().map(|r| r.event_id.clone()));
            match page.next {
                Some(c) => req.after = Some(c),
                None => break,
            }
        }
        assert_eq!(pages, 3);
        assert_eq!(seen, vec!["d0", "d1", "d2", "d3", "d4"]);
        assert!(store.query_detections(&DetectionFilter::default(), &PageRequest::first(0)).is_err());
    }

    #[test]
    fn filters() {
        let store = store_with(3, 2);
        let f = DetectionFilter { species: Some("pica pica".into()), ..Default::default() };
        assert_eq!(store.all_detections(&f).unwrap().len(), 3);
        let f = DetectionFilter { min_score: Some(0.95), max_score: Some(1.0), ..Default::default() };
        assert!(store.all_detections(&f).unwrap().is_empty());
        let f = DetectionFilter { min_score: Some(0.9), max_score: Some(0.1), ..Default::default() };
        assert!(matches!(store.all_detections(&f), Err(StoreError::BadFilter(_))));
        let f = DetectionFilter { camera_id: Some("CAM-2".into()), ..Default::default() };
        assert!(store.all_detections(&f).unwrap().is_empty());
        assert_eq!(store.blank_records(&TimeRange::all()).unwrap().len(), 2);
    }

    #[test]
    fn predictions_and_trial_export() {
        let store = store_with(1, 1);
        let preds = store.image_predictions().unwrap();
        assert_eq!(preds.len(), 2);
        let mut verified = HashMap::new();
        verified.insert("d0".to_string(), SpeciesLabel::species("Pica pica").unwrap());
        verified.insert("b0".to_string(), SpeciesLabel::species("Pica pica").unwrap());
        verified.insert("gone".to_string(), SpeciesLabel::blank());
        let (records, missing) = store.trial_records(&verified).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(missing, vec!["gone".to_string()]);
        let b0 = records.iter().find(|r| r.image_id == "b0").unwrap();
        assert_eq!(b0.predicted_label, SpeciesLabel::blank());
        assert_eq!(b0.score, None);
    }
}
