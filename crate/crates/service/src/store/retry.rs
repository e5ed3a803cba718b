//! Parking area for events that could not be classified or stored.

use chrono::{DateTime, Utc};
use rusqlite::params;
use serde::Serialize;

use super::{parse_ts, ts, Store, StoreError};
use crate::ingest::IngestEvent;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParkedEvent {
    pub event: IngestEvent,
    pub attempts: u32,
    pub last_error: String,
    pub parked_at: DateTime<Utc>,
}

impl Store {
    /// Parks an event; parking it again adds to its attempt count.
    pub fn park(&self, event: &IngestEvent, attempts: u32, error: &str) -> Result<(), StoreError> {
        let json = serde_json::to_string(event).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        self.conn().execute(
            "INSERT INTO retry_queue (event_id, event_json, attempts, last_error, parked_at)
             VALUES (?1, ?2, ?3, ?4, ?5)
             ON CONFLICT (event_id) DO UPDATE SET
                attempts = attempts + excluded.attempts,
                last_error = excluded.last_error,
                parked_at = excluded.parked_at",
            params![event.event_id, json, attempts, error, ts(&Utc::now())],
        )?;
        tracing::warn!(stage = "store", event_id = %event.event_id, attempts, error, "event parked for retry");
        Ok(())
    }

    pub fn parked_count(&self) -> Result<u64, StoreError> {
        Ok(self.conn().query_row("SELECT COUNT(*) FROM retry_queue", [], |r| r.get::<_, i64>(0))? as u64)
    }

    pub fn parked(&self) -> Result<Vec<ParkedEvent>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT event_json, attempts, last_error, parked_at FROM retry_queue ORDER BY parked_at, event_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, u32>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
        })?;
        rows.map(|row| {
            let (json, attempts, last_error, parked_at) = row?;
            Ok(ParkedEvent {
                event: serde_json::from_str(&json).map_err(|e| StoreError::Corrupt(e.to_string()))?,
                attempts,
                last_error,
                parked_at: parse_ts(&parked_at)?,
            })
        })
        .collect()
    }

    /// Removes and returns every parked event for another attempt.
    pub fn take_parked(&self) -> Result<Vec<ParkedEvent>, StoreError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let parked = {
            let mut stmt = tx.prepare(
                "SELECT event_json, attempts, last_error, parked_at FROM retry_queue ORDER BY parked_at, event_id",
            )?;
            let rows = stmt.query_map([], |r| {
                Ok((r.get::<_, String>(0)?, r.get::<_, u32>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
            })?;
            let mut out = Vec::new();
            for row in rows {
                let (json, attempts, last_error, parked_at) = row?;
                out.push(ParkedEvent {
                    event: serde_json::from_str(&json).map_err(|e| StoreError::Corrupt(e.to_string()))?,
                    attempts,
                    last_error,
                    parked_at: parse_ts(&parked_at)?,
                });
            }
            out
        };
        tx.execute("DELETE FROM retry_queue", [])?;
        tx.commit()?;
        Ok(parked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn park_and_redrive() {
        let store = Store::in_memory(0.5).unwrap();
        let e = IngestEvent::new("CAM", None, Utc::now(), vec![1, 2], "t").unwrap();
        store.park(&e, 4, "down").unwrap();
        store.park(&e, 2, "still down").unwrap();
        let parked = store.parked().unwrap();
        assert_eq!(parked.len(), 1);
        assert_eq!(parked[0].attempts, 6);
        assert_eq!(parked[0].last_error, "still down");
        assert_eq!(parked[0].event.event_id, e.event_id);
        assert_eq!(store.take_parked().unwrap().len(), 1);
        assert_eq!(store.parked_count().unwrap(), 0);
    }
}
