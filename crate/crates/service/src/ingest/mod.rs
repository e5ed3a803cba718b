//! Camera transmissions in: mailbox polling, drop-directory scanning and the
//! bounded work queue feeding classification.

mod dropdir;
mod mail;
mod queue;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dropdir::{ingest_directory, read_sidecar, DirectoryScan, DirectoryWatcher, SkippedFile};
pub use mail::{
    deliver_messages, fetch_with_backoff, parse_message, Backoff, DeliveryReport, ImapConfig,
    ImapMailbox, Mailbox, MailboxError, MemoryMailbox, QuarantineReason, RawMessage,
};
pub use queue::{BoundedQueue, QueueClosed, QueueStats, DEFAULT_QUEUE_CAPACITY};

/// How far a camera clock may run ahead of the receive time before the event
/// is flagged.
pub const CLOCK_SKEW_TOLERANCE_HOURS: i64 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum EventFlag {
    /// The capture time could not be read; the receive time stands in.
    TimestampSubstituted { raw: Option<String> },
    /// Capture time lies further ahead of the receive time than tolerated.
    ClockSkew { ahead_seconds: i64 },
    /// Further image attachments after the first were ignored.
    ExtraAttachments { ignored: usize },
    /// The camera is not in the registry.
    UnknownCamera,
}

/// One image received from a camera.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestEvent {
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub received_at: DateTime<Utc>,
    /// Hex SHA-256 of the image bytes.
    pub content_hash: String,
    #[serde(with = "b64")]
    pub image_bytes: Vec<u8>,
    pub flags: Vec<EventFlag>,
    /// Where the event came from: message uid or file path.
    pub source: String,
}

impl std::fmt::Debug for IngestEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IngestEvent")
            .field("event_id", &self.event_id)
            .field("camera_id", &self.camera_id)
            .field("captured_at", &self.captured_at)
            .field("received_at", &self.received_at)
            .field("bytes", &self.image_bytes.len())
            .field("flags", &self.flags)
            .field("source", &self.source)
            .finish()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EventError {
    #[error("image payload is empty")]
    EmptyImage,
    #[error("camera id is empty")]
    EmptyCamera,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl IngestEvent {
    /// Builds an event; the id is derived from camera and content so a
    /// re-delivered image maps to the same id.
    pub fn new(
        camera_id: &str,
        captured_at: Option<DateTime<Utc>>,
        received_at: DateTime<Utc>,
        image_bytes: Vec<u8>,
        source: impl Into<String>,
    ) -> Result<Self, EventError> {
        let camera_id = camera_id.trim();
        if camera_id.is_empty() {
            return Err(EventError::EmptyCamera);
        }
        if image_bytes.is_empty() {
            return Err(EventError::EmptyImage);
        }
        let hash = content_hash(&image_bytes);
        let mut id = Sha256::new();
        id.update(camera_id.as_bytes());
        id.update([0u8]);
        id.update(hash.as_bytes());
        let event_id = hex::encode(&id.finalize()[..16]);

        let mut flags = Vec::new();
        let captured_at = match captured_at {
            Some(t) => {
                let ahead = t - received_at;
                if ahead > Duration::hours(CLOCK_SKEW_TOLERANCE_HOURS) {
                    flags.push(EventFlag::ClockSkew {
                        ahead_seconds: ahead.num_seconds(),
                    });
                }
                t
            }
            None => received_at,
        };
        Ok(Self {
            event_id,
            camera_id: camera_id.to_string(),
            captured_at,
            received_at,
            content_hash: hash,
            image_bytes,
            flags,
            source: source.into(),
        })
    }

    pub fn with_flag(mut self, flag: EventFlag) -> Self {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
        self
    }
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
