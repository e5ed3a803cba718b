//! Remote detection: backend protocol, the confidence-floor blank rule and
//! retrying classification.

mod http;
mod mock;

use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use trapline_core::domain::{normalize_label, BoundingBox, Detection, LabelToken};

use crate::ingest::IngestEvent;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockError, MockServer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub confidence_floor: f64,
    pub workers: usize,
    /// First retry delay; doubles per attempt.
    pub retry_base_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8501".into(),
            model: "bird-detector".into(),
            timeout_s: 10.0,
            max_retries: 3,
            confidence_floor: 0.5,
            workers: 4,
            retry_base_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    pub fn retry_delay(&self, attempt: u32) -> Duration {
        let ms = self.retry_base_ms.saturating_mul(1u64 << attempt.min(16));
        Duration::from_millis(ms.min(30_000))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.confidence_floor) {
            return Err(format!("confidence_floor {} must lie in [0, 1)", self.confidence_floor));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(format!("timeout_s {} must be positive", self.timeout_s));
        }
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.endpoint.trim().is_empty() {
            return Err("endpoint is empty".into());
        }
        Ok(())
    }
}

/// A detection as sent by the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Retryable(String),
    #[error("backend refused request: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Retryable(_))
    }
}

pub trait DetectionBackend: Send + Sync {
    fn detect(&self, image: &[u8]) -> Result<Vec<RawDetection>, BackendError>;

    /// Cheap liveness request.
    fn probe(&self) -> Result<(), BackendError>;
}

/// Converts wire detections. A detection labelled Blank carries no animal and
/// is dropped; anything else unreadable is a protocol error.
pub fn to_detections(raw: &[RawDetection]) -> Result<Vec<Detection>, BackendError> {
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let label = match normalize_label(&r.label) {
            Ok(LabelToken::Label(l)) if l.is_blank() => continue,
            Ok(LabelToken::Label(l)) => l,
            Ok(LabelToken::QualityFlag(_)) => continue,
            Err(e) => return Err(BackendError::Fatal(format!("bad label {:?}: {e}", r.label))),
        };
        let bbox = BoundingBox::from(r.bbox);
        let det = Detection::new(label, r.score, bbox).map_err(|e| BackendError::Fatal(e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

/// Keeps detections scoring strictly above `floor`; the image is blank when
/// none survive.
pub fn apply_threshold(detections: &[Detection], floor: f64) -> (Vec<Detection>, bool) {
    let kept: Vec<Detection> = detections.iter().filter(|d| d.score > floor).cloned().collect();
    let blank = kept.is_empty();
    (kept, blank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedImage {
    pub event_id: String,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub content_hash: String,
    /// Detections above the confidence floor.
    pub detections: Vec<Detection>,
    pub is_blank: bool,
    pub latency_ms: u64,
}

impl ClassifiedImage {
    /// Equality ignoring latency.
    pub fn same_result(&self, other: &ClassifiedImage) -> bool {
        ClassifiedImage { latency_ms: 0, ..self.clone() } == ClassifiedImage { latency_ms: 0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("classification failed after {attempts} attempt(s): {error}")]
pub struct ClassifyFailure {
    pub attempts: u32,
    pub error: BackendError,
}

/// Sends the image to the backend, retrying retryable failures up to
/// `max_retries` times with doubling delays.
pub fn classify(
    backend: &dyn DetectionBackend,
    event: &IngestEvent,
    cfg: &BackendConfig,
) -> Result<ClassifiedImage, ClassifyFailure> {
    let mut attempt = 0;
    loop {
        let started = Instant::now();
        let outcome = backend.detect(&event.image_bytes).and_then(|raw| to_detections(&raw));
        match outcome {
            Ok(all) => {
                let latency_ms = started.elapsed().as_millis() as u64;
                let (detections, is_blank) = apply_threshold(&all, cfg.confidence_floor);
                tracing::info!(
                    stage = "classify",
                    event_id = %event.event_id,
                    raw = all.len(),
                    kept = detections.len(),
                    blank = is_blank,
                    latency_ms,
                    "image classified"
                );
                return Ok(ClassifiedImage {
                    event_id: event.event_id.clone(),
                    camera_id: event.camera_id.clone(),
                    captured_at: event.captured_at,
                    content_hash: event.content_hash.clone(),
                    detections,
                    is_blank,
                    latency_ms,
                });
            }
            Err(error) => {
                attempt += 1;
                if !error.is_retryable() || attempt > cfg.max_retries {
                    tracing::warn!(stage = "classify", event_id = %event.event_id, attempts = attempt, %error, "classification gave up");
                    return Err(ClassifyFailure { attempts: attempt, error });
                }
                let delay = cfg.retry_delay(attempt - 1);
                tracing::debug!(stage = "classify", event_id = %event.event_id, attempt, %error, delay_ms = delay.as_millis() as u64, "retrying");
                std::thread::sleep(delay);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Live,
    Degraded,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub status: Health,
    pub latency_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Live when the probe answers within half the timeout, degraded when slower,
/// down when it fails.
pub fn backend_health(backend: &dyn DetectionBackend, cfg: &BackendConfig) -> HealthReport {
    let started = Instant::now();
    let result = backend.probe();
    let elapsed = started.elapsed();
    let latency_ms = elapsed.as_millis() as u64;
    match result {
        Err(e) => HealthReport {
            status: Health::Down,
            latency_ms,
            error: Some(e.to_string()),
        },
        Ok(()) if elapsed > cfg.timeout() / 2 => HealthReport {
            status: Health::Degraded,
            latency_ms,
            error: None,
        },
        Ok(()) => HealthReport {
            status: Health::Live,
            latency_ms,
            error: None,
        },
    }
}
