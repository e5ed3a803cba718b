//! Species alert rules and their delivery channels.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trapline_core::domain::SpeciesLabel;

use crate::inference::ClassifiedImage;
use crate::store::Store;

#[derive(Debug, Error, PartialEq)]
pub enum AlertError {
    #[error("rule {rule_id}: minimum probability {min_prob} must lie in (0, 1]")]
    BadProbability { rule_id: String, min_prob: f64 },
    #[error("rule id is empty")]
    EmptyRuleId,
    #[error("rule id {0} is used twice")]
    DuplicateRule(String),
    #[error("delivery via {channel} failed: {message}")]
    Delivery { channel: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlertChannel {
    Webhook { url: String },
    Log { path: PathBuf },
}

impl fmt::Display for AlertChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlertChannel::Webhook { url } => write!(f, "webhook:{url}"),
            AlertChannel::Log { path } => write!(f, "log:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub rule_id: String,
    pub species: SpeciesLabel,
    pub min_prob: f64,
    pub channel: AlertChannel,
}

impl AlertRule {
    pub fn validate(&self) -> Result<(), AlertError> {
        if self.rule_id.trim().is_empty() {
            return Err(AlertError::EmptyRuleId);
        }
        if !(self.min_prob > 0.0 && self.min_prob <= 1.0) {
            return Err(AlertError::BadProbability {
                rule_id: self.rule_id.clone(),
                min_prob: self.min_prob,
            });
        }
        Ok(())
    }
}

pub fn validate_rules(rules: &[AlertRule]) -> Result<(), AlertError> {
    let mut seen = std::collections::HashSet::new();
    for r in rules {
        r.validate()?;
        if !seen.insert(r.rule_id.as_str()) {
            return Err(AlertError::DuplicateRule(r.rule_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiredAlert {
    pub rule_id: String,
    pub event_id: String,
    pub species: SpeciesLabel,
    pub score: f64,
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub channel: AlertChannel,
}

/// Body sent to a webhook and written to the alert log.
#[derive(Debug, Serialize)]
pub struct AlertPayload<'a> {
    pub rule_id: &'a str,
    pub species: &'a str,
    pub score: f64,
    pub camera_id: &'a str,
    pub captured_at: String,
}

impl FiredAlert {
    pub fn payload(&self) -> AlertPayload<'_> {
        AlertPayload {
            rule_id: &self.rule_id,
            species: self.species.name(),
            score: self.score,
            camera_id: &self.camera_id,
            captured_at: self.captured_at.to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }
}

/// One alert per (rule, detection) pair whose label matches and whose score
/// is at least the rule's minimum. Ordered by rule then detection.
pub fn evaluate_alerts(c: &ClassifiedImage, rules: &[AlertRule]) -> Vec<FiredAlert> {
    if c.is_blank {
        return Vec::new();
    }
    let mut out = Vec::new();
    for rule in rules {
        for d in c.detections.iter().filter(|d| d.label == rule.species && d.score >= rule.min_prob) {
            out.push(FiredAlert {
                rule_id: rule.rule_id.clone(),
                event_id: c.event_id.clone(),
                species: d.label.clone(),
                score: d.score,
                camera_id: c.camera_id.clone(),
                captured_at: c.captured_at,
                channel: rule.channel.clone(),
            });
        }
    }
    out
}

pub trait AlertSink: Send + Sync {
    fn deliver(&self, alert: &FiredAlert) -> Result<(), AlertError>;
}

/// Delivers to whichever channel each alert names.
pub struct ChannelSink {
    agent: ureq::Agent,
}

impl ChannelSink {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for ChannelSink {
    fn default() -> Self {
        Self::new(Duration::from_secs(5))
    }
}

impl AlertSink for ChannelSink {
    fn deliver(&self, alert: &FiredAlert) -> Result<(), AlertError> {
        let fail = |message: String| AlertError::Delivery {
            channel: alert.channel.to_string(),
            message,
        };
        match &alert.channel {
            AlertChannel::Webhook { url } => {
                self.agent
                    .post(url)
                    .send_json(alert.payload())
                    .map_err(|e| fail(e.to_string()))?;
            }
            AlertChannel::Log { path } => {
                let mut line = serde_json::to_vec(&alert.payload()).map_err(|e| fail(e.to_string()))?;
                line.push(b'\n');
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .and_then(|mut f| f.write_all(&line))
                    .map_err(|e| fail(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Background delivery: `submit` never blocks on the channel. Each alert is
/// attempted once and its outcome written to the store.
pub struct AlertDispatcher {
    tx: Option<Sender<FiredAlert>>,
    worker: Option<JoinHandle<DispatchStats>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DispatchStats {
    pub delivered: u64,
    pub failed: u64,
}

impl AlertDispatcher {
    pub fn start(sink: Arc<dyn AlertSink>, store: Option<Arc<Store>>) -> Self {
        let (tx, rx) = mpsc::channel();
        let worker = std::thread::Builder::new()
            .name("alert-dispatch".into())
            .spawn(move || dispatch_loop(rx, sink, store))
            .expect("spawn alert dispatcher");
        Self {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    pub fn submit(&self, alert: FiredAlert) {
        if let Some(tx) = &self.tx {
            // The worker only exits after the sender is dropped.
            let _ = tx.send(alert);
        }
    }

    /// Waits for queued alerts to be attempted.
    pub fn finish(mut self) -> DispatchStats {
        self.shutdown()
    }

    fn shutdown(&mut self) -> DispatchStats {
        self.tx.take();
        self.worker
            .take()
            .map(|w| w.join().unwrap_or_default())
            .unwrap_or_default()
    }
}

impl Drop for AlertDispatcher {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn dispatch_loop(rx: Receiver<FiredAlert>, sink: Arc<dyn AlertSink>, store: Option<Arc<Store>>) -> DispatchStats {
    let mut stats = DispatchStats::default();
    for alert in rx {
        let result = sink.deliver(&alert);
        let error = result.as_ref().err().map(|e| e.to_string());
        match &error {
            None => {
                stats.delivered += 1;
                tracing::info!(stage = "alert", rule_id = %alert.rule_id, event_id = %alert.event_id, channel = %alert.channel, "alert delivered");
            }
            Some(e) => {
                stats.failed += 1;
                tracing::warn!(stage = "alert", rule_id = %alert.rule_id, event_id = %alert.event_id, error = %e, "alert delivery failed");
            }
        }
        if let Some(store) = &store {
            if let Err(e) = store.record_alert(&alert, Some(error.is_none()), error.as_deref()) {
                tracing::error!(stage = "alert", error = %e, "could not log alert");
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;
    use trapline_core::domain::{BoundingBox, Detection};

    fn image(dets: &[(&str, f64)]) -> ClassifiedImage {
        let detections: Vec<Detection> = dets
            .iter()
            .map(|(l, s)| Detection::new(SpeciesLabel::species(l).unwrap(), *s, BoundingBox::new(0.0, 0.0, 1.0, 1.0)).unwrap())
            .collect();
        ClassifiedImage {
            event_id: "e1".into(),
            camera_id: "CAM-07".into(),
            captured_at: Utc::now(),
            content_hash: "h".into(),
            is_blank: detections.is_empty(),
            detections,
            latency_ms: 1,
        }
    }

    fn rule(min_prob: f64) -> AlertRule {
        AlertRule {
            rule_id: "magpie".into(),
            species: SpeciesLabel::species("Pica pica").unwrap(),
            min_prob,
            channel: AlertChannel::Log { path: "alerts.jsonl".into() },
        }
    }

    #[test]
    fn fires_at_or_above_minimum() {
        assert_eq!(evaluate_alerts(&image(&[("Pica pica", 0.85)]), &[rule(0.8)]).len(), 1);
        assert!(evaluate_alerts(&image(&[("Pica pica", 0.70)]), &[rule(0.8)]).is_empty());
        assert_eq!(evaluate_alerts(&image(&[("Pica pica", 0.8)]), &[rule(0.8)]).len(), 1);
        assert!(evaluate_alerts(&image(&[("Columba palumbus", 0.99)]), &[rule(0.8)]).is_empty());
        assert!(evaluate_alerts(&image(&[]), &[rule(0.1)]).is_empty());
    }

    #[test]
    fn deterministic() {
        let img = image(&[("Pica pica", 0.9), ("Pica pica", 0.95)]);
        let rules = [rule(0.8)];
        assert_eq!(evaluate_alerts(&img, &rules), evaluate_alerts(&img, &rules));
        assert_eq!(evaluate_alerts(&img, &rules).len(), 2);
    }

    #[test]
    fn rule_validation() {
        assert!(rule(0.0).validate().is_err());
        assert!(rule(1.0).validate().is_ok());
        assert!(rule(1.01).validate().is_err());
        assert!(matches!(validate_rules(&[rule(0.5), rule(0.6)]), Err(AlertError::DuplicateRule(_))));
    }

    #[test]
    fn log_channel_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alerts.jsonl");
        let mut r = rule(0.5);
        r.channel = AlertChannel::Log { path: path.clone() };
        let sink = ChannelSink::default();
        for a in evaluate_alerts(&image(&[("Pica pica", 0.9), ("Pica pica", 0.6)]), &[r]) {
            sink.deliver(&a).unwrap();
        }
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["species"], "Pica pica");
        assert_eq!(lines[0]["camera_id"], "CAM-07");
    }

    struct Flaky(Mutex<u32>);

    impl AlertSink for Flaky {
        fn deliver(&self, _: &FiredAlert) -> Result<(), AlertError> {
            let mut n = self.0.lock().unwrap();
            *n += 1;
            if *n % 2 == 0 {
                Err(AlertError::Delivery { channel: "x".into(), message: "refused".into() })
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn dispatcher_logs_failures_and_keeps_going() {
        let store = Arc::new(Store::in_memory(0.5).unwrap());
        let d = AlertDispatcher::start(Arc::new(Flaky(Mutex::new(0))), Some(store.clone()));
        for a in evaluate_alerts(&image(&[("Pica pica", 0.9), ("Pica pica", 0.91), ("Pica pica", 0.92)]), &[rule(0.5)]) {
            d.submit(a);
        }
        let stats = d.finish();
        assert_eq!(stats, DispatchStats { delivered: 2, failed: 1 });
        assert_eq!(store.alert_count().unwrap(), 3);
    }

    #[test]
    fn unreachable_webhook_is_an_error_not_a_panic() {
        let sink = ChannelSink::new(Duration::from_millis(300));
        let mut a = evaluate_alerts(&image(&[("Pica pica", 0.9)]), &[rule(0.5)]).remove(0);
        a.channel = AlertChannel::Webhook { url: "http://127.0.0.1:9/hook".into() };
        assert!(matches!(sink.deliver(&a), Err(AlertError::Delivery { .. })));
    }
}
