//! Mailbox transport. Cameras send one message per capture: the subject names
//! the camera, a `time=` body line carries the capture time (ISO-8601) and the
//! first image attachment is the picture.

use std::net::TcpStream;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, Utc};
use mailparse::{DispositionType, MailHeaderMap, ParsedMail};
use serde::Serialize;

use super::{BoundedQueue, EventFlag, IngestEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    pub uid: u32,
    pub bytes: Vec<u8>,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum QuarantineReason {
    #[error("message is not valid MIME: {0}")]
    Unparseable(String),
    #[error("subject carries no camera id")]
    MissingSubject,
    #[error("message has no image attachment")]
    NoImageAttachment,
    #[error("image attachment is empty")]
    EmptyImage,
}

fn is_image_part(part: &ParsedMail) -> bool {
    if part.ctype.mimetype.to_ascii_lowercase().starts_with("image/") {
        return true;
    }
    let disposition = part.get_content_disposition();
    let name = disposition
        .params
        .get("filename")
        .or_else(|| part.ctype.params.get("name"));
    name.map_or(false, |n| {
        let n = n.to_ascii_lowercase();
        n.ends_with(".jpg") || n.ends_with(".jpeg") || n.ends_with(".png")
    })
}

fn leaves<'a>(part: &'a ParsedMail<'a>, out: &mut Vec<&'a ParsedMail<'a>>) {
    if part.subparts.is_empty() {
        out.push(part);
    } else {
        for p in &part.subparts {
            leaves(p, out);
        }
    }
}

/// RFC 3339, or a zone-less `YYYY-MM-DD[T ]HH:MM:SS` read as UTC.
pub(crate) fn parse_time_value(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|n| n.and_utc())
}

/// Turns one camera message into an event.
pub fn parse_message(raw: &RawMessage) -> Result<IngestEvent, QuarantineReason> {
    let mail = mailparse::parse_mail(&raw.bytes).map_err(|e| QuarantineReason::Unparseable(e.to_string()))?;
    let subject = mail.headers.get_first_value("Subject").unwrap_or_default();
    let camera_id = subject
        .split_whitespace()
        .next()
        .ok_or(QuarantineReason::MissingSubject)?
        .to_string();

    let mut parts = Vec::new();
    leaves(&mail, &mut parts);
    let images: Vec<&&ParsedMail> = parts.iter().filter(|p| is_image_part(p)).collect();
    let first = images.first().ok_or(QuarantineReason::NoImageAttachment)?;
    let bytes = first
        .get_body_raw()
        .map_err(|e| QuarantineReason::Unparseable(e.to_string()))?;
    if bytes.is_empty() {
        return Err(QuarantineReason::EmptyImage);
    }

    let time_line = parts
        .iter()
        .filter(|p| {
            p.ctype.mimetype.eq_ignore_ascii_case("text/plain")
                && p.get_content_disposition().disposition != DispositionType::Attachment
        })
        .filter_map(|p| p.get_body().ok())
        .flat_map(|body| {
            body.lines()
                .filter_map(|l| {
                    let l = l.trim();
                    l.get(..5)
                        .filter(|k| k.eq_ignore_ascii_case("time="))
                        .map(|_| l[5..].trim().to_string())
                })
                .collect::<Vec<_>>()
        })
        .next();
    let captured_at = time_line.as_deref().and_then(parse_time_value);

    let mut event = IngestEvent::new(&camera_id, captured_at, raw.received_at, bytes, format!("mail:{}", raw.uid))
        .map_err(|_| QuarantineReason::EmptyImage)?;
    if captured_at.is_none() {
        event = event.with_flag(EventFlag::TimestampSubstituted { raw: time_line });
    }
    if images.len() > 1 {
        event = event.with_flag(EventFlag::ExtraAttachments {
            ignored: images.len() - 1,
        });
    }
    Ok(event)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MailboxError {
    /// Network or server trouble worth retrying.
    #[error("mailbox unavailable: {0}")]
    Transient(String),
    /// Credentials rejected; retrying will not help.
    #[error("mailbox rejected credentials: {0}")]
    Auth(String),
}

pub trait Mailbox: Send {
    /// Unseen messages. Must not mark them seen.
    fn fetch_unseen(&mut self) -> Result<Vec<RawMessage>, MailboxError>;
    fn mark_seen(&mut self, uid: u32) -> Result<(), MailboxError>;
}

/// Exponential backoff: `base * 2^n`, capped.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    cap: Duration,
    attempt: u32,
}

impl Backoff {
    pub fn new(base: Duration, cap: Duration) -> Self {
        Self { base, cap, attempt: 0 }
    }

    pub fn next_delay(&mut self) -> Duration {
        let factor = 2u32.saturating_pow(self.attempt.min(31));
        self.attempt = self.attempt.saturating_add(1);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(Duration::from_secs(5), Duration::from_secs(300))
    }
}

/// Fetches unseen messages, backing off on transient failures. Gives up
/// after `max_attempts` (unbounded when `None`); credential errors return at once.
pub fn fetch_with_backoff(
    mailbox: &mut dyn Mailbox,
    backoff: &mut Backoff,
    max_attempts: Option<u32>,
    sleep: &mut dyn FnMut(Duration),
) -> Result<Vec<RawMessage>, MailboxError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match mailbox.fetch_unseen() {
            Ok(messages) => {
                backoff.reset();
                return Ok(messages);
            }
            Err(e @ MailboxError::Auth(_)) => {
                tracing::error!(stage = "poller", error = %e, "mailbox authentication failed");
                return Err(e);
            }
            Err(e) => {
                if max_attempts.map_or(false, |m| attempts >= m) {
                    return Err(e);
                }
                let delay = backoff.next_delay();
                tracing::warn!(stage = "poller", error = %e, delay_ms = delay.as_millis() as u64, "mailbox fetch failed; backing off");
                sleep(delay);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    pub enqueued: usize,
    pub quarantined: Vec<(u32, QuarantineReason)>,
    /// Messages enqueued but not marked seen; they will be fetched again.
    pub mark_seen_failures: usize,
    /// Messages left unseen because the queue closed.
    pub undelivered: usize,
}

/// Parses and enqueues each message, marking it seen only afterwards.
/// Unreadable messages are quarantined and marked seen.
pub fn deliver_messages(
    mailbox: &mut dyn Mailbox,
    messages: Vec<RawMessage>,
    queue: &BoundedQueue<IngestEvent>,
) -> DeliveryReport {
    let mut report = DeliveryReport::default();
    let total = messages.len();
    for (i, raw) in messages.into_iter().enumerate() {
        match parse_message(&raw) {
            Ok(event) => {
                let event_id = event.event_id.clone();
                if queue.enqueue(event).is_err() {
                    report.undelivered = total - i;
                    break;
                }
                report.enqueued += 1;
                tracing::info!(stage = "poller", uid = raw.uid, event_id = %event_id, "message enqueued");
            }
            Err(reason) => {
                tracing::warn!(stage = "poller", uid = raw.uid, reason = %reason, "message quarantined");
                report.quarantined.push((raw.uid, reason));
            }
        }
        if let Err(e) = mailbox.mark_seen(raw.uid) {
            tracing::warn!(stage = "poller", uid = raw.uid, error = %e, "could not mark message seen");
            report.mark_seen_failures += 1;
        }
    }
    report
}

/// In-memory mailbox with injectable faults, for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemoryMailbox {
    messages: Vec<(RawMessage, bool)>,
    /// The next this-many fetches fail transiently.
    pub failing_fetches: u32,
    /// The next this-many mark-seen calls fail.
    pub failing_marks: u32,
    pub reject_credentials: bool,
    pub fetch_calls: u32,
}

impl MemoryMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: RawMessage) {
        self.messages.push((message, false));
    }

    pub fn unseen(&self) -> usize {
        self.messages.iter().filter(|(_, seen)| !seen).count()
    }
}

impl Mailbox for MemoryMailbox {
    fn fetch_unseen(&mut self) -> Result<Vec<RawMessage>, MailboxError> {
        self.fetch_calls += 1;
        if self.reject_credentials {
            return Err(MailboxError::Auth("invalid credentials".into()));
        }
        if self.failing_fetches > 0 {
            self.failing_fetches -= 1;
            return Err(MailboxError::Transient("connection reset".into()));
        }
        Ok(self
            .messages
            .iter()
            .filter(|(_, seen)| !seen)
            .map(|(m, _)| m.clone())
            .collect())
    }

    fn mark_seen(&mut self, uid: u32) -> Result<(), MailboxError> {
        if self.failing_marks > 0 {
            self.failing_marks -= 1;
            return Err(MailboxError::Transient("connection reset".into()));
        }
        for (m, seen) in &mut self.messages {
            if m.uid == uid {
                *seen = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize, Serialize)]
pub struct ImapConfig {
    pub host: String,
    #[serde(default = "default_imap_port")]
    pub port: u16,
    pub username: String,
    pub password: String,
    #[serde(default = "default_folder")]
    pub folder: String,
}

fn default_imap_port() -> u16 {
    993
}

fn default_folder() -> String {
    "INBOX".into()
}

type TlsSession = imap::Session<native_tls::TlsStream<TcpStream>>;

/// IMAP over TLS. Messages are read with `BODY.PEEK[]` so fetching does not
/// set the seen flag.
pub struct ImapMailbox {
    config: ImapConfig,
    session: Option<TlsSession>,
}

impl ImapMailbox {
    pub fn new(config: ImapConfig) -> Self {
        Self { config, session: None }
    }

    fn session(&mut self) -> Result<&mut TlsSession, MailboxError> {
        if self.session.is_none() {
            let tls = native_tls::TlsConnector::new().map_err(|e| MailboxError::Transient(e.to_string()))?;
            let c = &self.config;
            let client = imap::connect((c.host.as_str(), c.port), &c.host, &tls)
                .map_err(|e| MailboxError::Transient(e.to_string()))?;
            let mut session = client.login(&c.username, &c.password).map_err(|(e, _)| match e {
                imap::Error::No(_) | imap::Error::Bad(_) => MailboxError::Auth(e.to_string()),
                other => MailboxError::Transient(other.to_string()),
            })?;
            session
                .select(&c.folder)
                .map_err(|e| MailboxError::Transient(e.to_string()))?;
            self.session = Some(session);
        }
        Ok(self.session.as_mut().expect("session just created"))
    }

    fn transient(&mut self, e: imap::Error) -> MailboxError {
        // the connection state is unknown; reconnect next time
        self.session = None;
        MailboxError::Transient(e.to_string())
    }
}

impl Mailbox for ImapMailbox {
    fn fetch_unseen(&mut self) -> Result<Vec<RawMessage>, MailboxError> {
        let uids = match self.session()?.uid_search("UNSEEN") {
            Ok(u) => u,
            Err(e) => return Err(self.transient(e)),
        };
        if uids.is_empty() {
            return Ok(Vec::new());
        }
        let mut sorted: Vec<u32> = uids.into_iter().collect();
        sorted.sort_unstable();
        let set = sorted.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let fetched = match self.session()?.uid_fetch(&set, "(UID BODY.PEEK[] INTERNALDATE)") {
            Ok(f) => f,
            Err(e) => return Err(self.transient(e)),
        };
        let now = Utc::now();
        let mut out: Vec<RawMessage> = fetched
            .iter()
            .filter_map(|f| {
                Some(RawMessage {
                    uid: f.uid?,
                    bytes: f.body()?.to_vec(),
                    received_at: f.internal_date().map_or(now, |d| d.with_timezone(&Utc)),
                })
            })
            .collect();
        out.sort_by_key(|m| m.uid);
        Ok(out)
    }

    fn mark_seen(&mut self, uid: u32) -> Result<(), MailboxError> {
        let result = self.session()?.uid_store(uid.to_string(), "+FLAGS (\\Seen)");
        match result {
            Ok(_) => Ok(()),
            Err(e) => Err(self.transient(e)),
        }
    }
}
