//! Deterministic stand-in for the model server, usable in-process or over HTTP.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, DetectionBackend, RawDetection};
use crate::ingest::content_hash;

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("{}:{line}: {message}", path.display())]
    Fixture { path: PathBuf, line: usize, message: String },
    #[error("cannot read fixtures: {0}")]
    Io(#[from] io::Error),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    image_sha256: String,
    detections: Vec<RawDetection>,
}

/// Maps image SHA-256 to a fixed detection list; unknown images get none.
#[derive(Debug, Default)]
pub struct MockBackend {
    responses: HashMap<String, Vec<RawDetection>>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(responses: HashMap<String, Vec<RawDetection>>) -> Self {
        Self {
            responses,
            calls: AtomicU64::new(0),
        }
    }

    /// Loads every `*.jsonl` file of `dir`; lines are
    /// `{"image_sha256": "...", "detections": [...]}`.
    pub fn from_dir(dir: &Path) -> Result<Self, MockError> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |e| e == "jsonl"))
            .collect();
        files.sort();
        let mut responses = HashMap::new();
        for path in files {
            let text = fs::read_to_string(&path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let err = |message: String| MockError::Fixture {
                    path: path.clone(),
                    line: i + 1,
                    message,
                };
                let entry: FixtureLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
                let hash = entry.image_sha256.to_ascii_lowercase();
                if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(err(format!("{:?} is not a SHA-256 hex digest", entry.image_sha256)));
                }
                if let Some(d) = entry.detections.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
                    return Err(err(format!("score {} outside [0, 1]", d.score)));
                }
                if responses.insert(hash, entry.detections).is_some() {
                    return Err(err("image hash listed twice".into()));
                }
            }
        }
        Ok(Self::new(responses))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn lookup(&self, image: &[u8]) -> Vec<RawDetection> {
        self.responses.get(&content_hash(image)).cloned().unwrap_or_default()
    }
}

impl DetectionBackend for MockBackend {
    fn detect(&self, image: &[u8]) -> Result<Vec<RawDetection>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.lookup(image))
    }

    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Serves a [`MockBackend`] over the HTTP protocol. Stopping closes the
/// listener; starting again on the same address simulates a restart.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    addr: SocketAddr,
    served: Arc<AtomicU64>,
    failing: Arc<AtomicU32>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for any free port).
    pub fn start(backend: Arc<MockBackend>, addr: &str) -> io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| io::Error::new(io::ErrorKind::AddrInUse, e.to_string()))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::new(io::ErrorKind::Other, "not an IP listener"))?;
        let server = Arc::new(server);
        let served = Arc::new(AtomicU64::new(0));
        let failing = Arc::new(AtomicU32::new(0));
        let handle = {
            let (server, served, failing) = (server.clone(), served.clone(), failing.clone());
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &backend, &served, &failing);
                }
            })
        };
        Ok(Self {
            server,
            handle: Some(handle),
            addr: bound,
            served,
            failing,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Successful detect requests answered so far.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    /// Answers the next `n` detect requests with 503.
    pub fn fail_next(&self, n: u32) {
        self.failing.store(n, Ordering::SeqCst);
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn respond(request: tiny_http::Request, status: u16, body: serde_json::Value) {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let response = tiny_http::Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

fn handle(mut request: tiny_http::Request, backend: &MockBackend, served: &AtomicU64, failing: &AtomicU32) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    match (request.method(), path.as_str()) {
        (tiny_http::Method::Get, "/v1/health") => respond(request, 200, json!({"status": "ok"})),
        (tiny_http::Method::Post, "/v1/detect") => {
            let dec = failing.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
            if dec.is_ok() {
                return respond(request, 503, json!({"error": "unavailable"}));
            }
            let mut body = String::new();
            if request.as_reader().read_to_string(&mut body).is_err() {
                return respond(request, 400, json!({"error": "unreadable body"}));
            }
            let image = serde_json::from_str::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v.get("image")?.as_str().map(str::to_string))
                .and_then(|b| STANDARD.decode(b).ok());
            match image {
                Some(bytes) => {
                    let detections = backend.detect(&bytes).unwrap_or_default();
                    served.fetch_add(1, Ordering::SeqCst);
                    respond(request, 200, json!({ "detections": detections }));
                }
                None => respond(request, 400, json!({"error": "expected {model, image}"})),
            }
        }
        _ => respond(request, 404, json!({"error": "not found"})),
    }
}
