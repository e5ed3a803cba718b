use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, BackendError, DetectionBackend, RawDetection};

#[derive(Deserialize)]
struct DetectResponse {
    detections: Vec<RawDetection>,
}

/// Client for `POST <endpoint>/v1/detect` and `GET <endpoint>/v1/health`.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout()).build();
        Self {
            agent,
            endpoint: cfg.endpoint.trim_end_matches('/').to_string(),
            model: cfg.model.clone(),
        }
    }

    fn map_error(e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::Status(code, resp) => {
                let body = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", body.chars().take(200).collect::<String>());
                if code == 429 || code >= 500 {
                    BackendError::Retryable(msg)
                } else {
                    BackendError::Fatal(msg)
                }
            }
            ureq::Error::Transport(t) => BackendError::Retryable(t.to_string()),
        }
    }
}

impl DetectionBackend for HttpBackend {
    fn detect(&self, image: &[u8]) -> Result<Vec<RawDetection>, BackendError> {
        let body = json!({ "model": self.model, "image": STANDARD.encode(image) });
        let resp = self
            .agent
            .post(&format!("{}/v1/detect", self.endpoint))
            .send_json(body)
            .map_err(Self::map_error)?;
        // a body cut short by a dying server is worth another try
        let parsed: DetectResponse = resp
            .into_json()
            .map_err(|e| BackendError::Retryable(format!("unreadable response: {e}")))?;
        Ok(parsed.detections)
    }

    fn probe(&self) -> Result<(), BackendError> {
        self.agent
            .get(&format!("{}/v1/health", self.endpoint))
            .call()
            .map(|_| ())
            .map_err(Self::map_error)
    }
}
