use std::time::Duration;

use super::wire::{decode_response, encode_request, GuidanceRequest, GuidanceResponse};
use super::GuidanceError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const GUIDANCE_PATH: &str = "/v1/guidance";
const MAX_RESPONSE: u64 = 256 << 20;

/// HTTP client for an external guidance service.
#[derive(Debug, Clone)]
pub struct RemoteGuidance {
    url: String,
    pub timeout: Duration,
    /// Extra attempts after a retriable failure.
    pub max_retries: u32,
}

impl RemoteGuidance {
    /// `endpoint` is a base URL such as `http://host:port`; the guidance path
    /// is appended unless already present.
    pub fn new(endpoint: &str) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with(GUIDANCE_PATH) {
            base.to_string()
        } else {
            format!("{base}{GUIDANCE_PATH}")
        };
        Self {
            url,
            timeout: DEFAULT_TIMEOUT,
            max_retries: 2,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, agent: &ureq::Agent, body: &[u8]) -> Result<GuidanceResponse, GuidanceError> {
        let mut resp = agent
            .post(&self.url)
            .header("content-type", "application/octet-stream")
            .send(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound
                | ureq::Error::Io(_) => GuidanceError::Retriable {
                    message: e.to_string(),
                    attempts: 1,
                },
                other => GuidanceError::Backend {
                    status: None,
                    body: other.to_string(),
                },
            })?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE)
            .read_to_vec()
            .map_err(|e| GuidanceError::Retriable {
                message: e.to_string(),
                attempts: 1,
            })?;
        if !(200..300).contains(&status) {
            return Err(GuidanceError::Backend {
                status: Some(status),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        Ok(decode_response(&bytes)?)
    }

    /// Sends one request, retrying retriable failures up to `max_retries` times.
    pub fn call(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = encode_request(req);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&agent, &body) {
                Ok(resp) => {
                    resp.validate_for(req)?;
                    return Ok(resp);
                }
                Err(GuidanceError::Retriable { message, .. }) => {
                    if attempts > self.max_retries {
                        return Err(GuidanceError::Retriable { message, attempts });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
}
