//! Vision-language backends.
//!
//! The remote backend posts one JSON request per instance:
//!
//! ```json
//! {"model": "...", "max_tokens": 1024,
//!  "messages": [{"role": "user", "content": [
//!     {"type": "image", "source": {"type": "base64", "media_type": "image/png", "data": "..."}},
//!     {"type": "text", "text": "..."}]}]}
//! ```
//!
//! with a bearer token read from the environment variable named in the
//! config. The reply text is the first string-valued `"text"` field of the
//! response document.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use axisprompt_core::answer::oracle_answer;
use axisprompt_core::tasks::TaskInstance;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed (HTTP {0})")]
    AuthFailure(u16),
    #[error("rate limited")]
    RateLimited,
    #[error("HTTP error: {0}")]
    Http(String),
    #[error("no fixture reply for instance {0}")]
    MissingFixture(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteHttp,
    Oracle,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles per attempt, with ±20% jitter.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Token-bucket refill rate.
    #[serde(default = "default_rate")]
    pub requests_per_sec: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    4
}
fn default_backoff() -> u64 {
    1000
}
fn default_concurrency() -> usize {
    2
}
fn default_rate() -> f64 {
    0.5
}
fn default_max_tokens() -> u32 {
    1024
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, token_env: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: token_env.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff(),
            concurrency: default_concurrency(),
            requests_per_sec: default_rate(),
            max_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    RemoteHttp(RemoteConfig),
    Oracle { noise_sigma: f64, seed: u64 },
    Scripted { fixtures: PathBuf },
}

impl BackendSpec {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::RemoteHttp(_) => BackendKind::RemoteHttp,
            BackendSpec::Oracle { .. } => BackendKind::Oracle,
            BackendSpec::Scripted { .. } => BackendKind::Scripted,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self {
            BackendSpec::RemoteHttp(c) => {
                if !(c.timeout_secs > 0.0 && c.timeout_secs.is_finite()) {
                    return Err(BackendError::Config("timeout must be positive".into()));
                }
                if c.concurrency == 0 {
                    return Err(BackendError::Config("concurrency must be at least 1".into()));
                }
                if !(c.requests_per_sec > 0.0 && c.requests_per_sec.is_finite()) {
                    return Err(BackendError::Config("request rate must be positive".into()));
                }
                Ok(())
            }
            BackendSpec::Oracle { noise_sigma, .. } => {
                if *noise_sigma >= 0.0 && noise_sigma.is_finite() {
                    Ok(())
                } else {
                    Err(BackendError::Config("noise_sigma must be >= 0".into()))
                }
            }
            BackendSpec::Scripted { .. } => Ok(()),
        }
    }

    /// Builds the backend, reading fixtures or the auth token as needed.
    pub fn build(&self) -> Result<Box<dyn Backend>, BackendError> {
        self.validate()?;
        Ok(match self {
            BackendSpec::RemoteHttp(c) => Box::new(RemoteHttp::from_env(c.clone())?),
            BackendSpec::Oracle { noise_sigma, seed } => Box::new(Oracle {
                noise_sigma: *noise_sigma,
                seed: *seed,
            }),
            BackendSpec::Scripted { fixtures } => Box::new(Scripted::load(fixtures)?),
        })
    }
}

/// The request and response bodies exactly as exchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExchange {
    pub request: String,
    pub status: u16,
    pub response: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub text: String,
    pub latency_ms: u64,
    pub backend_kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_exchange: Option<RawExchange>,
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// `images` are the instance images, PNG-encoded, in instance order.
    fn send(&self, instance: &TaskInstance, images: &[Vec<u8>]) -> Result<ModelReply, BackendError>;

    /// Maximum number of requests in flight.
    fn concurrency(&self) -> usize {
        1
    }
}

/// Sends every instance, at most `backend.concurrency()` at a time, and
/// returns the results in instance order. `on_reply` is called as replies
/// complete (in completion order) so callers can persist them early.
pub fn send_all<F>(backend: &dyn Backend, jobs: &[(&TaskInstance, Vec<Vec<u8>>)], on_reply: F) -> Vec<Result<ModelReply, BackendError>>
where
    F: Fn(usize, &Result<ModelReply, BackendError>) + Sync,
{
    let results: Vec<Mutex<Option<Result<ModelReply, BackendError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = backend.concurrency().clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((inst, imgs)) = jobs.get(i) else { break };
                let r = backend.send(inst, imgs);
                on_reply(i, &r);
                *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every job ran"))
        .collect()
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in *p {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Formats ground truth in the answer schema. Noise is seeded per instance
/// id, so replies do not depend on dispatch order.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Oracle {
    pub fn reply_text(&self, instance: &TaskInstance) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[&self.seed.to_le_bytes(), instance.id.as_bytes()]));
        oracle_answer(&instance.ground_truth, self.noise_sigma, &mut rng)
    }
}

impl Backend for Oracle {
    fn kind(&self) -> BackendKind {
        BackendKind::Oracle
    }

    fn send(&self, instance: &TaskInstance, _images: &[Vec<u8>]) -> Result<ModelReply, BackendError> {
        Ok(ModelReply {
            text: self.reply_text(instance),
            latency_ms: 0,
            backend_kind: BackendKind::Oracle,
            raw_exchange: None,
        })
    }
}

/// Replays replies from a JSON map of instance id → reply text.
#[derive(Debug, Clone, PartialEq)]
pub struct Scripted {
    pub replies: BTreeMap<String, String>,
}

impl Scripted {
    pub fn load(path: &std::path::Path) -> Result<Self, BackendError> {
        let replies = io::read_json(path).map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Scripted { replies })
    }
}

impl Backend for Scripted {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn send(&self, instance: &TaskInstance, _images: &[Vec<u8>]) -> Result<ModelReply, BackendError> {
        let text = self
            .replies
            .get(&instance.id)
            .cloned()
            .ok_or_else(|| BackendError::MissingFixture(instance.id.clone()))?;
        Ok(ModelReply {
            text,
            latency_ms: 0,
            backend_kind: BackendKind::Scripted,
            raw_exchange: None,
        })
    }
}

/// Token bucket with capacity one: requests start at least `1 / rate`
/// seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_sec: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / requests_per_sec),
            next: Mutex::new(None),
        }
    }

    /// Blocks until a request may start.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct RemoteHttp {
    config: RemoteConfig,
    token: String,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

enum Attempt {
    Done(u16, String),
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteHttp {
    pub fn from_env(config: RemoteConfig) -> Result<Self, BackendError> {
        let token = std::env::var(&config.token_env).map_err(|_| BackendError::Config(format!("environment variable {} is not set", config.token_env)))?;
        Ok(Self::with_token(config, token))
    }

    pub fn with_token(config: RemoteConfig, token: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = RateLimiter::new(config.requests_per_sec);
        RemoteHttp { config, token, agent, limiter }
    }

    /// The exact request body for an instance.
    pub fn request_body(&self, instance: &TaskInstance, images: &[Vec<u8>]) -> String {
        let b64 = base64::engine::general_purpose::STANDARD;
        let mut content: Vec<serde_json::Value> = images
            .iter()
            .map(|png| {
                serde_json::json!({
                    "type": "image",
                    "source": {"type": "base64", "media_type": "image/png", "data": b64.encode(png)}
                })
            })
            .collect();
        content.push(serde_json::json!({"type": "text", "text": instance.prompt}));
        let body = serde_json::json!({
            "model": self.config.model,
            "max_tokens": self.config.max_tokens,
            "messages": [{"role": "user", "content": content}]
        });
        serde_json::to_string(&body).expect("JSON body")
    }

    fn attempt(&self, body: &str) -> Attempt {
        self.limiter.acquire();
        let resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(BackendError::Timeout),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::Http(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::Http(e.to_string())),
        };
        match status {
            200..=299 => Attempt::Done(status, text),
            401 | 403 => Attempt::Fatal(BackendError::AuthFailure(status)),
            429 => Attempt::Retry(BackendError::RateLimited),
            408 | 500..=599 => Attempt::Retry(BackendError::Http(format!("status {status}"))),
            _ => Attempt::Fatal(BackendError::Http(format!("status {status}: {}", truncate(&text, 200)))),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter = rand::rng().random_range(0.8..=1.2);
        Duration::from_secs_f64(base * jitter / 1000.0)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// First string value under a `"text"` key, depth-first in document order.
pub fn first_text_field(v: &serde_json::Value) -> Option<&str> {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                if k == "text" {
                    if let Some(s) = val.as_str() {
                        return Some(s);
                    }
                }
                if let Some(s) = first_text_field(val) {
                    return Some(s);
                }
            }
            None
        }
        serde_json::Value::Array(items) => items.iter().find_map(first_text_field),
        _ => None,
    }
}

impl Backend for RemoteHttp {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteHttp
    }

    fn concurrency(&self) -> usize {
        self.config.concurrency
    }

    fn send(&self, instance: &TaskInstance, images: &[Vec<u8>]) -> Result<ModelReply, BackendError> {
        let body = self.request_body(instance, images);
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(status, response) => {
                    let doc: serde_json::Value = serde_json::from_str(&response).map_err(|e| BackendError::Http(format!("response is not JSON: {e}")))?;
                    let text = first_text_field(&doc)
                        .ok_or_else(|| BackendError::Http("response has no text field".into()))?
                        .to_string();
                    return Ok(ModelReply {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        backend_kind: BackendKind::RemoteHttp,
                        raw_exchange: Some(RawExchange {
                            request: body,
                            status,
                            response,
                            attempts,
                        }),
                    });
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    if attempts > self.config.max_retries {
                        return Err(e);
                    }
                    std::thread::sleep(self.backoff(attempts - 1));
                }
            }
        }
    }
}
