use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Other(String),
}

/// The only place the live backend touches the network.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value, timeout: Duration) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self { client: reqwest::blocking::Client::new() }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value, timeout: Duration) -> Result<HttpResponse, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| if e.is_timeout() { TransportError::Timeout } else { TransportError::Other(e.to_string()) })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Global in-flight cap plus a sliding one-minute request budget.
pub struct RateGate {
    max_in_flight: usize,
    per_minute: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
    window: Mutex<VecDeque<Instant>>,
}

pub struct GatePermit<'a> {
    gate: &'a RateGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.in_flight.lock();
        *n -= 1;
        self.gate.released.notify_one();
    }
}

impl RateGate {
    pub fn new(max_in_flight: usize, per_minute: usize) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            per_minute: per_minute.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            window: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        loop {
            let wait = {
                let mut window = self.window.lock();
                let now = Instant::now();
                while window.front().is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60)) {
                    window.pop_front();
                }
                if window.len() < self.per_minute {
                    window.push_back(now);
                    None
                } else {
                    Some(Duration::from_secs(60) - now.duration_since(window[0]))
                }
            };
            match wait {
                Some(d) => thread::sleep(d),
                None => break,
            }
        }
        let mut n = self.in_flight.lock();
        while *n >= self.max_in_flight {
            self.released.wait(&mut n);
        }
        *n += 1;
        GatePermit { gate: self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub per_minute: usize,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), api_key: None, timeout: Duration::from_secs(120), retry: RetryPolicy::default(), max_in_flight: 4, per_minute: 120 }
    }
}

/// Chat-completions style JSON over HTTP.
pub struct HttpBackend {
    config: HttpConfig,
    transport: Arc<dyn Transport>,
    gate: RateGate,
    retries: AtomicUsize,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        Self::with_transport(config, Arc::new(ReqwestTransport::new()))
    }

    pub fn with_transport(config: HttpConfig, transport: Arc<dyn Transport>) -> Self {
        let gate = RateGate::new(config.max_in_flight, config.per_minute);
        Self { config, transport, gate, retries: AtomicUsize::new(0) }
    }

    /// Total retries performed across all requests.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::SeqCst)
    }

    fn body(request: &ChatRequest) -> Value {
        json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, LlmError> {
        let _permit = self.gate.acquire();
        let resp = self.transport.post_json(&self.config.endpoint, self.config.api_key.as_deref(), body, self.config.timeout).map_err(|e| match e {
            TransportError::Timeout => LlmError::Timeout,
            TransportError::Other(m) => LlmError::Transport(m),
        })?;
        match resp.status {
            200..=299 => parse_completion(&resp.body),
            429 => Err(LlmError::RateLimited),
            status => Err(LlmError::Http { status, body: resp.body }),
        }
    }
}

fn transient(err: &LlmError) -> bool {
    match err {
        LlmError::RateLimited | LlmError::Timeout | LlmError::Transport(_) => true,
        LlmError::Http { status, .. } => *status >= 500,
        _ => false,
    }
}

pub(crate) fn parse_completion(body: &str) -> Result<String, LlmError> {
    let value: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = Self::body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if transient(&e) && attempt < self.config.retry.max_retries => {
                    let delay = self.config.retry.base_delay * 2u32.pow(attempt);
                    log::warn!("chat attempt {} failed ({e}); retrying in {delay:?}", attempt + 1);
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Message;

    struct Scripted {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: Option<&str>, _: &Value, _: Duration) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().remove(0)
        }
    }

    fn ok(text: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, body: json!({"choices": [{"message": {"content": text}}]}).to_string() })
    }

    fn backend(replies: Vec<Result<HttpResponse, TransportError>>) -> (HttpBackend, Arc<Scripted>) {
        let transport = Arc::new(Scripted { replies: Mutex::new(replies), calls: AtomicUsize::new(0) });
        let mut config = HttpConfig::new("http://stub/v1/chat/completions");
        config.retry.base_delay = Duration::from_millis(1);
        (HttpBackend::with_transport(config, transport.clone()), transport)
    }

    fn request() -> ChatRequest {
        ChatRequest { messages: vec![Message::user("hi")], model: "m".into(), temperature: 0.0, max_output_tokens: 8 }
    }

    #[test]
    fn retries_transient_failures_with_backoff() {
        let (b, t) = backend(vec![
            Ok(HttpResponse { status: 429, body: String::new() }),
            Err(TransportError::Timeout),
            Ok(HttpResponse { status: 503, body: String::new() }),
            ok("done"),
        ]);
        assert_eq!(b.chat(&request()).unwrap(), "done");
        assert_eq!(b.retries(), 3);
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let (b, _) = backend(vec![Ok(HttpResponse { status: 429, body: String::new() }); 4]);
        assert_eq!(b.chat(&request()).unwrap_err(), LlmError::RateLimited);
    }

    #[test]
    fn client_errors_and_bad_json_are_not_retried() {
        let (b, t) = backend(vec![Ok(HttpResponse { status: 400, body: "bad".into() })]);
        assert!(matches!(b.chat(&request()), Err(LlmError::Http { status: 400, .. })));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        let (b, _) = backend(vec![Ok(HttpResponse { status: 200, body: "{}".into() })]);
        assert!(matches!(b.chat(&request()), Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn gate_caps_in_flight() {
        let gate = Arc::new(RateGate::new(2, 1000));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        thread::scope(|s| {
            for _ in 0..6 {
                let (gate, peak, current) = (gate.clone(), peak.clone(), current.clone());
                s.spawn(move || {
                    let _p = gate.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(10));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
