//! Deterministic OpenAI-compatible model server driven by a [`Scenario`].
//!
//! Routes:
//! - `POST /v1/chat/completions`
//! - `POST /v1/completions` (plain generation, or echo scoring with `echo: true`)
//! - `POST /v1/score`
//!
//! Unmatched requests get a 404 whose body carries the prompt digest, so a
//! scenario author can copy it into a `digest` matcher.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::sync::LazyLock;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::client::{echo_scoring_prompt, FinishReason};
use crate::digest::{image_digest, prompt_digest, sha256_hex};

use super::scenario::{Endpoint, FailureKind, RequestView, Rule, Scenario, ScenarioError};

/// How long a `timeout` failure holds the connection open.
const TIMEOUT_HOLD: Duration = Duration::from_secs(60);
/// Logprob given to echoed tokens before the answer span.
const PREFIX_LOGPROB: f64 = -1.0;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("binding mock server: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

struct MockState {
    scenario: Scenario,
    requests: AtomicU64,
    unmatched: AtomicU64,
    per_endpoint: [AtomicU64; 3],
    rule_hits: Vec<AtomicU32>,
    shutdown: watch::Receiver<bool>,
}

impl MockState {
    async fn hold(&self, d: Duration) -> bool {
        let mut rx = self.shutdown.clone();
        tokio::select! {
            _ = tokio::time::sleep(d) => true,
            _ = rx.wait_for(|stop| *stop) => false,
        }
    }
}

fn endpoint_slot(e: Endpoint) -> usize {
    match e {
        Endpoint::Chat => 0,
        Endpoint::Completions => 1,
        Endpoint::Score => 2,
    }
}

/// A running mock server; stops on [`MockServer::shutdown`] or drop.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    stop: watch::Sender<bool>,
    task: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Every request received, including failures and unmatched ones.
    pub fn request_count(&self) -> u64 {
        self.state.requests.load(Ordering::SeqCst)
    }

    pub fn endpoint_count(&self, endpoint: Endpoint) -> u64 {
        self.state.per_endpoint[endpoint_slot(endpoint)].load(Ordering::SeqCst)
    }

    pub fn unmatched_count(&self) -> u64 {
        self.state.unmatched.load(Ordering::SeqCst)
    }

    /// Times rule `index` matched, failures included.
    pub fn rule_hits(&self, index: usize) -> u32 {
        self.state.rule_hits.get(index).map_or(0, |h| h.load(Ordering::SeqCst))
    }

    pub async fn shutdown(mut self) {
        let _ = self.stop.send(true);
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        let _ = self.stop.send(true);
    }
}

/// Serve `scenario` on 127.0.0.1:`port` (0 picks a free port).
pub async fn serve_mock(scenario: Scenario, port: u16) -> Result<MockServer, MockError> {
    serve_mock_on(scenario, SocketAddr::from(([127, 0, 0, 1], port))).await
}

pub async fn serve_mock_on(scenario: Scenario, addr: SocketAddr) -> Result<MockServer, MockError> {
    scenario.validate()?;
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => return Err(MockError::PortInUse(addr.port())),
        Err(e) => return Err(e.into()),
    };
    let addr = listener.local_addr()?;
    let (stop, shutdown) = watch::channel(false);
    let state = Arc::new(MockState {
        rule_hits: scenario.rules.iter().map(|_| AtomicU32::new(0)).collect(),
        scenario,
        requests: AtomicU64::new(0),
        unmatched: AtomicU64::new(0),
        per_endpoint: Default::default(),
        shutdown: shutdown.clone(),
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/completions", post(completions))
        .route("/v1/score", post(score))
        .with_state(state.clone());
    let mut rx = shutdown;
    let task = tokio::spawn(async move {
        let server = axum::serve(listener, app).with_graceful_shutdown(async move {
            let _ = rx.wait_for(|stop| *stop).await;
        });
        if let Err(e) = server.await {
            tracing::error!("mock server stopped: {e}");
        }
    });
    Ok(MockServer {
        addr,
        state,
        stop,
        task: Some(task),
    })
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, axum::Json(json!({"error": {"message": message.into()}}))).into_response()
}

fn usage_json(rule: &Rule) -> Value {
    json!({
        "prompt_tokens": rule.usage.prompt_tokens,
        "completion_tokens": rule.usage.completion_tokens,
        "total_tokens": rule.usage.total(),
    })
}

fn finish_reason(rule: &Rule) -> &'static str {
    match rule.finish_reason {
        Some(FinishReason::Length) => "length",
        _ => "stop",
    }
}

/// Find the rule, apply failure injection and latency, then build the reply.
async fn respond(st: &MockState, view: RequestView<'_>, build: impl FnOnce(&Rule) -> Response) -> Response {
    let Some(index) = st.scenario.find(&view) else {
        st.unmatched.fetch_add(1, Ordering::SeqCst);
        tracing::debug!(model = view.model, digest = view.digest, "no rule matched");
        return (
            StatusCode::NOT_FOUND,
            axum::Json(json!({"error": {
                "message": "no scenario rule matched",
                "model": view.model,
                "endpoint": view.endpoint,
                "digest": view.digest,
            }})),
        )
            .into_response();
    };
    let rule = &st.scenario.rules[index];
    let hit = st.rule_hits[index].fetch_add(1, Ordering::SeqCst);
    if let Some(f) = &rule.failure_mode {
        if f.times.is_none_or(|t| hit < t) {
            return match f.kind {
                FailureKind::Timeout => {
                    st.hold(TIMEOUT_HOLD).await;
                    error(StatusCode::GATEWAY_TIMEOUT, "scripted timeout")
                }
                FailureKind::Status => error(
                    StatusCode::from_u16(f.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
                    "scripted failure",
                ),
            };
        }
    }
    if rule.latency_ms > 0 && !st.hold(Duration::from_millis(rule.latency_ms)).await {
        return error(StatusCode::SERVICE_UNAVAILABLE, "shutting down");
    }
    build(rule)
}

#[allow(clippy::result_large_err)] // the error is the ready-made HTTP reply
fn parse_body(st: &MockState, endpoint: Endpoint, body: &[u8]) -> Result<Value, Response> {
    st.requests.fetch_add(1, Ordering::SeqCst);
    st.per_endpoint[endpoint_slot(endpoint)].fetch_add(1, Ordering::SeqCst);
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("invalid JSON: {e}")))
}

fn text_of(content: &Value, images: &mut Vec<String>) -> String {
    match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => {
            let mut text = String::new();
            for part in parts {
                match part.get("type").and_then(Value::as_str) {
                    Some("text") => text.push_str(part.get("text").and_then(Value::as_str).unwrap_or_default()),
                    Some("image_url") => {
                        if let Some(url) = part.pointer("/image_url/url").and_then(Value::as_str) {
                            images.push(image_digest(url));
                        }
                    }
                    _ => {}
                }
            }
            text
        }
        _ => String::new(),
    }
}

async fn chat(State(st): State<Arc<MockState>>, body: Bytes) -> Response {
    let req = match parse_body(&st, Endpoint::Chat, &body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let Some(model) = req.get("model").and_then(Value::as_str) else {
        return error(StatusCode::BAD_REQUEST, "missing model");
    };
    if req.get("max_tokens").and_then(Value::as_u64) == Some(0) {
        return error(StatusCode::BAD_REQUEST, "max_tokens must be positive");
    }
    let Some(messages) = req.get("messages").and_then(Value::as_array) else {
        return error(StatusCode::BAD_REQUEST, "missing messages");
    };
    let mut system: Option<String> = None;
    let mut user = String::new();
    let mut images = Vec::new();
    for msg in messages {
        let content = msg.get("content").unwrap_or(&Value::Null);
        match msg.get("role").and_then(Value::as_str) {
            Some("system") => system = Some(text_of(content, &mut images)),
            Some("user") => user.push_str(&text_of(content, &mut images)),
            _ => {}
        }
    }
    let digest = prompt_digest(system.as_deref(), &user, &images);
    let text = match &system {
        Some(s) => format!("{s}\n{user}"),
        None => user.clone(),
    };
    let view = RequestView {
        endpoint: Endpoint::Chat,
        model,
        digest: &digest,
        text: &text,
        answer: None,
    };
    respond(&st, view, |rule| {
        axum::Json(json!({
            "id": format!("chatcmpl-{}", &digest[..12]),
            "object": "chat.completion",
            "model": model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": rule.response_text},
                "finish_reason": finish_reason(rule),
            }],
            "usage": usage_json(rule),
        }))
        .into_response()
    })
    .await
}

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*\S+").unwrap());

/// Whitespace tokenization with char offsets; each token carries its leading space.
fn tokenize(text: &str) -> Vec<(String, usize)> {
    TOKEN
        .find_iter(text)
        .map(|m| (m.as_str().to_owned(), text[..m.start()].chars().count()))
        .collect()
}

/// Split an echo-scoring prompt back into question and answer.
fn split_echo_prompt(prompt: &str) -> Option<(&str, &str, usize)> {
    let rest = prompt.strip_prefix("Question: ")?;
    let cut = rest.rfind("\nAnswer: ")?;
    let question = &rest[..cut];
    let answer = &rest[cut + "\nAnswer: ".len()..];
    let (_, start) = echo_scoring_prompt(question, answer);
    Some((question, answer, start))
}

fn echo_logprobs(prompt: &str, answer_start: usize, rule_lp: &[f64]) -> Value {
    let tokens = tokenize(prompt);
    let in_answer = |(tok, off): &(String, usize)| off + tok.chars().count() > answer_start;
    let n_answer = tokens.iter().filter(|t| in_answer(t)).count();
    let mean = rule_lp.iter().sum::<f64>() / rule_lp.len() as f64;
    let mut k = 0;
    let mut lps = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        if in_answer(t) {
            lps.push(json!(if n_answer == rule_lp.len() { rule_lp[k] } else { mean }));
            k += 1;
        } else if i == 0 {
            lps.push(Value::Null);
        } else {
            lps.push(json!(PREFIX_LOGPROB));
        }
    }
    json!({
        "tokens": tokens.iter().map(|t| t.0.clone()).collect::<Vec<_>>(),
        "token_logprobs": lps,
        "text_offset": tokens.iter().map(|t| t.1).collect::<Vec<_>>(),
    })
}

async fn completions(State(st): State<Arc<MockState>>, body: Bytes) -> Response {
    let req = match parse_body(&st, Endpoint::Completions, &body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let Some(model) = req.get("model").and_then(Value::as_str) else {
        return error(StatusCode::BAD_REQUEST, "missing model");
    };
    let Some(prompt) = req.get("prompt").and_then(Value::as_str) else {
        return error(StatusCode::BAD_REQUEST, "missing prompt");
    };
    let echo = req.get("echo").and_then(Value::as_bool).unwrap_or(false);
    let digest = prompt_digest(None, prompt, &[]);

    if !echo {
        if req.get("max_tokens").and_then(Value::as_u64) == Some(0) {
            return error(StatusCode::BAD_REQUEST, "max_tokens must be positive");
        }
        let view = RequestView {
            endpoint: Endpoint::Completions,
            model,
            digest: &digest,
            text: prompt,
            answer: None,
        };
        return respond(&st, view, |rule| {
            axum::Json(json!({
                "id": format!("cmpl-{}", &digest[..12]),
                "object": "text_completion",
                "model": model,
                "choices": [{"index": 0, "text": rule.response_text, "finish_reason": finish_reason(rule)}],
                "usage": usage_json(rule),
            }))
            .into_response()
        })
        .await;
    }

    let Some((question, answer, start)) = split_echo_prompt(prompt) else {
        return error(
            StatusCode::BAD_REQUEST,
            "echo prompt must look like 'Question: ...\\nAnswer: ...'",
        );
    };
    let view = RequestView {
        endpoint: Endpoint::Completions,
        model,
        digest: &digest,
        text: question,
        answer: Some(answer),
    };
    respond(&st, view, |rule| {
        let Some(lp) = &rule.token_logprobs else {
            return error(StatusCode::UNPROCESSABLE_ENTITY, "matched rule has no token_logprobs");
        };
        let n_tokens = tokenize(prompt).len();
        axum::Json(json!({
            "id": format!("cmpl-{}", &digest[..12]),
            "object": "text_completion",
            "model": model,
            "choices": [{
                "index": 0,
                "text": prompt,
                "logprobs": echo_logprobs(prompt, start, lp),
                "finish_reason": "length",
            }],
            "usage": {"prompt_tokens": n_tokens, "completion_tokens": 0, "total_tokens": n_tokens},
        }))
        .into_response()
    })
    .await
}

async fn score(State(st): State<Arc<MockState>>, body: Bytes) -> Response {
    let req = match parse_body(&st, Endpoint::Score, &body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let field = |k: &str| req.get(k).and_then(Value::as_str);
    let (Some(model), Some(question), Some(answer)) = (field("model"), field("question"), field("answer")) else {
        return error(
            StatusCode::BAD_REQUEST,
            "score requests need model, question and answer",
        );
    };
    let image = match (field("image_b64"), field("image_url")) {
        (Some(b64), _) => match B64.decode(b64) {
            Ok(bytes) => sha256_hex(&bytes),
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("image_b64: {e}")),
        },
        (None, Some(url)) => image_digest(url),
        (None, None) => return error(StatusCode::BAD_REQUEST, "missing image_b64 or image_url"),
    };
    let digest = score_digest(question, answer, &image);
    let view = RequestView {
        endpoint: Endpoint::Score,
        model,
        digest: &digest,
        text: question,
        answer: Some(answer),
    };
    respond(&st, view, |rule| match &rule.token_logprobs {
        Some(lp) => axum::Json(json!({"token_logprobs": lp})).into_response(),
        None => error(StatusCode::UNPROCESSABLE_ENTITY, "matched rule has no token_logprobs"),
    })
    .await
}

/// Digest a score-route request is matched against.
pub fn score_digest(question: &str, answer: &str, image_digest: &str) -> String {
    let (text, _) = echo_scoring_prompt(question, answer);
    prompt_digest(None, &text, &[image_digest.to_owned()])
}
