//! OpenAI-compatible model endpoints: generation, answer-span scoring, retries
//! and cost accounting.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use crate::consensus::NllScore;
use crate::digest::{image_digest, prompt_digest, sha256_json};
use crate::types::{ImageRef, TokenUsage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    #[default]
    Chat,
    Completions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringBackend {
    /// `/v1/completions` with `echo` and `logprobs`.
    EchoLogprobs,
    /// `/v1/score`.
    #[default]
    ScoreRoute,
    None,
}

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Name used in reports, the ledger and the cache key.
    pub name: String,
    pub base_url: String,
    /// Model id sent on the wire; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default)]
    pub api_style: ApiStyle,
    #[serde(default)]
    pub supports_scoring: ScoringBackend,
    #[serde(default)]
    pub pricing: Pricing,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Fold the system prompt into the user turn (models without a system role).
    #[serde(default)]
    pub merge_system_prompt: bool,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into(),
            model_id: None,
            api_style: ApiStyle::Chat,
            supports_scoring: ScoringBackend::ScoreRoute,
            pricing: Pricing::default(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            api_key_env: None,
            merge_system_prompt: false,
        }
    }

    pub fn wire_model(&self) -> &str {
        self.model_id.as_deref().unwrap_or(&self.name)
    }

    fn endpoint(&self, route: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), route)
    }

    fn folds_system(&self) -> bool {
        self.merge_system_prompt || self.api_style == ApiStyle::Completions
    }
}

/// `prompt_tokens * input/1e6 + completion_tokens * output/1e6`, unrounded.
pub fn estimate_cost(usage: TokenUsage, pricing: Pricing) -> f64 {
    usage.prompt_tokens as f64 * pricing.input_per_million / 1e6
        + usage.completion_tokens as f64 * pricing.output_per_million / 1e6
}

/// Dollar amounts are reported to six decimals.
pub fn round_usd(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParts {
    pub system: Option<String>,
    pub user: String,
    pub images: Vec<ImageRef>,
}

impl PromptParts {
    /// Prepend the system text to the user turn and drop the system slot.
    pub fn folded(&self) -> PromptParts {
        match &self.system {
            Some(sys) => PromptParts {
                system: None,
                user: format!("{sys}\n{}", self.user),
                images: self.images.clone(),
            },
            None => self.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub model: String,
    pub prompt_digest: String,
    pub output_text: String,
    pub usage: TokenUsage,
    /// Wall time; kept out of stage files so replays stay byte-identical.
    #[serde(skip)]
    pub latency_ms: u64,
    pub finish_reason: FinishReason,
    #[serde(skip)]
    pub cached: bool,
}

impl GenerationRecord {
    pub fn failed(model: &str, prompt_digest: String) -> Self {
        Self {
            model: model.to_owned(),
            prompt_digest,
            output_text: String::new(),
            usage: TokenUsage::default(),
            latency_ms: 0,
            finish_reason: FinishReason::Error,
            cached: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{model}: endpoint unavailable after {attempts} attempt(s): {reason}")]
    EndpointUnavailable {
        model: String,
        attempts: u32,
        reason: String,
    },
    #[error("{model}: request rejected with HTTP {status}: {body}")]
    Rejected { model: String, status: u16, body: String },
    #[error("{model}: malformed response: {reason}")]
    MalformedResponse { model: String, reason: String },
    #[error("{0}: scoring not supported")]
    ScoringUnsupported(String),
    #[error("cannot score an empty answer")]
    EmptyAnswer,
    #[error("image {image}: {reason}")]
    Image { image: String, reason: String },
}

/// Response cache consulted before any network call.
pub trait ResponseCache: Send + Sync {
    fn get(&self, key: &str) -> Option<Value>;
    fn put(&self, key: &str, value: Value);
}

/// A loaded image ready to inline into a request.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    /// `data:` URL for files, the original URL otherwise.
    pub url: String,
    pub digest: String,
    /// Base64 payload without the `data:` prefix; `None` for remote URLs.
    pub b64: Option<String>,
}

fn mime_for(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Read and base64-encode an image, downscaling when `max_side` is set and exceeded.
pub fn encode_image(image: &ImageRef, max_side: Option<u32>) -> Result<EncodedImage, ClientError> {
    let Some(path) = image.path() else {
        return Ok(EncodedImage {
            url: image.0.clone(),
            digest: image_digest(&image.0),
            b64: None,
        });
    };
    let err = |reason: String| ClientError::Image {
        image: image.0.clone(),
        reason,
    };
    let mut bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    let mut mime = mime_for(path);
    if let Some(limit) = max_side {
        let decoded = image::load_from_memory(&bytes).map_err(|e| err(e.to_string()))?;
        if decoded.width().max(decoded.height()) > limit {
            let resized = decoded.resize(limit, limit, image::imageops::FilterType::Triangle);
            let mut out = std::io::Cursor::new(Vec::new());
            resized
                .write_to(&mut out, image::ImageFormat::Png)
                .map_err(|e| err(e.to_string()))?;
            bytes = out.into_inner();
            mime = "image/png";
        }
    }
    let b64 = B64.encode(&bytes);
    let digest = crate::digest::sha256_hex(&bytes);
    Ok(EncodedImage {
        url: format!("data:{mime};base64,{b64}"),
        digest,
        b64: Some(b64),
    })
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// In-flight requests per endpoint.
    pub max_concurrency: usize,
    /// First retry delay; doubles per attempt.
    pub backoff: Duration,
    pub max_image_side: Option<u32>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            max_concurrency: 8,
            backoff: Duration::from_millis(250),
            max_image_side: None,
        }
    }
}

/// Shareable across workers; clones share the connection pool, limits and cache.
#[derive(Clone)]
pub struct ModelClient {
    http: reqwest::Client,
    options: ClientOptions,
    limits: Arc<Mutex<HashMap<String, Arc<Semaphore>>>>,
    cache: Option<Arc<dyn ResponseCache>>,
    next_id: Arc<AtomicU64>,
    network_calls: Arc<AtomicU64>,
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fatal(ClientError),
}

impl ModelClient {
    pub fn new(options: ClientOptions) -> Self {
        Self {
            http: reqwest::Client::new(),
            options,
            limits: Arc::default(),
            cache: None,
            next_id: Arc::new(AtomicU64::new(0)),
            network_calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_cache(mut self, cache: Arc<dyn ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn options(&self) -> &ClientOptions {
        &self.options
    }

    /// Requests that reached the network (cache hits excluded, retries included).
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn limiter(&self, model: &ModelSpec) -> Arc<Semaphore> {
        let mut limits = self.limits.lock().expect("limiter lock poisoned");
        limits
            .entry(model.base_url.clone())
            .or_insert_with(|| Arc::new(Semaphore::new(self.options.max_concurrency.max(1))))
            .clone()
    }

    async fn post_json(&self, model: &ModelSpec, route: &str, body: &Value) -> Result<Value, ClientError> {
        let url = model.endpoint(route);
        let limiter = self.limiter(model);
        let attempts = model.max_retries + 1;
        let mut last_reason = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.options.backoff * 2u32.saturating_pow(attempt - 1);
                debug!(model = %model.name, attempt, ?delay, "retrying: {last_reason}");
                tokio::time::sleep(delay).await;
            }
            let outcome = {
                let _permit = limiter.acquire().await.expect("semaphore closed");
                self.network_calls.fetch_add(1, Ordering::Relaxed);
                self.attempt(model, &url, body).await
            };
            match outcome {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => last_reason = reason,
            }
        }
        warn!(model = %model.name, "giving up after {attempts} attempts: {last_reason}");
        Err(ClientError::EndpointUnavailable {
            model: model.name.clone(),
            attempts,
            reason: last_reason,
        })
    }

    async fn attempt(&self, model: &ModelSpec, url: &str, body: &Value) -> Attempt {
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut req = self
            .http
            .post(url)
            .timeout(Duration::from_secs_f64(model.request_timeout.max(0.001)))
            .header("x-request-id", format!("{}-{request_id}", model.name))
            .json(body);
        if let Some(var) = &model.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if !status.is_success() {
            return Attempt::Fatal(ClientError::Rejected {
                model: model.name.clone(),
                status: status.as_u16(),
                body: text,
            });
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fatal(malformed(model, format!("invalid JSON: {e}"))),
        }
    }

    /// Digest of the prompt as the endpoint will see it, after system folding.
    pub fn prompt_digest_for(&self, model: &ModelSpec, prompt: &PromptParts) -> Result<String, ClientError> {
        let prompt = if model.folds_system() {
            prompt.folded()
        } else {
            prompt.clone()
        };
        let images = self.encode_images(model, &prompt)?;
        let digests: Vec<String> = images.iter().map(|i| i.digest.clone()).collect();
        Ok(prompt_digest(prompt.system.as_deref(), &prompt.user, &digests))
    }

    fn encode_images(&self, model: &ModelSpec, prompt: &PromptParts) -> Result<Vec<EncodedImage>, ClientError> {
        if model.api_style == ApiStyle::Completions {
            // text-only endpoint
            return Ok(Vec::new());
        }
        prompt
            .images
            .iter()
            .map(|img| encode_image(img, self.options.max_image_side))
            .collect()
    }

    pub async fn generate(
        &self,
        model: &ModelSpec,
        prompt: &PromptParts,
        params: GenParams,
    ) -> Result<GenerationRecord, ClientError> {
        let prompt = if model.folds_system() {
            prompt.folded()
        } else {
            prompt.clone()
        };
        let images = self.encode_images(model, &prompt)?;
        let digests: Vec<String> = images.iter().map(|i| i.digest.clone()).collect();
        let digest = prompt_digest(prompt.system.as_deref(), &prompt.user, &digests);
        let cache_key = sha256_json(&json!({
            "kind": "generate",
            "model": model.name,
            "prompt_digest": digest,
            "params": {"temperature": params.temperature, "max_tokens": params.max_tokens},
        }));

        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&cache_key)) {
            if let Ok(cached) = serde_json::from_value::<CachedGeneration>(hit) {
                return Ok(GenerationRecord {
                    model: model.name.clone(),
                    prompt_digest: digest,
                    output_text: cached.output_text,
                    usage: cached.usage,
                    latency_ms: 0,
                    finish_reason: cached.finish_reason,
                    cached: true,
                });
            }
        }

        let started = Instant::now();
        let (route, body) = match model.api_style {
            ApiStyle::Chat => ("/v1/chat/completions", chat_body(model, &prompt, &images, params)),
            ApiStyle::Completions => (
                "/v1/completions",
                json!({
                    "model": model.wire_model(),
                    "prompt": prompt.user,
                    "temperature": params.temperature,
                    "max_tokens": params.max_tokens,
                }),
            ),
        };
        let resp = self.post_json(model, route, &body).await?;
        let parsed = parse_generation(model, &resp)?;
        let record = GenerationRecord {
            model: model.name.clone(),
            prompt_digest: digest,
            output_text: parsed.output_text.clone(),
            usage: parsed.usage,
            latency_ms: started.elapsed().as_millis() as u64,
            finish_reason: parsed.finish_reason,
            cached: false,
        };
        if let Some(cache) = &self.cache {
            cache.put(&cache_key, serde_json::to_value(&parsed).expect("serializable"));
        }
        Ok(record)
    }

    /// Mean NLL of `answer_text` under `model`, conditioned on image and question.
    ///
    /// The returned score carries indices `(0, 0)`; callers set them.
    pub async fn score_answer_nll(
        &self,
        model: &ModelSpec,
        image: &ImageRef,
        question: &str,
        answer_text: &str,
    ) -> Result<NllScore, ClientError> {
        if model.supports_scoring == ScoringBackend::None {
            return Err(ClientError::ScoringUnsupported(model.name.clone()));
        }
        if answer_text.is_empty() {
            return Err(ClientError::EmptyAnswer);
        }
        let encoded = encode_image(image, self.options.max_image_side)?;
        let cache_key = sha256_json(&json!({
            "kind": "score",
            "backend": model.supports_scoring,
            "model": model.name,
            "image": encoded.digest,
            "question": question,
            "answer": answer_text,
        }));
        let cached = self
            .cache
            .as_ref()
            .and_then(|c| c.get(&cache_key))
            .and_then(|v| serde_json::from_value::<Vec<f64>>(v).ok());
        let logprobs = match cached {
            Some(lp) => lp,
            None => {
                let lp = match model.supports_scoring {
                    ScoringBackend::ScoreRoute => self.score_via_route(model, &encoded, question, answer_text).await?,
                    ScoringBackend::EchoLogprobs => self.score_via_echo(model, question, answer_text).await?,
                    ScoringBackend::None => unreachable!(),
                };
                if let Some(cache) = &self.cache {
                    cache.put(&cache_key, json!(lp));
                }
                lp
            }
        };
        NllScore::from_logprobs(0, 0, &logprobs)
            .ok_or_else(|| malformed(model, format!("answer-span logprobs unusable: {logprobs:?}")))
    }

    async fn score_via_route(
        &self,
        model: &ModelSpec,
        image: &EncodedImage,
        question: &str,
        answer: &str,
    ) -> Result<Vec<f64>, ClientError> {
        let mut body = json!({
            "model": model.wire_model(),
            "question": question,
            "answer": answer,
        });
        match &image.b64 {
            Some(b64) => body["image_b64"] = json!(b64),
            None => body["image_url"] = json!(image.url),
        }
        let resp = self.post_json(model, "/v1/score", &body).await?;
        let lps = resp
            .get("token_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(model, "missing token_logprobs".into()))?;
        lps.iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed(model, "non-numeric logprob".into())))
            .collect()
    }

    async fn score_via_echo(&self, model: &ModelSpec, question: &str, answer: &str) -> Result<Vec<f64>, ClientError> {
        let (prompt, answer_start) = echo_scoring_prompt(question, answer);
        let body = json!({
            "model": model.wire_model(),
            "prompt": prompt,
            "echo": true,
            "logprobs": 1,
            "max_tokens": 0,
            "temperature": 0.0,
        });
        let resp = self.post_json(model, "/v1/completions", &body).await?;
        answer_span_logprobs(&resp, answer_start).ok_or_else(|| malformed(model, "missing echo logprobs".into()))
    }
}

/// Echo-scoring prompt and the character offset where the answer span starts.
pub fn echo_scoring_prompt(question: &str, answer: &str) -> (String, usize) {
    let prefix = format!("Question: {question}\nAnswer:");
    let start = prefix.chars().count();
    (format!("{prefix} {answer}"), start)
}

/// Logprobs of every echoed token that overlaps the answer span.
pub fn answer_span_logprobs(resp: &Value, answer_start: usize) -> Option<Vec<f64>> {
    let lp = resp.pointer("/choices/0/logprobs")?;
    let tokens = lp.get("tokens")?.as_array()?;
    let logprobs = lp.get("token_logprobs")?.as_array()?;
    let offsets = lp.get("text_offset")?.as_array()?;
    if tokens.len() != logprobs.len() || tokens.len() != offsets.len() {
        return None;
    }
    let mut out = Vec::new();
    for ((tok, lp), off) in tokens.iter().zip(logprobs).zip(offsets) {
        let off = off.as_u64()? as usize;
        let end = off + tok.as_str()?.chars().count();
        if end > answer_start {
            // the leading token of an echoed prompt has a null logprob
            if let Some(v) = lp.as_f64() {
                out.push(v);
            }
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedGeneration {
    output_text: String,
    usage: TokenUsage,
    finish_reason: FinishReason,
}

fn malformed(model: &ModelSpec, reason: String) -> ClientError {
    ClientError::MalformedResponse {
        model: model.name.clone(),
        reason,
    }
}

fn chat_body(model: &ModelSpec, prompt: &PromptParts, images: &[EncodedImage], params: GenParams) -> Value {
    let mut messages = Vec::new();
    if let Some(sys) = &prompt.system {
        messages.push(json!({"role": "system", "content": sys}));
    }
    let mut content: Vec<Value> = images
        .iter()
        .map(|img| json!({"type": "image_url", "image_url": {"url": img.url}}))
        .collect();
    content.push(json!({"type": "text", "text": prompt.user}));
    messages.push(json!({"role": "user", "content": content}));
    json!({
        "model": model.wire_model(),
        "messages": messages,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    })
}

fn parse_generation(model: &ModelSpec, resp: &Value) -> Result<CachedGeneration, ClientError> {
    let choice = resp
        .pointer("/choices/0")
        .ok_or_else(|| malformed(model, "missing choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(model, "missing message content".into()))?;
    let usage = resp
        .get("usage")
        .ok_or_else(|| malformed(model, "missing usage".into()))?;
    let count = |field: &str| {
        usage
            .get(field)
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed(model, format!("missing usage.{field}")))
    };
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok(CachedGeneration {
        output_text: text.to_owned(),
        usage: TokenUsage::new(count("prompt_tokens")?, count("completion_tokens")?),
        finish_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        let p = Pricing {
            input_per_million: 2.5,
            output_per_million: 10.0,
        };
        assert_eq!(round_usd(estimate_cost(TokenUsage::new(2000, 50), p)), 0.0055);
        assert_eq!(estimate_cost(TokenUsage::new(0, 0), p), 0.0);
    }

    #[test]
    fn cost_is_linear() {
        let p = Pricing {
            input_per_million: 3.0,
            output_per_million: 15.0,
        };
        let a = TokenUsage::new(1234, 56);
        let b = TokenUsage::new(789, 1011);
        let sum = estimate_cost(a, p) + estimate_cost(b, p);
        assert!((estimate_cost(a + b, p) - sum).abs() < 1e-15);
        let doubled = estimate_cost(TokenUsage::new(2 * 1234, 2 * 56), p);
        assert!((doubled - 2.0 * estimate_cost(a, p)).abs() < 1e-15);
    }

    #[test]
    fn echo_span_selection() {
        let (prompt, start) = echo_scoring_prompt("Q?", "49 %");
        assert_eq!(prompt, "Question: Q?\nAnswer: 49 %");
        // tokens: "Question:" " Q?\n" "Answer:" " 49" " %"
        let resp = json!({"choices": [{"logprobs": {
            "tokens": ["Question:", " Q?\n", "Answer:", " 49", " %"],
            "token_logprobs": [null, -3.0, -0.1, -0.5, -1.5],
            "text_offset": [0, 9, 13, 20, 23],
        }}]});
        assert_eq!(answer_span_logprobs(&resp, start).unwrap(), vec![-0.5, -1.5]);
    }

    #[test]
    fn generation_parsing_requires_usage() {
        let m = ModelSpec::new("m", "http://x");
        let ok = json!({"choices": [{"message": {"content": "hi"}, "finish_reason": "length"}],
                        "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let parsed = parse_generation(&m, &ok).unwrap();
        assert_eq!(parsed.finish_reason, FinishReason::Length);
        assert_eq!(parsed.usage, TokenUsage::new(3, 1));
        let no_usage = json!({"choices": [{"message": {"content": "hi"}}]});
        assert!(matches!(
            parse_generation(&m, &no_usage),
            Err(ClientError::MalformedResponse { .. })
        ));
        assert!(matches!(
            parse_generation(&m, &json!({})),
            Err(ClientError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn folding_prepends_system() {
        let p = PromptParts {
            system: Some("SYS".into()),
            user: "USER".into(),
            images: vec![],
        };
        let f = p.folded();
        assert_eq!(f.system, None);
        assert_eq!(f.user, "SYS\nUSER");
    }

    #[test]
    fn identical_prompts_share_a_digest() {
        let client = ModelClient::new(ClientOptions::default());
        let m = ModelSpec::new("draft-A", "http://localhost:1");
        let p = PromptParts {
            system: None,
            user: "Question: q".into(),
            images: vec!["https://x/i.png".into()],
        };
        let a = client.prompt_digest_for(&m, &p).unwrap();
        let b = client.prompt_digest_for(&m, &p.clone()).unwrap();
        assert_eq!(a, b);
        let other = PromptParts {
            user: "Question: r".into(),
            ..p
        };
        assert_ne!(a, client.prompt_digest_for(&m, &other).unwrap());
    }
}
