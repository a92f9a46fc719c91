//! LLM provider layer: chat-completions streaming over HTTP with server-sent
//! events, scripted fixtures, and a content-addressed record/replay cache.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::estimate_tokens;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("network access is disabled")]
    NetworkDenied,
    #[error("provider cannot continue from an assistant prefix")]
    PrefixUnsupported,
    #[error("no cached response for request {0}")]
    CacheMiss(String),
    #[error("cached response for request {0} ends before the stream does")]
    CacheIncomplete(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("scripted provider: {0}")]
    Script(String),
}

impl ProviderError {
    /// Transport-level failures worth retrying with backoff.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

static NETWORK_DENIED: AtomicBool = AtomicBool::new(false);

/// Test hook: when set (or when `WMTOM_DENY_NETWORK` is non-empty), every
/// live HTTP call fails with [`ProviderError::NetworkDenied`].
pub fn set_network_denied(denied: bool) {
    NETWORK_DENIED.store(denied, Ordering::SeqCst);
}

pub fn network_denied() -> bool {
    NETWORK_DENIED.load(Ordering::SeqCst)
        || std::env::var("WMTOM_DENY_NETWORK").is_ok_and(|v| !v.is_empty() && v != "0")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_repetition_penalty")]
    pub repetition_penalty: f64,
    #[serde(default)]
    pub logprobs: bool,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    8192
}
fn default_repetition_penalty() -> f64 {
    1.2
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            repetition_penalty: default_repetition_penalty(),
            logprobs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Record,
    #[default]
    Replay,
    Scripted,
}

/// How a partial assistant turn is continued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixStyle {
    /// Chat request whose last message is the partial assistant turn, with
    /// `continue_final_message` set (vLLM and compatible servers).
    #[default]
    ChatContinue,
    /// Text completion over the flattened conversation plus the prefix.
    Completions,
    /// The endpoint cannot continue a prefix.
    None,
}

/// A provider profile as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderHandle {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default)]
    pub mode: ProviderMode,
    #[serde(default)]
    pub prefix: PrefixStyle,
    /// Environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Built-in script served in scripted mode (and recorded in record mode
    /// when set), e.g. `guidable` or `stubborn:5`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
}

fn default_base_url() -> String {
    "http://localhost:8000/v1".into()
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

impl ProviderHandle {
    pub fn scripted(model: &str, script: &str) -> Self {
        Self {
            base_url: default_base_url(),
            model: model.into(),
            params: GenerationParams::default(),
            mode: ProviderMode::Scripted,
            prefix: PrefixStyle::ChatContinue,
            api_key_env: default_api_key_env(),
            script: Some(script.into()),
        }
    }

    /// Builds the provider stack for this profile. Record and replay modes
    /// keep their entries under `cache_dir`.
    pub fn connect(&self, cache_dir: &Path) -> Result<Arc<dyn ChatProvider>, ProviderError> {
        let upstream = || -> Result<Arc<dyn ChatProvider>, ProviderError> {
            match &self.script {
                Some(name) => Ok(Arc::new(crate::scripts::builtin(name)?)),
                None => Ok(Arc::new(HttpProvider::new(self)?)),
            }
        };
        Ok(match self.mode {
            ProviderMode::Live => Arc::new(HttpProvider::new(self)?),
            ProviderMode::Scripted => match &self.script {
                Some(name) => Arc::new(crate::scripts::builtin(name)?),
                None => {
                    return Err(ProviderError::Script(
                        "scripted mode needs a `script`".into(),
                    ))
                }
            },
            ProviderMode::Record => Arc::new(CachingProvider::record(
                upstream()?,
                ReplayCache::open(cache_dir)?,
            )),
            ProviderMode::Replay => {
                Arc::new(CachingProvider::replay(ReplayCache::open(cache_dir)?))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(s: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: s.into(),
        }
    }
    pub fn user(s: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: s.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub params: GenerationParams,
    pub messages: Vec<Message>,
    /// Partial assistant turn to continue from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant_prefix: Option<String>,
}

impl ChatRequest {
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn cache_key(&self) -> String {
        cache_key(&serde_json::to_value(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamChunk {
    pub text: String,
    pub tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<(String, f64)>>,
}

impl StreamChunk {
    pub fn new(text: impl Into<String>, tokens: u32) -> Self {
        Self {
            text: text.into(),
            tokens,
            logprobs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamControl {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamOutcome {
    /// False when the consumer stopped the stream early.
    pub finished: bool,
    pub usage: Option<Usage>,
}

pub trait ChatProvider: Send + Sync {
    /// Streams the response chunk by chunk. Returning [`StreamControl::Stop`]
    /// from `on_chunk` aborts the in-flight generation.
    fn stream(
        &self,
        req: &ChatRequest,
        on_chunk: &mut dyn FnMut(&StreamChunk) -> StreamControl,
    ) -> Result<StreamOutcome, ProviderError>;

    /// Token count from the provider's own tokenizer, when it has one.
    fn count_tokens(&self, _text: &str) -> Option<u64> {
        None
    }

    /// Collects a whole response. Usage falls back to estimates when the
    /// provider does not report it.
    fn complete(&self, req: &ChatRequest) -> Result<(String, Usage), ProviderError> {
        let mut text = String::new();
        let mut chunk_tokens = 0u64;
        let outcome = self.stream(req, &mut |c| {
            text.push_str(&c.text);
            chunk_tokens += u64::from(c.tokens);
            StreamControl::Continue
        })?;
        let usage = outcome.usage.unwrap_or_else(|| Usage {
            prompt_tokens: req
                .messages
                .iter()
                .map(|m| estimate_tokens(&m.content))
                .sum(),
            completion_tokens: chunk_tokens,
        });
        Ok((text, usage))
    }
}

/// Canonical SHA-256 over a JSON value with object keys sorted at every
/// level, so field order never changes the key.
pub fn cache_key(value: &Value) -> String {
    let mut canon = String::new();
    write_canonical(value, &mut canon);
    hex::encode(Sha256::digest(canon.as_bytes()))
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(xs) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// OpenAI-compatible streaming client.
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    prefix: PrefixStyle,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(handle: &ProviderHandle) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(30))
            .timeout(Duration::from_secs(900))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: handle.base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(&handle.api_key_env)
                .ok()
                .filter(|k| !k.is_empty()),
            prefix: handle.prefix,
            client,
        })
    }

    fn body(&self, req: &ChatRequest) -> Result<(String, Value), ProviderError> {
        let p = &req.params;
        let mut body = json!({
            "model": req.model,
            "stream": true,
            "stream_options": {"include_usage": true},
            "temperature": p.temperature,
            "max_tokens": p.max_tokens,
            "repetition_penalty": p.repetition_penalty,
        });
        match (&req.assistant_prefix, self.prefix) {
            (Some(_), PrefixStyle::None) => Err(ProviderError::PrefixUnsupported),
            (Some(prefix), PrefixStyle::Completions) => {
                let mut prompt = String::new();
                for m in &req.messages {
                    let role = serde_json::to_value(m.role).unwrap();
                    prompt.push_str(&format!(
                        "{}: {}\n\n",
                        role.as_str().unwrap_or("user"),
                        m.content
                    ));
                }
                prompt.push_str("assistant: ");
                prompt.push_str(prefix);
                body["prompt"] = Value::String(prompt);
                if p.logprobs {
                    body["logprobs"] = json!(1);
                }
                Ok((format!("{}/completions", self.base_url), body))
            }
            (prefix, _) => {
                let mut messages = serde_json::to_value(&req.messages).unwrap();
                if let Some(prefix) = prefix {
                    messages
                        .as_array_mut()
                        .unwrap()
                        .push(json!({"role": "assistant", "content": prefix}));
                    body["continue_final_message"] = json!(true);
                    body["add_generation_prompt"] = json!(false);
                }
                body["messages"] = messages;
                if p.logprobs {
                    body["logprobs"] = json!(true);
                }
                Ok((format!("{}/chat/completions", self.base_url), body))
            }
        }
    }
}

/// Parses one SSE `data:` payload into a chunk and optional usage.
pub fn parse_sse_data(data: &str) -> Result<(Option<StreamChunk>, Option<Usage>), ProviderError> {
    let v: Value =
        serde_json::from_str(data).map_err(|e| ProviderError::Protocol(e.to_string()))?;
    if let Some(err) = v.get("error") {
        return Err(ProviderError::Protocol(err.to_string()));
    }
    let usage = v.get("usage").filter(|u| !u.is_null()).map(|u| Usage {
        prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
    });
    let choice = v.get("choices").and_then(|c| c.get(0));
    let text = choice.and_then(|c| {
        c.pointer("/delta/content")
            .and_then(Value::as_str)
            .or_else(|| c.get("text").and_then(Value::as_str))
    });
    let chunk = text.filter(|t| !t.is_empty()).map(|t| {
        let logprobs: Option<Vec<(String, f64)>> = choice
            .and_then(|c| c.pointer("/logprobs/content"))
            .and_then(Value::as_array)
            .map(|xs| {
                xs.iter()
                    .map(|x| {
                        (
                            x["token"].as_str().unwrap_or_default().to_string(),
                            x["logprob"].as_f64().unwrap_or(0.0),
                        )
                    })
                    .collect()
            });
        let tokens = logprobs.as_ref().map_or(1, |l| l.len().max(1) as u32);
        StreamChunk {
            text: t.to_string(),
            tokens,
            logprobs,
        }
    });
    Ok((chunk, usage))
}

impl ChatProvider for HttpProvider {
    fn stream(
        &self,
        req: &ChatRequest,
        on_chunk: &mut dyn FnMut(&StreamChunk) -> StreamControl,
    ) -> Result<StreamOutcome, ProviderError> {
        if network_denied() {
            return Err(ProviderError::NetworkDenied);
        }
        let (url, body) = self.body(req)?;
        let mut rb = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let mut usage = None;
        for line in BufReader::new(resp).lines() {
            let line = line.map_err(|e| ProviderError::Transport(e.to_string()))?;
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            let (chunk, u) = parse_sse_data(data)?;
            if u.is_some() {
                usage = u;
            }
            if let Some(chunk) = chunk {
                if on_chunk(&chunk) == StreamControl::Stop {
                    // Dropping the response closes the connection, which
                    // aborts generation server-side.
                    return Ok(StreamOutcome {
                        finished: false,
                        usage: None,
                    });
                }
            }
        }
        Ok(StreamOutcome {
            finished: true,
            usage,
        })
    }
}

/// Programmatic fixture: a function from request to the full chunk list.
type ScriptFn = dyn Fn(&ChatRequest) -> Result<Vec<StreamChunk>, ProviderError> + Send + Sync;

pub struct ScriptedProvider {
    script: Box<ScriptFn>,
}

impl ScriptedProvider {
    pub fn new(
        f: impl Fn(&ChatRequest) -> Result<Vec<StreamChunk>, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            script: Box::new(f),
        }
    }

    /// Serves `text(req)` split into one-token word chunks.
    pub fn from_text(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        Self::new(move |req| Ok(word_chunks(&f(req))))
    }
}

impl ChatProvider for ScriptedProvider {
    fn stream(
        &self,
        req: &ChatRequest,
        on_chunk: &mut dyn FnMut(&StreamChunk) -> StreamControl,
    ) -> Result<StreamOutcome, ProviderError> {
        let chunks = (self.script)(req)?;
        let mut completion = 0u64;
        for c in &chunks {
            completion += u64::from(c.tokens);
            if on_chunk(c) == StreamControl::Stop {
                return Ok(StreamOutcome {
                    finished: false,
                    usage: None,
                });
            }
        }
        let prompt = req
            .messages
            .iter()
            .map(|m| estimate_tokens(&m.content))
            .sum::<u64>()
            + req.assistant_prefix.as_deref().map_or(0, estimate_tokens);
        Ok(StreamOutcome {
            finished: true,
            usage: Some(Usage {
                prompt_tokens: prompt,
                completion_tokens: completion,
            }),
        })
    }
}

/// Splits text into chunks at word starts, each chunk carrying its leading
/// whitespace and counted as one token.
pub fn word_chunks(text: &str) -> Vec<StreamChunk> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev_space = true;
    for ch in text.chars() {
        let space = ch.is_whitespace();
        if !space && prev_space && cur.chars().any(|c| !c.is_whitespace()) {
            out.push(StreamChunk::new(std::mem::take(&mut cur), 1));
        }
        cur.push(ch);
        prev_space = space;
    }
    if !cur.is_empty() {
        out.push(StreamChunk::new(cur, 1));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEnd {
    complete: bool,
    usage: Option<Usage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CacheLine {
    Chunk(StreamChunk),
    End(CacheEnd),
}

/// One recorded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub chunks: Vec<StreamChunk>,
    /// False when the recording consumer stopped before the stream ended.
    pub complete: bool,
    pub usage: Option<Usage>,
}

/// Content-addressed JSONL store: one `<sha256>.jsonl` file per request.
/// Reads are lock-free; writes go through a temp file and rename under a
/// process-wide lock.
pub struct ReplayCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayCache {
    pub fn open(dir: &Path) -> Result<Self, ProviderError> {
        Ok(Self {
            dir: dir.to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.jsonl"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, ProviderError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut entry = CacheEntry {
            chunks: Vec::new(),
            complete: false,
            usage: None,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<CacheLine>(line)
                .map_err(|e| ProviderError::Protocol(e.to_string()))?
            {
                CacheLine::Chunk(c) => entry.chunks.push(c),
                CacheLine::End(end) => {
                    entry.complete = end.complete;
                    entry.usage = end.usage;
                }
            }
        }
        Ok(Some(entry))
    }

    pub fn put(&self, key: &str, entry: &CacheEntry) -> Result<(), ProviderError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(old) = self.get(key)? {
            let better = entry.complete || (!old.complete && entry.chunks.len() > old.chunks.len());
            if !better {
                return Ok(());
            }
        }
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            for c in &entry.chunks {
                writeln!(
                    f,
                    "{}",
                    serde_json::to_string(&CacheLine::Chunk(c.clone())).unwrap()
                )?;
            }
            let end = CacheLine::End(CacheEnd {
                complete: entry.complete,
                usage: entry.usage,
            });
            writeln!(f, "{}", serde_json::to_string(&end).unwrap())?;
        }
        fs::rename(&tmp, self.path_for(key))?;
        Ok(())
    }
}

/// Record/replay wrapper. Record mode forwards to the upstream provider and
/// stores the delivered chunks verbatim; replay mode serves only from the
/// cache and never touches the network.
pub struct CachingProvider {
    upstream: Option<Arc<dyn ChatProvider>>,
    cache: ReplayCache,
}

impl CachingProvider {
    pub fn record(upstream: Arc<dyn ChatProvider>, cache: ReplayCache) -> Self {
        Self {
            upstream: Some(upstream),
            cache,
        }
    }

    pub fn replay(cache: ReplayCache) -> Self {
        Self {
            upstream: None,
            cache,
        }
    }
}

impl ChatProvider for CachingProvider {
    fn stream(
        &self,
        req: &ChatRequest,
        on_chunk: &mut dyn FnMut(&StreamChunk) -> StreamControl,
    ) -> Result<StreamOutcome, ProviderError> {
        let key = req.cache_key();
        match &self.upstream {
            None => {
                let entry = self
                    .cache
                    .get(&key)?
                    .ok_or_else(|| ProviderError::CacheMiss(key.clone()))?;
                for c in &entry.chunks {
                    if on_chunk(c) == StreamControl::Stop {
                        return Ok(StreamOutcome {
                            finished: false,
                            usage: None,
                        });
                    }
                }
                if !entry.complete {
                    return Err(ProviderError::CacheIncomplete(key));
                }
                Ok(StreamOutcome {
                    finished: true,
                    usage: entry.usage,
                })
            }
            Some(up) => {
                let mut chunks = Vec::new();
                let outcome = up.stream(req, &mut |c| {
                    chunks.push(c.clone());
                    on_chunk(c)
                })?;
                let entry = CacheEntry {
                    chunks,
                    complete: outcome.finished,
                    usage: outcome.usage,
                };
                self.cache.put(&key, &entry)?;
                Ok(outcome)
            }
        }
    }

    fn count_tokens(&self, text: &str) -> Option<u64> {
        self.upstream.as_ref().and_then(|u| u.count_tokens(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prefix: Option<&str>) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            params: GenerationParams::default(),
            messages: vec![Message::user("hi")],
            assistant_prefix: prefix.map(str::to_string),
        }
    }

    #[test]
    fn defaults_match_protocol() {
        let p = GenerationParams::default();
        assert_eq!(
            (p.temperature, p.max_tokens, p.repetition_penalty),
            (0.7, 8192, 1.2)
        );
    }

    #[test]
    fn cache_key_ignores_field_order() {
        let a: Value =
            serde_json::from_str(r#"{"model":"m","messages":[{"role":"user","content":"x"}]}"#)
                .unwrap();
        let b: Value =
            serde_json::from_str(r#"{"messages":[{"content":"x","role":"user"}],"model":"m"}"#)
                .unwrap();
        assert_eq!(cache_key(&a), cache_key(&b));
        let c: Value =
            serde_json::from_str(r#"{"messages":[{"content":"y","role":"user"}],"model":"m"}"#)
                .unwrap();
        assert_ne!(cache_key(&a), cache_key(&c));
    }

    #[test]
    fn word_chunks_keep_text() {
        let text = "  hello world,\n again ";
        let chunks = word_chunks(text);
        assert_eq!(
            chunks.iter().map(|c| c.text.as_str()).collect::<String>(),
            text
        );
        assert_eq!(chunks.len(), 3);
    }

    #[test]
    fn sse_payloads() {
        let (c, u) = parse_sse_data(r#"{"choices":[{"delta":{"content":"Hi"}}]}"#).unwrap();
        assert_eq!(c.unwrap().text, "Hi");
        assert!(u.is_none());
        let (c, u) =
            parse_sse_data(r#"{"choices":[],"usage":{"prompt_tokens":3,"completion_tokens":4}}"#)
                .unwrap();
        assert!(c.is_none());
        assert_eq!(u.unwrap().total(), 7);
        let (c, _) = parse_sse_data(r#"{"choices":[{"text":" ok","logprobs":null}]}"#).unwrap();
        assert_eq!(c.unwrap().text, " ok");
        assert!(parse_sse_data(r#"{"error":{"message":"boom"}}"#).is_err());
        assert!(parse_sse_data("not json").is_err());
    }

    #[test]
    fn record_then_replay_preserves_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let upstream: Arc<dyn ChatProvider> =
            Arc::new(ScriptedProvider::from_text(|_| "one two three".into()));
        let rec = CachingProvider::record(upstream, ReplayCache::open(dir.path()).unwrap());
        let mut seen = Vec::new();
        rec.stream(&req(None), &mut |c| {
            seen.push(c.clone());
            StreamControl::Continue
        })
        .unwrap();

        let rep = CachingProvider::replay(ReplayCache::open(dir.path()).unwrap());
        let mut again = Vec::new();
        let out = rep
            .stream(&req(None), &mut |c| {
                again.push(c.clone());
                StreamControl::Continue
            })
            .unwrap();
        assert!(out.finished);
        assert_eq!(seen, again);
        assert!(matches!(
            rep.stream(&req(Some("x")), &mut |_| StreamControl::Continue),
            Err(ProviderError::CacheMiss(_))
        ));
    }

    #[test]
    fn aborted_recordings_are_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let upstream: Arc<dyn ChatProvider> =
            Arc::new(ScriptedProvider::from_text(|_| "a b c d".into()));
        let rec = CachingProvider::record(upstream, ReplayCache::open(dir.path()).unwrap());
        let mut n = 0;
        rec.stream(&req(None), &mut |_| {
            n += 1;
            if n == 2 {
                StreamControl::Stop
            } else {
                StreamControl::Continue
            }
        })
        .unwrap();
        let rep = CachingProvider::replay(ReplayCache::open(dir.path()).unwrap());
        let mut m = 0;
        let out = rep
            .stream(&req(None), &mut |_| {
                m += 1;
                if m == 2 {
                    StreamControl::Stop
                } else {
                    StreamControl::Continue
                }
            })
            .unwrap();
        assert!(!out.finished);
        assert!(matches!(
            rep.stream(&req(None), &mut |_| StreamControl::Continue),
            Err(ProviderError::CacheIncomplete(_))
        ));
    }

    #[test]
    fn prefix_styles() {
        let mut h = ProviderHandle::scripted("m", "guidable");
        h.mode = ProviderMode::Live;
        h.prefix = PrefixStyle::None;
        let p = HttpProvider::new(&h).unwrap();
        assert!(matches!(
            p.body(&req(Some("so"))),
            Err(ProviderError::PrefixUnsupported)
        ));
        h.prefix = PrefixStyle::ChatContinue;
        let (url, body) = HttpProvider::new(&h)
            .unwrap()
            .body(&req(Some("so")))
            .unwrap();
        assert!(url.ends_with("/chat/completions"));
        assert_eq!(body["messages"][1]["content"], "so");
        assert_eq!(body["continue_final_message"], true);
        h.prefix = PrefixStyle::Completions;
        let (url, body) = HttpProvider::new(&h)
            .unwrap()
            .body(&req(Some("so")))
            .unwrap();
        assert!(url.ends_with("/completions"));
        assert!(body["prompt"].as_str().unwrap().ends_with("assistant: so"));
    }

    #[test]
    fn network_guard_blocks_live_calls() {
        set_network_denied(true);
        let mut h = ProviderHandle::scripted("m", "x");
        h.mode = ProviderMode::Live;
        let p = HttpProvider::new(&h).unwrap();
        let r = p.stream(&req(None), &mut |_| StreamControl::Continue);
        set_network_denied(false);
        assert!(matches!(r, Err(ProviderError::NetworkDenied)));
    }
}
