//! Trajectory forensics: how often confusion words appear in right and wrong
//! answers, how sharply the text changes topic around a word, and how
//! surprising the word is to the model.
//!
//! The numeric core is generic over [`num_traits::Float`]; the crate root
//! exposes `f64` and `f32` aliases.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::{cache_key, network_denied, ProviderMode};
use crate::text::{estimate_tokens, find_whole_word, tail_chars};
use crate::trigger::{detect_all, TriggerLexicon};

/// Characters of context on each side of a word.
pub const DEFAULT_WINDOW: usize = 200;
/// Candidates returned by [`rank_candidates`].
pub const TOP_N: usize = 20;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("token logprobs missing or not covering bytes {start}..{end}")]
    MissingLogprobs { start: usize, end: usize },
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error("bad trajectory on line {line}: {reason}")]
    BadInput { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("network access is disabled")]
    NetworkDenied,
    #[error("no cached embedding for key {0}")]
    CacheMiss(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either vector is zero.
pub fn cosine<T: Float>(a: &[T], b: &[T]) -> T {
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    (dot / (na.sqrt() * nb.sqrt())).max(-T::one()).min(T::one())
}

/// `exp(-mean(logprobs))`.
pub fn perplexity<T: Float>(logprobs: &[T]) -> Option<T> {
    if logprobs.is_empty() {
        return None;
    }
    let n = T::from(logprobs.len())?;
    let sum = logprobs.iter().fold(T::zero(), |acc, x| acc + *x);
    Some((-(sum / n)).exp())
}

fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().fold(T::zero(), |a, x| a + *x) / T::from(xs.len())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub item_id: String,
    pub text: String,
    pub correct: bool,
    /// Per-token `(token, logprob)`; the tokens concatenate to `text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<(String, f64)>>,
}

impl Trajectory {
    fn token_count(&self) -> u64 {
        match &self.token_logprobs {
            Some(t) => t.len() as u64,
            None => estimate_tokens(&self.text),
        }
    }
}

/// Reads trajectories from either the documented trajectory JSONL or a
/// harness `records.jsonl` (`trajectory` field).
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, AnalyzerError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad = |reason: String| AnalyzerError::BadInput {
            line: i + 1,
            reason,
        };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let t = if v.get("trajectory").is_some() {
            Trajectory {
                item_id: v["item_id"].as_str().unwrap_or_default().to_string(),
                text: v["trajectory"]
                    .as_str()
                    .ok_or_else(|| bad("`trajectory` is not a string".into()))?
                    .to_string(),
                correct: v["correct"].as_bool().unwrap_or(false),
                token_logprobs: None,
            }
        } else {
            serde_json::from_value(v).map_err(|e| bad(e.to_string()))?
        };
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean_words: f64,
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    /// `None` when the group is empty.
    pub correct: Option<GroupStats>,
    pub wrong: Option<GroupStats>,
}

/// Mean lexicon-word count and token count for correct and wrong
/// trajectories.
pub fn confusion_stats(trajectories: &[Trajectory], lexicon: &TriggerLexicon) -> ConfusionStats {
    let group = |correct: bool| {
        let members: Vec<&Trajectory> = trajectories
            .iter()
            .filter(|t| t.correct == correct)
            .collect();
        if members.is_empty() {
            return None;
        }
        let n = members.len() as f64;
        let words: usize = members
            .iter()
            .map(|t| detect_all(lexicon, &t.text).len())
            .sum();
        let tokens: u64 = members.iter().map(|t| t.token_count()).sum();
        Some(GroupStats {
            n: members.len(),
            mean_words: words as f64 / n,
            mean_tokens: tokens as f64 / n,
        })
    };
    ConfusionStats {
        correct: group(true),
        wrong: group(false),
    }
}

/// Maps text to a vector.
pub trait Embedder<T: Float>: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<T>, EmbedderError>;
}

/// Offline embedder: signed feature hashing of lowercase words into a fixed
/// number of buckets. Deterministic across platforms.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl<T: Float> Embedder<T> for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<T>, EmbedderError> {
        let mut v = vec![T::zero(); self.dim];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let h = Sha256::digest(word.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % self.dim;
            let sign = if h[8] & 1 == 0 { T::one() } else { -T::one() };
            v[bucket] = v[bucket] + sign;
        }
        Ok(v)
    }
}

/// Embedding endpoint profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingHandle {
    #[serde(default = "default_embed_url")]
    pub base_url: String,
    #[serde(default = "default_embed_model")]
    pub model: String,
    /// `scripted` selects the offline hashing embedder.
    #[serde(default = "default_embed_mode")]
    pub mode: ProviderMode,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_embed_url() -> String {
    "http://localhost:8000/v1".into()
}
fn default_embed_model() -> String {
    "text-embedding".into()
}
fn default_embed_mode() -> ProviderMode {
    ProviderMode::Scripted
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

impl Default for EmbeddingHandle {
    fn default() -> Self {
        Self {
            base_url: default_embed_url(),
            model: default_embed_model(),
            mode: default_embed_mode(),
            api_key_env: default_api_key_env(),
        }
    }
}

impl EmbeddingHandle {
    pub fn connect(&self, cache_dir: &Path) -> Result<Box<dyn Embedder<f64>>, EmbedderError> {
        Ok(match self.mode {
            ProviderMode::Scripted => Box::new(HashingEmbedder::default()),
            mode => Box::new(HttpEmbedder::new(self, mode, cache_dir)?),
        })
    }
}

/// OpenAI-compatible `/embeddings` client with a record/replay cache: one
/// JSON line per input, keyed like chat requests.
pub struct HttpEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    mode: ProviderMode,
    cache_path: PathBuf,
    cache: Mutex<BTreeMap<String, Vec<f64>>>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    key: String,
    vector: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(
        handle: &EmbeddingHandle,
        mode: ProviderMode,
        cache_dir: &Path,
    ) -> Result<Self, EmbedderError> {
        let cache_path = cache_dir.join("embeddings.jsonl");
        let mut cache = BTreeMap::new();
        if let Ok(text) = fs::read_to_string(&cache_path) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let e: EmbeddingLine = serde_json::from_str(line)
                    .map_err(|e| EmbedderError::Protocol(e.to_string()))?;
                cache.insert(e.key, e.vector);
            }
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedderError::Transport(e.to_string()))?;
        Ok(Self {
            url: format!("{}/embeddings", handle.base_url.trim_end_matches('/')),
            model: handle.model.clone(),
            api_key: std::env::var(&handle.api_key_env)
                .ok()
                .filter(|k| !k.is_empty()),
            mode,
            cache_path,
            cache: Mutex::new(cache),
            client,
        })
    }

    fn fetch(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        if network_denied() {
            return Err(EmbedderError::NetworkDenied);
        }
        let mut req = self
            .client
            .post(&self.url)
            .json(&json!({"model": self.model, "input": text}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| EmbedderError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .map_err(|e| EmbedderError::Protocol(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedderError::Transport(format!("HTTP {status}: {body}")));
        }
        body.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| EmbedderError::Protocol("no data[0].embedding".into()))
    }
}

impl Embedder<f64> for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        let key = cache_key(&json!({"model": self.model, "input": text}));
        if self.mode != ProviderMode::Live {
            if let Some(v) = self
                .cache
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get(&key)
            {
                return Ok(v.clone());
            }
            if self.mode == ProviderMode::Replay {
                return Err(EmbedderError::CacheMiss(key));
            }
        }
        let v = self.fetch(text)?;
        if self.mode == ProviderMode::Record {
            let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(dir) = self.cache_path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.cache_path)?;
            let line = serde_json::to_string(&EmbeddingLine {
                key: key.clone(),
                vector: v.clone(),
            })
            .expect("embedding serializes");
            writeln!(f, "{line}")?;
            cache.insert(key, v.clone());
        }
        Ok(v)
    }
}

/// Cosine between the embeddings of the `window` characters before and
/// after the byte span `word`.
pub fn context_similarity<T: Float>(
    text: &str,
    word: (usize, usize),
    window: usize,
    embedder: &dyn Embedder<T>,
) -> Result<T, EmbedderError> {
    let before = tail_chars(&text[..word.0], window);
    let after_text = &text[word.1..];
    let cut = after_text
        .char_indices()
        .nth(window)
        .map_or(after_text.len(), |(i, _)| i);
    let after = &after_text[..cut];
    Ok(cosine(&embedder.embed(before)?, &embedder.embed(after)?))
}

/// Perplexity of the tokens overlapping byte span `span`.
pub fn word_perplexity<T: Float>(t: &Trajectory, span: (usize, usize)) -> Result<T, AnalyzerError> {
    let missing = || AnalyzerError::MissingLogprobs {
        start: span.0,
        end: span.1,
    };
    let tokens = t.token_logprobs.as_ref().ok_or_else(missing)?;
    let mut pos = 0;
    let mut lps = Vec::new();
    for (tok, lp) in tokens {
        let end = pos + tok.len();
        if end > span.0 && pos < span.1 {
            lps.push(T::from(*lp).ok_or_else(missing)?);
        }
        pos = end;
    }
    if pos < span.1 {
        return Err(missing());
    }
    perplexity(&lps).ok_or_else(missing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore<T> {
    pub word: String,
    pub occurrences: usize,
    pub mean_context_similarity: T,
    /// `None` when no occurrence had logprobs.
    pub mean_perplexity: Option<T>,
}

/// Every `(trajectory index, byte span)` where `word` appears.
fn occurrences(trajectories: &[Trajectory], word: &str) -> Vec<(usize, (usize, usize))> {
    trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            find_whole_word(&t.text, word)
                .into_iter()
                .map(move |s| (i, s))
        })
        .collect()
}

fn score_spans<T: Float>(
    word: &str,
    trajectories: &[Trajectory],
    spans: &[(usize, (usize, usize))],
    window: usize,
    embedder: &dyn Embedder<T>,
) -> Result<Option<WordScore<T>>, EmbedderError> {
    if spans.is_empty() {
        return Ok(None);
    }
    let mut sims = Vec::with_capacity(spans.len());
    let mut ppls = Vec::new();
    for &(i, span) in spans {
        sims.push(context_similarity(
            &trajectories[i].text,
            span,
            window,
            embedder,
        )?);
        if let Ok(p) = word_perplexity(&trajectories[i], span) {
            ppls.push(p);
        }
    }
    Ok(Some(WordScore {
        word: word.to_string(),
        occurrences: spans.len(),
        mean_context_similarity: mean(&sims).expect("non-empty"),
        mean_perplexity: mean(&ppls),
    }))
}

/// Scores every non-excluded vocabulary word that occurs at least once and
/// returns the [`TOP_N`] with the lowest mean context similarity, ascending,
/// ties broken by word.
pub fn rank_candidates<T: Float>(
    trajectories: &[Trajectory],
    vocabulary: &[String],
    window: usize,
    embedder: &dyn Embedder<T>,
    exclusions: &[String],
) -> Result<Vec<WordScore<T>>, EmbedderError> {
    let excluded: BTreeSet<String> = exclusions.iter().map(|w| w.trim().to_lowercase()).collect();
    let words: BTreeSet<String> = vocabulary
        .iter()
        .map(|w| w.trim().to_lowercase())
        .filter(|w| !w.is_empty() && !excluded.contains(w))
        .collect();
    let mut scores = Vec::new();
    for w in &words {
        if let Some(s) = score_spans(
            w,
            trajectories,
            &occurrences(trajectories, w),
            window,
            embedder,
        )? {
            scores.push(s);
        }
    }
    scores.sort_by(|a, b| {
        a.mean_context_similarity
            .partial_cmp(&b.mean_context_similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.word.cmp(&b.word))
    });
    scores.truncate(TOP_N);
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconScore<T> {
    pub occurrences: usize,
    pub mean_similarity: T,
    /// `None` when no occurrence had logprobs.
    pub mean_perplexity: Option<T>,
}

/// Mean similarity and perplexity over all occurrences of each lexicon's
/// entries. Lexicons that never occur are left out.
pub fn compare_lexicons<T: Float>(
    trajectories: &[Trajectory],
    lexicons: &[TriggerLexicon],
    window: usize,
    embedder: &dyn Embedder<T>,
) -> Result<BTreeMap<String, LexiconScore<T>>, EmbedderError> {
    let mut out = BTreeMap::new();
    for lex in lexicons {
        let spans: Vec<(usize, (usize, usize))> = trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| {
                detect_all(lex, &t.text)
                    .into_iter()
                    .map(move |e| (i, e.char_span))
            })
            .collect();
        if let Some(s) = score_spans(
            &lex.name.to_string(),
            trajectories,
            &spans,
            window,
            embedder,
        )? {
            out.insert(
                lex.name.to_string(),
                LexiconScore {
                    occurrences: s.occurrences,
                    mean_similarity: s.mean_context_similarity,
                    mean_perplexity: s.mean_perplexity,
                },
            );
        }
    }
    Ok(out)
}

/// Everything `analyze` writes to `wordscores.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScoreReport {
    pub window: usize,
    pub confusion: ConfusionStats,
    pub candidates: Vec<WordScore<f64>>,
    pub lexicons: BTreeMap<String, LexiconScore<f64>>,
}

impl WordScoreReport {
    /// Writes `wordscores.json` and `wordscores.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), AnalyzerError> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(dir.join("wordscores.json"), json + "\n")?;
        let mut w = csv::Writer::from_path(dir.join("wordscores.csv"))?;
        w.write_record([
            "word",
            "occurrences",
            "mean_context_similarity",
            "mean_perplexity",
        ])?;
        for s in &self.candidates {
            w.write_record([
                s.word.clone(),
                s.occurrences.to_string(),
                format!("{:.6}", s.mean_context_similarity),
                s.mean_perplexity
                    .map(|p| format!("{p:.6}"))
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
