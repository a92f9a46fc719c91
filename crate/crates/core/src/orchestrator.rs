//! Runs one item end to end: stream the reasoning, watch for triggers, cut
//! the trace after an accepted trigger word, inject the world state, and
//! resume from the extended prefix.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{self, PromptTemplate};
use crate::provider::{ChatProvider, ChatRequest, GenerationParams, ProviderError, StreamControl};
use crate::story::{normalize_answer, Question, Story};
use crate::text::{estimate_tokens, find_whole_word};
use crate::trigger::{Acceptor, InterventionPolicy, TriggerDetector, TriggerEvent, TriggerLexicon};
use crate::world::{self, StateScope, WorldError, WorldModelBuildError, WorldModelSnapshot};

const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    WorldModel(#[from] WorldModelBuildError),
}

impl RunError {
    /// True when the failure came from the transport rather than the item.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Self::Provider(ProviderError::Transport(_) | ProviderError::Http { .. })
                | Self::WorldModel(WorldModelBuildError::Provider(
                    ProviderError::Transport(_) | ProviderError::Http { .. }
                ))
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no answer found in trajectory")]
pub struct AnswerExtractionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WmMode {
    /// Replay the parsed story through the world engine.
    #[default]
    Deterministic,
    /// Ask a model to build the world model.
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCountMethod {
    ProviderTokenizer,
    /// `ceil(bytes / 4)`.
    ByteEstimate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub ordinal: usize,
    pub word: String,
    pub char_span: (usize, usize),
    pub scope: StateScope,
    pub injected_text: String,
    pub tokens_injected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub generated: u64,
    pub injected: u64,
    pub wm_construction: u64,
    pub total: u64,
}

impl TokenCounts {
    pub fn new(prompt: u64, generated: u64, injected: u64, wm_construction: u64) -> Self {
        Self {
            prompt,
            generated,
            injected,
            wm_construction,
            total: prompt + generated + injected + wm_construction,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.total == self.prompt + self.generated + self.injected + self.wm_construction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub dataset: String,
    pub condition_id: String,
    pub trajectory: String,
    pub interventions: Vec<InterventionRecord>,
    pub tokens: TokenCounts,
    pub token_count_method: TokenCountMethod,
    pub answer: String,
    pub gold: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_error: Option<String>,
    pub wall_ms: u64,
}

/// Where intervention state comes from.
#[derive(Clone, Copy)]
pub enum WmSource<'a> {
    Deterministic,
    Llm {
        provider: &'a dyn ChatProvider,
        model: &'a str,
        params: &'a GenerationParams,
    },
}

/// Everything needed to run items under one condition.
pub struct ItemRunner<'a> {
    pub provider: &'a dyn ChatProvider,
    pub model: String,
    pub params: GenerationParams,
    pub policy: InterventionPolicy,
    /// `None` disables trigger detection (baseline).
    pub lexicon: Option<&'a TriggerLexicon>,
    pub wm: WmSource<'a>,
    pub template: PromptTemplate,
    pub condition_id: String,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl<'a> ItemRunner<'a> {
    pub fn new(provider: &'a dyn ChatProvider, model: &str) -> Self {
        Self {
            provider,
            model: model.to_string(),
            params: GenerationParams::default(),
            policy: InterventionPolicy::default(),
            lexicon: None,
            wm: WmSource::Deterministic,
            template: PromptTemplate::default(),
            condition_id: "default".into(),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    fn count(&self, text: &str) -> (u64, TokenCountMethod) {
        match self.provider.count_tokens(text) {
            Some(n) => (n, TokenCountMethod::ProviderTokenizer),
            None => (estimate_tokens(text), TokenCountMethod::ByteEstimate),
        }
    }

    /// Runs one (story, question) pair to completion.
    pub fn run_item(
        &self,
        item_id: &str,
        dataset: &str,
        story: &Story,
        q: &Question,
    ) -> Result<RunRecord, RunError> {
        let started = Instant::now();
        let messages = prompt::messages(self.template, story, q);
        let mut method = TokenCountMethod::ByteEstimate;
        let mut prompt_tokens = 0;
        for m in &messages {
            let (n, m) = self.count(&m.content);
            prompt_tokens += n;
            method = m;
        }

        let mut detector = match self.lexicon {
            Some(l) => TriggerDetector::new(l),
            None => TriggerDetector::disabled(),
        };
        let mut acceptor = Acceptor::new(self.policy);
        let mut generated: u64 = 0;
        let mut injected: u64 = 0;
        let mut wm_tokens: u64 = 0;
        let mut snapshot: Option<WorldModelSnapshot> = None;
        let mut interventions: Vec<InterventionRecord> = Vec::new();
        let mut retries = 0;

        loop {
            let budget = u64::from(self.params.max_tokens).saturating_sub(generated);
            if budget == 0 {
                break;
            }
            let mut params = self.params.clone();
            params.max_tokens = budget as u32;
            let req = ChatRequest {
                model: self.model.clone(),
                params,
                messages: messages.clone(),
                assistant_prefix: (!detector.text().is_empty())
                    .then(|| detector.text().to_string()),
            };

            let mut pending: Option<TriggerEvent> = None;
            let result = self.provider.stream(&req, &mut |chunk| {
                generated += u64::from(chunk.tokens);
                for ev in detector.feed(&chunk.text) {
                    if acceptor.accept(&ev, generated) {
                        pending = Some(ev);
                        return StreamControl::Stop;
                    }
                }
                StreamControl::Continue
            });

            let outcome = match result {
                Ok(o) => o,
                Err(e) if e.is_retryable() && retries < self.max_retries => {
                    retries += 1;
                    std::thread::sleep(self.backoff * 2u32.pow(retries - 1));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if pending.is_none() && outcome.finished {
                pending = detector
                    .finish()
                    .into_iter()
                    .find(|ev| acceptor.accept(ev, generated));
            }
            let Some(ev) = pending else { break };

            detector.truncate(ev.char_span.1);
            if snapshot.is_none() {
                let (snap, used) = match self.wm {
                    WmSource::Deterministic => (world::final_snapshot(story, q.order)?, 0),
                    WmSource::Llm {
                        provider,
                        model,
                        params,
                    } => world::llm_build_world_model(story, provider, model, params)?,
                };
                snapshot = Some(snap);
                wm_tokens += used;
            }
            let snap = snapshot.as_ref().expect("built above");
            let ordinal = interventions.len() + 1;
            let scope = world::select_scope(snap, q, detector.text(), ordinal);
            let block = world::render_information(snap, &scope);
            detector.push_injected(&format!("\n{block}\n"));
            let (n, m) = self.count(&block);
            method = m;
            injected += n;
            interventions.push(InterventionRecord {
                ordinal,
                word: ev.word,
                char_span: ev.char_span,
                scope,
                injected_text: block,
                tokens_injected: n,
            });
        }

        let trajectory = detector.text().to_string();
        let gold = q.gold.clone().unwrap_or_default();
        let (answer, extraction_error) = match extract_answer(&trajectory, q.choices.as_deref()) {
            Ok(a) => (a, None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        let correct =
            extraction_error.is_none() && normalize_answer(&answer) == normalize_answer(&gold);
        Ok(RunRecord {
            item_id: item_id.to_string(),
            dataset: dataset.to_string(),
            condition_id: self.condition_id.clone(),
            trajectory,
            interventions,
            tokens: TokenCounts::new(prompt_tokens, generated, injected, wm_tokens),
            token_count_method: method,
            answer,
            gold,
            correct,
            extraction_error,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }
}

fn option_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\(?([a-z])(?:[.):]\s*|\s+|$)(.*)$").unwrap())
}

fn clean_answer(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| matches!(c, '*' | '"' | '\'' | '`' | '.' | '!' | ' '))
        .to_lowercase()
}

fn match_choice(answer: &str, choices: &[String]) -> Option<String> {
    let norm: Vec<String> = choices.iter().map(|c| normalize_answer(c)).collect();
    let pick = |i: usize| choices[i].trim().to_lowercase();
    let a = normalize_answer(answer);
    if let Some(i) = norm.iter().position(|c| *c == a) {
        return Some(pick(i));
    }
    if let Some(caps) = option_prefix().captures(answer) {
        let letter = caps[1].chars().next().unwrap();
        let rest = normalize_answer(&caps[2]);
        if !rest.is_empty() {
            if let Some(i) = norm.iter().position(|c| *c == rest) {
                return Some(pick(i));
            }
        } else {
            let idx = (letter as u8 - b'a') as usize;
            if idx < choices.len() {
                return Some(pick(idx));
            }
        }
    }
    let hits: Vec<usize> = (0..choices.len())
        .filter(|&i| !find_whole_word(&a, &norm[i]).is_empty())
        .collect();
    match hits.as_slice() {
        [i] => Some(pick(*i)),
        _ => None,
    }
}

/// Pulls the final answer out of a trajectory: the text after the last
/// `Answer:` marker outside any think segment, mapped onto a choice when
/// choices are given.
pub fn extract_answer(
    trajectory: &str,
    choices: Option<&[String]>,
) -> Result<String, AnswerExtractionError> {
    let search = match trajectory.rfind(THINK_CLOSE) {
        Some(i) => &trajectory[i + THINK_CLOSE.len()..],
        None => trajectory,
    };
    let lower = search.to_lowercase();
    let marker = if lower.len() == search.len() {
        lower.rfind("answer:")
    } else {
        None
    };
    match (marker, choices) {
        (Some(i), choices) => {
            let rest = &search[i + "answer:".len()..];
            let line = rest.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            let cleaned = clean_answer(line);
            if cleaned.is_empty() {
                return Err(AnswerExtractionError);
            }
            Ok(choices
                .and_then(|cs| match_choice(&cleaned, cs))
                .unwrap_or(cleaned))
        }
        (None, Some(cs)) => {
            let hits: Vec<&String> = cs
                .iter()
                .filter(|c| !find_whole_word(search, &normalize_answer(c)).is_empty())
                .collect();
            match hits.as_slice() {
                [c] => Ok(c.trim().to_lowercase()),
                _ => Err(AnswerExtractionError),
            }
        }
        (None, None) => Err(AnswerExtractionError),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn marker_extraction() {
        assert_eq!(
            extract_answer("long reasoning... Answer: basket", None).unwrap(),
            "basket"
        );
        assert_eq!(
            extract_answer("Answer: box\nmore\nANSWER: **Basket**.", None).unwrap(),
            "basket"
        );
        assert_eq!(
            extract_answer("nothing here", None),
            Err(AnswerExtractionError)
        );
    }

    #[test]
    fn choice_normalization_table() {
        let choices = strings(&["the refrigerator", "the basket", "the box"]);
        let cases = [
            ("Answer: A. the basket", "the basket"),
            ("Answer: (b) basket", "the basket"),
            ("Answer: C", "the box"),
            ("Answer: The Basket", "the basket"),
            ("Answer: it is in the refrigerator", "the refrigerator"),
        ];
        for (text, want) in cases {
            assert_eq!(
                extract_answer(text, Some(&choices)).unwrap(),
                want,
                "{text}"
            );
        }
        assert_eq!(
            extract_answer("I think the box.", Some(&choices)).unwrap(),
            "the box"
        );
        assert_eq!(
            extract_answer("no marker at all", Some(&choices)),
            Err(AnswerExtractionError)
        );
        assert_eq!(
            extract_answer("box or basket?", Some(&choices)),
            Err(AnswerExtractionError)
        );
    }

    #[test]
    fn think_segments_are_skipped() {
        let t = "<think>Answer: box</think>\nAnswer: basket";
        assert_eq!(extract_answer(t, None).unwrap(), "basket");
        assert_eq!(
            extract_answer("<think>Answer: box</think> no marker", None),
            Err(AnswerExtractionError)
        );
    }

    #[test]
    fn token_identity() {
        let t = TokenCounts::new(10, 20, 5, 3);
        assert_eq!(t.total, 38);
        assert!(t.is_consistent());
    }
}
