//! Built-in scripted models for offline runs.
//!
//! Both scripts read the story and question back out of the prompt and
//! answer with the object's true location, which is wrong whenever the
//! question targets a false belief.
//!
//! - `guidable[:n]` rambles with `n` confusion words (default 3). Once an
//!   `<information>` block holding the asked-for state appears in its
//!   context, it answers from that block in a few words.
//! - `stubborn[:n]` emits `n` confusion words and ignores injected state.
//!
//! Resumed requests continue the same script after the given prefix, with
//! injected blocks removed.

use crate::prompt::parse_user_prompt;
use crate::provider::{ChatRequest, ProviderError, ScriptedProvider};
use crate::story::{parse_question, parse_story, StorySource, TemplateGrammar};
use crate::world::{self, UNKNOWN};

const CONFUSION: [&str; 5] = ["tricky", "confused", "ambiguous", "puzzling", "perplexed"];

/// Words of rambling before the final answer.
pub const RAMBLE_WORDS: usize = 1200;
/// Words before the first confusion word.
const LEAD_WORDS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Guidable { triggers: usize },
    Stubborn { triggers: usize },
}

impl Script {
    pub fn parse(name: &str) -> Result<Self, ProviderError> {
        let (base, n) = match name.split_once(':') {
            Some((b, n)) => {
                let n = n
                    .parse()
                    .map_err(|_| ProviderError::Script(format!("bad count in `{name}`")))?;
                (b, Some(n))
            }
            None => (name, None),
        };
        match base {
            "guidable" => Ok(Self::Guidable {
                triggers: n.unwrap_or(3),
            }),
            "stubborn" => Ok(Self::Stubborn {
                triggers: n.unwrap_or(5),
            }),
            other => Err(ProviderError::Script(format!("unknown script `{other}`"))),
        }
    }

    pub fn respond(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let (lines, question) = parse_user_prompt(&req.user_text())
            .ok_or_else(|| ProviderError::Script("prompt has no story/question".into()))?;
        let story = parse_story(
            "scripted",
            &lines,
            TemplateGrammar::Lenient,
            StorySource::Custom,
        )
        .map_err(|e| ProviderError::Script(e.to_string()))?;
        let (chain, object) =
            parse_question(&question).map_err(|e| ProviderError::Script(e.to_string()))?;
        let prefix = req.assistant_prefix.as_deref().unwrap_or("");

        if let Self::Guidable { .. } = self {
            if let Some(ans) = last_block(prefix).and_then(|b| lookup(b, &chain, &object)) {
                return Ok(format!(
                    " With the states laid out, the answer follows from what each person saw. Answer: {ans}"
                ));
            }
        }

        let last = world::final_snapshot(&story, chain.len())
            .map_err(|e| ProviderError::Script(e.to_string()))?;
        let truth = last
            .state
            .placements
            .get(&object)
            .map_or(UNKNOWN, |p| p.container.as_str());
        let triggers = match self {
            Self::Guidable { triggers } | Self::Stubborn { triggers } => *triggers,
        };
        let spacing = match self {
            Self::Guidable { .. } => 250,
            Self::Stubborn { .. } => 60,
        };
        let full = ramble(&lines, &question, truth, triggers, spacing);
        let seen = strip_blocks(prefix);
        Ok(match full.strip_prefix(seen.as_str()) {
            Some(rest) => rest.to_string(),
            None => full,
        })
    }
}

pub fn builtin(name: &str) -> Result<ScriptedProvider, ProviderError> {
    let script = Script::parse(name)?;
    Ok(ScriptedProvider::new(move |req| {
        Ok(crate::provider::word_chunks(&script.respond(req)?))
    }))
}

fn ramble(
    lines: &[String],
    question: &str,
    truth: &str,
    triggers: usize,
    spacing: usize,
) -> String {
    let fillers = [
        "Let me restate what happened so far.".to_string(),
        "I need to keep track of who saw each move.".to_string(),
        "Each person only knows what they saw with their own eyes.".to_string(),
        format!("The question asks: {question}"),
        "So the object might be in one place for one person and somewhere else for others."
            .to_string(),
        "I should go through the events in order once more.".to_string(),
    ];
    let mut words: Vec<String> =
        "Okay, let me read the story carefully and follow each event in order."
            .split(' ')
            .map(str::to_string)
            .collect();
    let mut next_trigger = LEAD_WORDS;
    let mut placed = 0;
    let mut i = 0;
    while words.len() < RAMBLE_WORDS {
        if placed < triggers && words.len() >= next_trigger {
            let w = CONFUSION[placed % CONFUSION.len()];
            words.extend(
                format!("Hmm, this is {w}, so let me think about it from the start.")
                    .split(' ')
                    .map(str::to_string),
            );
            placed += 1;
            next_trigger = words.len() + spacing;
            continue;
        }
        let sentence = if i % 2 == 0 && !lines.is_empty() {
            format!("Earlier: {}", lines[(i / 2) % lines.len()].trim())
        } else {
            fillers[(i / 2) % fillers.len()].clone()
        };
        words.extend(sentence.split_whitespace().map(str::to_string));
        i += 1;
    }
    words.push(format!("Answer: {truth}"));
    words.join(" ")
}

/// Removes injected `\n<information>...</information>\n` blocks.
pub fn strip_blocks(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("<information>") {
        let Some(end) = rest[start..].find("</information>") else {
            break;
        };
        let before = &rest[..start];
        out.push_str(before.strip_suffix('\n').unwrap_or(before));
        rest = &rest[start + end + "</information>".len()..];
        rest = rest.strip_prefix('\n').unwrap_or(rest);
    }
    out.push_str(rest);
    out
}

fn last_block(text: &str) -> Option<&str> {
    let start = text.rfind("<information>")?;
    let end = text[start..].find("</information>")? + start;
    Some(&text[start..end])
}

/// Finds the asked-for state in a rendered block.
fn lookup(block: &str, chain: &[String], object: &str) -> Option<String> {
    let chain = world::collapse_chain(chain);
    for line in block.lines() {
        let mut parts = line.splitn(3, " | ");
        let (_, kind, body) = (parts.next()?, parts.next(), parts.next());
        let (Some(kind), Some(body)) = (kind, body) else {
            continue;
        };
        if chain.is_empty() && kind == "objective" {
            if let Some(rest) = body.strip_prefix(&format!("{object} in ")) {
                return rest.split(" (").next().map(str::to_string);
            }
        }
        if !chain.is_empty() && kind == "belief" {
            let want = format!("{} -> {object} in ", chain.join(" -> "));
            if let Some(rest) = body.strip_prefix(&want) {
                return Some(rest.to_string());
            }
        }
    }
    None
}
