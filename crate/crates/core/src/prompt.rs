//! Prompt templates for evaluation items.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::provider::Message;
use crate::story::{Question, Story};

const SYSTEM: &str =
    "You are a careful reader answering questions about who knows what in short stories.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    /// Answer with the marker, no reasoning instruction.
    Direct,
    /// Ask for step-by-step reasoning before the marker.
    #[default]
    Cot,
}

impl FromStr for PromptTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Self::Direct),
            "cot" => Ok(Self::Cot),
            other => Err(format!("unknown prompt template `{other}`")),
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::Cot => "cot",
        })
    }
}

pub fn user_prompt(template: PromptTemplate, story: &Story, q: &Question) -> String {
    let mut s = String::from("Read the story and answer the question.\n\nStory:\n");
    for line in story.render() {
        s.push_str(&line);
        s.push('\n');
    }
    s.push_str("\nQuestion: ");
    s.push_str(&q.text);
    s.push('\n');
    if let Some(choices) = &q.choices {
        s.push_str("Choices: ");
        s.push_str(&choices.join(", "));
        s.push('\n');
    }
    s.push('\n');
    if template == PromptTemplate::Cot {
        s.push_str("Think step by step. ");
    }
    s.push_str("End with 'Answer: <choice>'.");
    s
}

pub fn messages(template: PromptTemplate, story: &Story, q: &Question) -> Vec<Message> {
    vec![
        Message::system(SYSTEM),
        Message::user(user_prompt(template, story, q)),
    ]
}

/// Recovers (story lines, question text) from a prompt built by
/// [`user_prompt`].
pub fn parse_user_prompt(text: &str) -> Option<(Vec<String>, String)> {
    let story_start = text.find("Story:\n")? + "Story:\n".len();
    let q_marker = text[story_start..].find("\nQuestion: ")? + story_start;
    let lines = text[story_start..q_marker]
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let q_start = q_marker + "\nQuestion: ".len();
    let q_end = text[q_start..]
        .find('\n')
        .map_or(text.len(), |i| q_start + i);
    Some((lines, text[q_start..q_end].to_string()))
}
