//! Trigger-driven world-state injection for theory-of-mind reasoning.
//!
//! A reasoning model streams its chain of thought; when it voices
//! confusion ("tricky", "confused", ...) the trace is cut after the word,
//! a compact rendering of the story's world state is appended, and
//! generation resumes from the extended prefix.

pub mod analyzer;
pub mod gen;
pub mod harness;
pub mod orchestrator;
pub mod prompt;
pub mod provider;
pub mod scripts;
pub mod story;
pub mod text;
pub mod trigger;
pub mod world;

/// Word scores in double precision.
pub type WordScore = analyzer::WordScore<f64>;
/// Word scores in single precision.
pub type WordScoreF32 = analyzer::WordScore<f32>;
/// Lexicon comparison scores in double precision.
pub type LexiconScore = analyzer::LexiconScore<f64>;
