//! Intervention-word lexicons and a streaming detector that finds them in
//! generated text regardless of how the stream is chunked.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::is_word_char;

/// Words that mark a confused reasoning state.
pub const OURS: [&str; 15] = [
    "ambiguous",
    "complicating",
    "confusion",
    "confusing",
    "confused",
    "perplexity",
    "puzzle",
    "puzzled",
    "puzzling",
    "perplexed",
    "complication",
    "troubled",
    "tricky",
    "conflicts",
    "ambiguity",
];

/// Verification-style interruption words.
pub const PAUSE_VALIDATION: [&str; 10] = [
    "wait",
    "check",
    "make sure",
    "hold on",
    "verify",
    "let me see",
    "confirm",
    "ensure",
    "evaluate",
    "examine",
];

/// Branching-style interruption words.
pub const BRANCH_EXTENSION: [&str; 10] = [
    "alternatively",
    "another",
    "instead",
    "however",
    "while",
    "yet",
    "though",
    "rather",
    "otherwise",
    "on the other hand",
];

const OPEN_TAG: &str = "<information>";
const CLOSE_TAG: &str = "</information>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon is empty")]
    Empty,
    #[error("duplicate lexicon entry `{0}`")]
    Duplicate(String),
    #[error("unknown lexicon `{0}`")]
    Unknown(String),
    #[error("cannot read lexicon: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconName {
    Ours,
    PauseValidation,
    BranchExtension,
    Custom,
}

impl FromStr for LexiconName {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ours" => Ok(Self::Ours),
            "pv" | "pause_validation" | "pause-validation" => Ok(Self::PauseValidation),
            "be" | "branch_extension" | "branch-extension" => Ok(Self::BranchExtension),
            "custom" => Ok(Self::Custom),
            other => Err(LexiconError::Unknown(other.to_string())),
        }
    }
}

impl fmt::Display for LexiconName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ours => "ours",
            Self::PauseValidation => "pause_validation",
            Self::BranchExtension => "branch_extension",
            Self::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerLexicon {
    pub name: LexiconName,
    entries: Vec<String>,
}

impl TriggerLexicon {
    /// Entries are trimmed, lowercased and whitespace-collapsed; they must be
    /// non-empty and unique.
    pub fn new<S: AsRef<str>>(name: LexiconName, entries: &[S]) -> Result<Self, LexiconError> {
        let mut out: Vec<String> = Vec::with_capacity(entries.len());
        for e in entries {
            let norm = e
                .as_ref()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase();
            if norm.is_empty() {
                continue;
            }
            if out.contains(&norm) {
                return Err(LexiconError::Duplicate(norm));
            }
            out.push(norm);
        }
        if out.is_empty() {
            return Err(LexiconError::Empty);
        }
        Ok(Self { name, entries: out })
    }

    pub fn builtin(name: LexiconName) -> Result<Self, LexiconError> {
        match name {
            LexiconName::Ours => Self::new(name, &OURS),
            LexiconName::PauseValidation => Self::new(name, &PAUSE_VALIDATION),
            LexiconName::BranchExtension => Self::new(name, &BRANCH_EXTENSION),
            LexiconName::Custom => Err(LexiconError::Unknown("custom".into())),
        }
    }

    pub fn ours() -> Self {
        Self::builtin(LexiconName::Ours).expect("built-in lexicon is valid")
    }

    /// Reads one entry per line; blank lines and `#` comments are skipped.
    pub fn parse(name: LexiconName, text: &str) -> Result<Self, LexiconError> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::new(name, &lines)
    }

    pub fn load(name: LexiconName, path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LexiconError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(name, &text)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn dump(&self) -> String {
        let mut s = self.entries.join("\n");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub word: String,
    /// Byte span `[start, end)` in the accumulated text.
    pub char_span: (usize, usize),
    /// 1-based index among triggers detected in this stream.
    pub ordinal: usize,
}

#[derive(Debug, Clone)]
struct Word {
    start: usize,
    end: usize,
    lower: String,
}

/// Per-stream detector. Feed chunks in order; call [`finish`] at end of
/// stream to resolve a trailing word.
///
/// A word is resolved once the character after it is known, so the emitted
/// events depend only on the concatenated text. Text between an
/// `<information>` tag and its closing tag never triggers.
///
/// [`finish`]: TriggerDetector::finish
#[derive(Debug, Clone)]
pub struct TriggerDetector {
    entries: Vec<Vec<String>>,
    text: String,
    /// Byte offset where tokenization resumes.
    scan: usize,
    /// Complete words awaiting a match decision.
    queue: Vec<Word>,
    /// Tag positions: (start, is_open).
    tags: Vec<(usize, bool)>,
    tag_scan: usize,
    /// End offsets of emitted events.
    emitted: Vec<usize>,
    finished: bool,
}

impl TriggerDetector {
    pub fn new(lexicon: &TriggerLexicon) -> Self {
        let mut entries: Vec<Vec<String>> = lexicon
            .entries()
            .iter()
            .map(|e| e.split(' ').map(str::to_string).collect())
            .collect();
        // Longest entries first so a phrase wins over its own prefix.
        entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Self {
            entries,
            text: String::new(),
            scan: 0,
            queue: Vec::new(),
            tags: Vec::new(),
            tag_scan: 0,
            emitted: Vec::new(),
            finished: false,
        }
    }

    /// A detector that never fires, for baseline runs.
    pub fn disabled() -> Self {
        Self {
            entries: Vec::new(),
            text: String::new(),
            scan: 0,
            queue: Vec::new(),
            tags: Vec::new(),
            tag_scan: 0,
            emitted: Vec::new(),
            finished: false,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Appends a generated chunk and returns the triggers it completes.
    pub fn feed(&mut self, chunk: &str) -> Vec<TriggerEvent> {
        self.text.push_str(chunk);
        self.scan_tags();
        self.tokenize();
        self.resolve()
    }

    /// Marks end of stream and returns any trigger that ends the text.
    pub fn finish(&mut self) -> Vec<TriggerEvent> {
        self.finished = true;
        self.tokenize();
        self.resolve()
    }

    /// Appends text that is not model output (an injected block). Any
    /// detections it causes are dropped.
    pub fn push_injected(&mut self, text: &str) {
        self.feed(text);
    }

    /// Cuts the accumulated text back to `offset` (a char boundary at or
    /// after every emitted event's end), so generation can resume from it.
    pub fn truncate(&mut self, offset: usize) {
        self.text.truncate(offset);
        self.queue.retain(|w| w.end <= offset);
        self.scan = self.scan.min(offset);
        self.tags.retain(|(p, open)| p + tag_len(*open) <= offset);
        self.tag_scan = floor_boundary(
            &self.text,
            self.tag_scan.min(offset.saturating_sub(CLOSE_TAG.len())),
        );
        self.emitted.retain(|end| *end <= offset);
        self.finished = false;
    }

    fn scan_tags(&mut self) {
        let mut pos = self.tag_scan;
        loop {
            let rest = &self.text[pos..];
            let open = rest.find(OPEN_TAG);
            let close = rest.find(CLOSE_TAG);
            let hit = match (open, close) {
                (Some(o), Some(c)) if c < o => Some((c, false)),
                (Some(o), _) => Some((o, true)),
                (None, Some(c)) => Some((c, false)),
                (None, None) => None,
            };
            match hit {
                Some((p, is_open)) => {
                    self.tags.push((pos + p, is_open));
                    pos += p + tag_len(is_open);
                }
                None => break,
            }
        }
        let floor = self.text.len().saturating_sub(CLOSE_TAG.len() - 1);
        self.tag_scan = floor_boundary(&self.text, pos.max(floor));
    }

    fn suppressed(&self, at: usize) -> bool {
        self.tags
            .iter()
            .rev()
            .find(|(p, _)| *p < at)
            .is_some_and(|(_, open)| *open)
    }

    fn tokenize(&mut self) {
        let text = &self.text;
        let mut word_start: Option<usize> = None;
        for (off, ch) in text[self.scan..].char_indices() {
            let at = self.scan + off;
            if is_word_char(ch) {
                word_start.get_or_insert(at);
            } else if let Some(start) = word_start.take() {
                self.queue.push(Word {
                    start,
                    end: at,
                    lower: text[start..at].to_lowercase(),
                });
            }
        }
        self.scan = match word_start {
            Some(start) if self.finished => {
                let end = text.len();
                self.queue.push(Word {
                    start,
                    end,
                    lower: text[start..end].to_lowercase(),
                });
                end
            }
            // Trailing word may continue in the next chunk.
            Some(start) => start,
            None => text.len(),
        };
    }

    fn resolve(&mut self) -> Vec<TriggerEvent> {
        let mut out = Vec::new();
        while !self.queue.is_empty() {
            let mut matched: Option<usize> = None;
            let mut waiting = false;
            // Entries are sorted longest first, so an undecided entry seen
            // before a full match is a longer candidate that must win.
            for entry in &self.entries {
                match self.match_at(entry) {
                    Some(true) => {
                        matched = Some(entry.len());
                        break;
                    }
                    None => waiting = true,
                    Some(false) => {}
                }
            }
            if waiting {
                break;
            }
            match matched {
                Some(n) if !self.suppressed(self.queue[0].start) => {
                    let start = self.queue[0].start;
                    let end = self.queue[n - 1].end;
                    self.emitted.push(end);
                    out.push(TriggerEvent {
                        word: self.text[start..end].to_lowercase(),
                        char_span: (start, end),
                        ordinal: self.emitted.len(),
                    });
                    self.queue.drain(..n);
                }
                _ => {
                    self.queue.remove(0);
                }
            }
        }
        out
    }

    /// `Some(true)` on a full match at the queue head, `Some(false)` on a
    /// mismatch, `None` when more words are needed to decide.
    fn match_at(&self, entry: &[String]) -> Option<bool> {
        for (j, word) in entry.iter().enumerate() {
            let Some(w) = self.queue.get(j) else {
                return if self.finished { Some(false) } else { None };
            };
            if &w.lower != word {
                return Some(false);
            }
            if j > 0 {
                let prev = &self.queue[j - 1];
                if w.start != prev.end + 1 || &self.text[prev.end..w.start] != " " {
                    return Some(false);
                }
            }
        }
        Some(true)
    }
}

fn tag_len(open: bool) -> usize {
    if open {
        OPEN_TAG.len()
    } else {
        CLOSE_TAG.len()
    }
}

fn floor_boundary(s: &str, mut i: usize) -> usize {
    i = i.min(s.len());
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Runs a detector over a complete text.
pub fn detect_all(lexicon: &TriggerLexicon, text: &str) -> Vec<TriggerEvent> {
    let mut d = TriggerDetector::new(lexicon);
    let mut events = d.feed(text);
    events.extend(d.finish());
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionPolicy {
    /// Maximum interventions per item.
    pub k: usize,
    /// Generated tokens required since the last accepted trigger.
    pub min_gap: u64,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        Self { k: 3, min_gap: 20 }
    }
}

/// Applies an [`InterventionPolicy`] to a stream of trigger events.
#[derive(Debug, Clone)]
pub struct Acceptor {
    policy: InterventionPolicy,
    accepted: usize,
    last_token: Option<u64>,
}

impl Acceptor {
    pub fn new(policy: InterventionPolicy) -> Self {
        Self {
            policy,
            accepted: 0,
            last_token: None,
        }
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    /// `token_pos` is the number of tokens generated when the trigger was
    /// seen.
    pub fn accept(&mut self, _event: &TriggerEvent, token_pos: u64) -> bool {
        if self.accepted >= self.policy.k {
            return false;
        }
        if let Some(last) = self.last_token {
            if token_pos.saturating_sub(last) < self.policy.min_gap {
                return false;
            }
        }
        self.accepted += 1;
        self.last_token = Some(token_pos);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(events: &[TriggerEvent]) -> Vec<&str> {
        events.iter().map(|e| e.word.as_str()).collect()
    }

    #[test]
    fn ours_has_fifteen_words() {
        let l = TriggerLexicon::ours();
        assert_eq!(l.entries().len(), 15);
        assert!(l.entries().iter().all(|e| *e == e.to_lowercase()));
    }

    #[test]
    fn fires_when_word_completes() {
        let mut d = TriggerDetector::new(&TriggerLexicon::ours());
        let ev = d.feed("This is getting tricky, so");
        assert_eq!(words(&ev), vec!["tricky"]);
        assert_eq!(ev[0].char_span, (16, 22));
    }

    #[test]
    fn split_word_is_joined() {
        let mut d = TriggerDetector::new(&TriggerLexicon::ours());
        assert!(d.feed("con").is_empty());
        let ev = d.feed("fused about it");
        assert_eq!(words(&ev), vec!["confused"]);
        assert_eq!(ev[0].char_span, (0, 8));
    }

    #[test]
    fn whole_words_only() {
        let l = TriggerLexicon::ours();
        assert!(detect_all(&l, "the conflict here").is_empty());
        assert!(detect_all(&l, "confusedly, untricky, tricky-ish").is_empty());
        assert_eq!(words(&detect_all(&l, "so TRICKY")), vec!["tricky"]);
    }

    #[test]
    fn phrases_need_single_spaces() {
        let pv = TriggerLexicon::builtin(LexiconName::PauseValidation).unwrap();
        assert_eq!(
            words(&detect_all(&pv, "Hold on, let me see.")),
            vec!["hold on", "let me see"]
        );
        assert!(detect_all(&pv, "hold  on").is_empty());
        let mut d = TriggerDetector::new(&pv);
        assert!(d.feed("make").is_empty());
        assert!(d.feed(" ").is_empty());
        assert_eq!(words(&d.feed("sure.")), vec!["make sure"]);
    }

    #[test]
    fn information_blocks_are_suppressed() {
        let l = TriggerLexicon::ours();
        let text = "tricky\n<information>\nt=1 | event | a tricky puzzle\n</information>\nconfused";
        assert_eq!(words(&detect_all(&l, text)), vec!["tricky", "confused"]);
    }

    #[test]
    fn truncate_then_continue() {
        let l = TriggerLexicon::ours();
        let mut d = TriggerDetector::new(&l);
        let ev = d.feed("it is tricky and confused");
        assert_eq!(ev.len(), 1);
        d.truncate(ev[0].char_span.1);
        d.push_injected("\n<information>\nconfused\n</information>\n");
        let ev2 = d.feed("now puzzled.");
        assert_eq!(words(&ev2), vec!["puzzled"]);
        assert_eq!(ev2[0].ordinal, 2);
    }

    #[test]
    fn lexicon_validation() {
        assert_eq!(
            TriggerLexicon::parse(LexiconName::Custom, "# none\n\n"),
            Err(LexiconError::Empty)
        );
        assert_eq!(
            TriggerLexicon::parse(LexiconName::Custom, "Wait\nwait\n"),
            Err(LexiconError::Duplicate("wait".into()))
        );
        let l = TriggerLexicon::parse(LexiconName::Custom, "Hold   On\n").unwrap();
        assert_eq!(l.entries(), ["hold on"]);
    }

    #[test]
    fn acceptor_caps_and_spaces() {
        let ev = TriggerEvent {
            word: "tricky".into(),
            char_span: (0, 6),
            ordinal: 1,
        };
        let mut a = Acceptor::new(InterventionPolicy { k: 3, min_gap: 0 });
        let accepted: Vec<bool> = (0..5).map(|i| a.accept(&ev, i * 100)).collect();
        assert_eq!(accepted, vec![true, true, true, false, false]);

        let mut none = Acceptor::new(InterventionPolicy { k: 0, min_gap: 0 });
        assert!(!none.accept(&ev, 0));

        let mut gap = Acceptor::new(InterventionPolicy { k: 5, min_gap: 20 });
        assert!(gap.accept(&ev, 10));
        assert!(!gap.accept(&ev, 15));
        assert!(gap.accept(&ev, 30));
    }
}
