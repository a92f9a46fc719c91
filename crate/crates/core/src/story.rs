//! Narrative domain: entities, events, stories and questions, plus the
//! template grammar that turns story text into events.
//!
//! The grammar has one production per event kind with a fixed verb lexicon:
//!
//! | kind              | surface form                                              |
//! |-------------------|-----------------------------------------------------------|
//! | enter             | `Alice entered the kitchen.`                              |
//! | exit              | `Alice exited the kitchen.`                               |
//! | initial placement | `The apple is in the refrigerator.` (optional `in the <room>`) |
//! | move              | `Bob moved the apple to the basket.`                      |
//! | private tell      | `Bob privately told Carol that the apple is in the cellar.` |
//! | public tell       | `Bob publicly claimed that the apple is in the cellar.`   |
//! | distraction       | `Carol got distracted.`                                   |
//!
//! Matching is case-insensitive and articles are ignored. The lenient
//! grammar additionally keeps unrecognised lines as no-op ambient events.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{normalize_phrase, title_case};
use crate::world::WorldState;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoryError {
    #[error("story has no lines")]
    EmptyStory,
    #[error("line {0} matches no production")]
    UnparseableLine(usize),
    #[error("event {t} is inconsistent with the world state: {reason}")]
    InconsistentEvent { t: usize, reason: String },
    #[error("unknown template grammar `{0}`")]
    UnknownGrammar(String),
    #[error("invalid entity name `{0}`")]
    InvalidName(String),
    #[error("question not understood: {0}")]
    UnparseableQuestion(String),
    #[error("record schema error at `{0}`")]
    AdapterSchemaError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Agent,
    Object,
    Container,
    Room,
}

/// A typed, case-normalized entity name. Agents are title-cased, everything
/// else is lowercase with articles removed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    kind: EntityKind,
    name: String,
}

impl EntityId {
    pub fn new(kind: EntityKind, raw: &str) -> Result<Self, StoryError> {
        let name = normalize_name(kind, raw);
        if name.is_empty() {
            return Err(StoryError::InvalidName(raw.to_string()));
        }
        Ok(Self { kind, name })
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

pub fn normalize_name(kind: EntityKind, raw: &str) -> String {
    let phrase = normalize_phrase(raw);
    match kind {
        EntityKind::Agent => phrase
            .split(' ')
            .map(title_case)
            .collect::<Vec<_>>()
            .join(" "),
        _ => phrase,
    }
}

/// Entities mentioned in a story, one set per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTable {
    pub agents: BTreeSet<String>,
    pub objects: BTreeSet<String>,
    pub containers: BTreeSet<String>,
    pub rooms: BTreeSet<String>,
}

impl EntityTable {
    pub fn insert(&mut self, id: &EntityId) {
        self.set_mut(id.kind).insert(id.name.clone());
    }

    pub fn contains(&self, kind: EntityKind, name: &str) -> bool {
        self.set(kind).contains(name)
    }

    pub fn set(&self, kind: EntityKind) -> &BTreeSet<String> {
        match kind {
            EntityKind::Agent => &self.agents,
            EntityKind::Object => &self.objects,
            EntityKind::Container => &self.containers,
            EntityKind::Room => &self.rooms,
        }
    }

    fn set_mut(&mut self, kind: EntityKind) -> &mut BTreeSet<String> {
        match kind {
            EntityKind::Agent => &mut self.agents,
            EntityKind::Object => &mut self.objects,
            EntityKind::Container => &mut self.containers,
            EntityKind::Room => &mut self.rooms,
        }
    }

    fn record(&mut self, kind: &EventKind) {
        let mut add = |k: EntityKind, n: &str| {
            self.set_mut(k).insert(n.to_string());
        };
        use EntityKind::*;
        match kind {
            EventKind::Enter { agent, room } | EventKind::Exit { agent, room } => {
                add(Agent, agent);
                add(Room, room);
            }
            EventKind::InitialPlacement {
                object,
                container,
                room,
            } => {
                add(Object, object);
                add(Container, container);
                add(Room, room);
            }
            EventKind::Move {
                agent,
                object,
                from,
                to,
            } => {
                add(Agent, agent);
                add(Object, object);
                add(Container, from);
                add(Container, to);
            }
            EventKind::PrivateTell {
                speaker,
                listener,
                object,
                claimed,
            } => {
                add(Agent, speaker);
                add(Agent, listener);
                add(Object, object);
                add(Container, claimed);
            }
            EventKind::PublicTell {
                speaker,
                room,
                object,
                claimed,
            } => {
                add(Agent, speaker);
                add(Room, room);
                add(Object, object);
                add(Container, claimed);
            }
            EventKind::Distracted { agent, .. } => add(Agent, agent),
            EventKind::Ambient => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Enter {
        agent: String,
        room: String,
    },
    Exit {
        agent: String,
        room: String,
    },
    InitialPlacement {
        object: String,
        container: String,
        room: String,
    },
    Move {
        agent: String,
        object: String,
        from: String,
        to: String,
    },
    PrivateTell {
        speaker: String,
        listener: String,
        object: String,
        claimed: String,
    },
    PublicTell {
        speaker: String,
        room: String,
        object: String,
        claimed: String,
    },
    Distracted {
        agent: String,
        t_start: usize,
    },
    /// Scene description with no effect on state (weather and the like).
    Ambient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub kind: EventKind,
    pub raw: String,
}

impl Event {
    /// Canonical one-line summary used in rendered timelines.
    pub fn summary(&self) -> String {
        match &self.kind {
            EventKind::Enter { agent, room } => format!("{agent} entered the {room}"),
            EventKind::Exit { agent, room } => format!("{agent} exited the {room}"),
            EventKind::InitialPlacement {
                object,
                container,
                room,
            } => {
                format!("the {object} is in the {container} ({room})")
            }
            EventKind::Move {
                agent,
                object,
                from,
                to,
            } => {
                format!("{agent} moved the {object} from the {from} to the {to}")
            }
            EventKind::PrivateTell {
                speaker,
                listener,
                object,
                claimed,
            } => {
                format!("{speaker} privately told {listener} that the {object} is in the {claimed}")
            }
            EventKind::PublicTell {
                speaker,
                room,
                object,
                claimed,
            } => {
                format!("{speaker} publicly claimed in the {room} that the {object} is in the {claimed}")
            }
            EventKind::Distracted { agent, .. } => format!("{agent} got distracted"),
            EventKind::Ambient => self.raw.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorySource {
    Generated,
    Tomi,
    Hitom,
    Exploretom,
    Custom,
}

impl StorySource {
    pub fn from_dataset(name: &str) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "generated" => Self::Generated,
            "tomi" => Self::Tomi,
            "hitom" | "hi-tom" => Self::Hitom,
            "exploretom" | "explore-tom" => Self::Exploretom,
            _ => Self::Custom,
        }
    }

    /// Grammar used for stories from this source.
    pub fn grammar(self) -> TemplateGrammar {
        match self {
            Self::Generated | Self::Tomi | Self::Hitom => TemplateGrammar::Strict,
            Self::Exploretom | Self::Custom => TemplateGrammar::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub id: String,
    pub entities: EntityTable,
    pub events: Vec<Event>,
    pub source: StorySource,
}

impl Story {
    /// Source lines, one per event, exactly as parsed.
    pub fn render(&self) -> Vec<String> {
        self.events.iter().map(|e| e.raw.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateGrammar {
    /// Every line must match a production.
    Strict,
    /// Unmatched lines become ambient events.
    Lenient,
}

impl TemplateGrammar {
    pub fn from_id(id: &str) -> Result<Self, StoryError> {
        match id.to_ascii_lowercase().as_str() {
            "strict" | "tomi" | "hitom" | "generated" => Ok(Self::Strict),
            "lenient" | "exploretom" | "custom" => Ok(Self::Lenient),
            other => Err(StoryError::UnknownGrammar(other.to_string())),
        }
    }
}

impl fmt::Display for TemplateGrammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strict => "strict",
            Self::Lenient => "lenient",
        })
    }
}

/// A production match before room/container resolution.
enum Parsed {
    Enter(String, String),
    Exit(String, String),
    Place(String, String, Option<String>),
    Move(String, String, String),
    PrivateTell(String, String, String, String),
    PublicTell(String, String, String),
    Distracted(String),
}

struct Productions {
    enter: Regex,
    exit: Regex,
    private_tell: Regex,
    public_tell: Regex,
    moved: Regex,
    distracted: Regex,
    place: Regex,
}

fn productions() -> &'static Productions {
    static P: OnceLock<Productions> = OnceLock::new();
    P.get_or_init(|| Productions {
        enter: Regex::new(r"^(\S+) entered (.+)$").unwrap(),
        exit: Regex::new(r"^(\S+) (?:exited|left) (.+)$").unwrap(),
        private_tell: Regex::new(r"^(\S+) privately told (\S+) that (.+?) is in (.+)$").unwrap(),
        public_tell: Regex::new(r"^(\S+) publicly claimed that (.+?) is in (.+)$").unwrap(),
        moved: Regex::new(r"^(\S+) moved (.+?) to (.+)$").unwrap(),
        distracted: Regex::new(r"^(\S+) got distracted$").unwrap(),
        place: Regex::new(r"^(.+?) (?:is|are) in (.+?)(?: in (.+))?$").unwrap(),
    })
}

/// Strips an optional leading line number ("12 Alice entered ...").
pub fn strip_line_number(line: &str) -> &str {
    let t = line.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && t[digits..].starts_with(' ') {
        t[digits..].trim_start()
    } else {
        line
    }
}

fn match_line(line: &str) -> Option<Parsed> {
    let body = line.trim().trim_end_matches(['.', '!', ';']);
    let norm = normalize_phrase(body);
    if norm.is_empty() {
        return None;
    }
    let p = productions();
    let cap = |re: &Regex| re.captures(&norm);
    let s = |c: &regex::Captures<'_>, i: usize| c[i].to_string();
    if let Some(c) = cap(&p.private_tell) {
        return Some(Parsed::PrivateTell(s(&c, 1), s(&c, 2), s(&c, 3), s(&c, 4)));
    }
    if let Some(c) = cap(&p.public_tell) {
        return Some(Parsed::PublicTell(s(&c, 1), s(&c, 2), s(&c, 3)));
    }
    if let Some(c) = cap(&p.moved) {
        return Some(Parsed::Move(s(&c, 1), s(&c, 2), s(&c, 3)));
    }
    if let Some(c) = cap(&p.distracted) {
        return Some(Parsed::Distracted(s(&c, 1)));
    }
    if let Some(c) = cap(&p.enter) {
        return Some(Parsed::Enter(s(&c, 1), s(&c, 2)));
    }
    if let Some(c) = cap(&p.exit) {
        return Some(Parsed::Exit(s(&c, 1), s(&c, 2)));
    }
    if let Some(c) = cap(&p.place) {
        return Some(Parsed::Place(
            s(&c, 1),
            s(&c, 2),
            c.get(3).map(|m| m.as_str().to_string()),
        ));
    }
    None
}

/// Parses templated story lines into a replay-safe [`Story`]. Blank lines are
/// skipped; line numbers in errors are 1-based positions in `lines`.
pub fn parse_story<S: AsRef<str>>(
    id: &str,
    lines: &[S],
    grammar: TemplateGrammar,
    source: StorySource,
) -> Result<Story, StoryError> {
    if lines.iter().all(|l| l.as_ref().trim().is_empty()) {
        return Err(StoryError::EmptyStory);
    }
    let mut state = WorldState::default();
    let mut entities = EntityTable::default();
    let mut events = Vec::new();
    let mut scene_room: Option<String> = None;

    for (i, line) in lines.iter().enumerate() {
        let raw = strip_line_number(line.as_ref());
        if raw.trim().is_empty() {
            continue;
        }
        let t = events.len() + 1;
        let inconsistent = |reason: String| StoryError::InconsistentEvent { t, reason };
        let kind = match match_line(raw) {
            None if grammar == TemplateGrammar::Lenient => EventKind::Ambient,
            None => return Err(StoryError::UnparseableLine(i + 1)),
            Some(parsed) => resolve(parsed, &state, scene_room.as_deref()).map_err(inconsistent)?,
        };
        if let EventKind::Enter { room, .. } = &kind {
            scene_room = Some(room.clone());
        }
        state.apply(&kind).map_err(inconsistent)?;
        state.t = t;
        entities.record(&kind);
        events.push(Event {
            t,
            kind,
            raw: raw.to_string(),
        });
    }

    Ok(Story {
        id: id.to_string(),
        entities,
        events,
        source,
    })
}

fn resolve(
    parsed: Parsed,
    state: &WorldState,
    scene_room: Option<&str>,
) -> Result<EventKind, String> {
    use EntityKind::*;
    let agent = |s: &str| normalize_name(Agent, s);
    let thing = |k: EntityKind, s: &str| normalize_name(k, s);
    Ok(match parsed {
        Parsed::Enter(a, r) => EventKind::Enter {
            agent: agent(&a),
            room: thing(Room, &r),
        },
        Parsed::Exit(a, r) => EventKind::Exit {
            agent: agent(&a),
            room: thing(Room, &r),
        },
        Parsed::Place(o, c, r) => {
            let container = thing(Container, &c);
            let room = match r {
                Some(r) => thing(Room, &r),
                None => match state.containers.get(&container) {
                    Some(room) => room.clone(),
                    None => scene_room
                        .ok_or_else(|| format!("no room known for container `{container}`"))?
                        .to_string(),
                },
            };
            EventKind::InitialPlacement {
                object: thing(Object, &o),
                container,
                room,
            }
        }
        Parsed::Move(a, o, to) => {
            let object = thing(Object, &o);
            let from = state
                .placements
                .get(&object)
                .map(|p| p.container.clone())
                .ok_or_else(|| format!("`{object}` was never placed"))?;
            EventKind::Move {
                agent: agent(&a),
                object,
                from,
                to: thing(Container, &to),
            }
        }
        Parsed::PrivateTell(s, l, o, c) => EventKind::PrivateTell {
            speaker: agent(&s),
            listener: agent(&l),
            object: thing(Object, &o),
            claimed: thing(Container, &c),
        },
        Parsed::PublicTell(s, o, c) => {
            let speaker = agent(&s);
            let room = state
                .agent_rooms
                .get(&speaker)
                .cloned()
                .flatten()
                .ok_or_else(|| format!("{speaker} is not in any room"))?;
            EventKind::PublicTell {
                speaker,
                room,
                object: thing(Object, &o),
                claimed: thing(Container, &c),
            }
        }
        Parsed::Distracted(a) => EventKind::Distracted {
            agent: agent(&a),
            t_start: state.t + 1,
        },
    })
}

/// A theory-of-mind question over one story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub story_id: String,
    pub order: usize,
    pub chain: Vec<String>,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub text: String,
}

impl Question {
    pub fn new(story_id: &str, chain: Vec<String>, object: &str) -> Self {
        let chain: Vec<String> = chain
            .iter()
            .map(|a| normalize_name(EntityKind::Agent, a))
            .collect();
        let object = normalize_name(EntityKind::Object, object);
        let text = question_text(&chain, &object);
        Self {
            story_id: story_id.to_string(),
            order: chain.len(),
            chain,
            object,
            choices: None,
            gold: None,
            text,
        }
    }
}

/// Canonical surface form: "Where is the apple really?" for order 0,
/// "Where does Alice think Bob thinks the apple is?" for order 2.
pub fn question_text(chain: &[String], object: &str) -> String {
    match chain.split_first() {
        None => format!("Where is the {object} really?"),
        Some((first, rest)) => {
            let mut s = format!("Where does {first} think ");
            for a in rest {
                s.push_str(a);
                s.push_str(" thinks ");
            }
            s.push_str(&format!("the {object} is?"));
            s
        }
    }
}

struct QuestionPatterns {
    objective: Regex,
    nested: Regex,
    thinks: Regex,
    tail: Regex,
    look: Regex,
}

fn question_patterns() -> &'static QuestionPatterns {
    static P: OnceLock<QuestionPatterns> = OnceLock::new();
    P.get_or_init(|| QuestionPatterns {
        objective: Regex::new(r"^where is (.+?)(?: really)?$").unwrap(),
        nested: Regex::new(r"^where (?:does|do|did) (\S+) think (.+)$").unwrap(),
        thinks: Regex::new(r"^(\S+) (?:thinks|think) (.+)$").unwrap(),
        tail: Regex::new(r"^(.+?) (?:is|was)$").unwrap(),
        look: Regex::new(r"^where will (\S+) look for (.+)$").unwrap(),
    })
}

/// Parses a question into (chain, object).
pub fn parse_question(text: &str) -> Result<(Vec<String>, String), StoryError> {
    let body = text.trim().trim_end_matches(['?', '.']);
    let norm = normalize_phrase(body);
    let p = question_patterns();
    let err = || StoryError::UnparseableQuestion(text.to_string());
    let agent = |s: &str| normalize_name(EntityKind::Agent, s);
    let object = |s: &str| normalize_name(EntityKind::Object, s);

    if let Some(c) = p.look.captures(&norm) {
        return Ok((vec![agent(&c[1])], object(&c[2])));
    }
    if let Some(c) = p.nested.captures(&norm) {
        let mut chain = vec![agent(&c[1])];
        let mut rest = c[2].to_string();
        loop {
            if let Some(t) = p.tail.captures(&rest) {
                // "bob thinks apple is" also matches the tail pattern, so only
                // accept the tail when no further "thinks" clause follows.
                if !p.thinks.is_match(&rest) {
                    return Ok((chain, object(&t[1])));
                }
            }
            match p.thinks.captures(&rest) {
                Some(t) => {
                    chain.push(agent(&t[1]));
                    rest = t[2].to_string();
                }
                None => return Err(err()),
            }
        }
    }
    if let Some(c) = p.objective.captures(&norm) {
        return Ok((Vec::new(), object(&c[1])));
    }
    Err(err())
}

/// One line of the normalized item JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub story: Vec<String>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub answer: String,
    pub dataset: String,
}

impl Item {
    /// Parses the item's story and question with the grammar implied by its
    /// dataset.
    pub fn to_story_question(&self) -> Result<(Story, Question), StoryError> {
        let source = StorySource::from_dataset(&self.dataset);
        let story = parse_story(&self.id, &self.story, source.grammar(), source)?;
        let (chain, object) = parse_question(&self.question)?;
        let choices = self
            .choices
            .as_ref()
            .map(|cs| cs.iter().map(|c| normalize_answer(c)).collect::<Vec<_>>());
        let gold = normalize_answer(&self.answer);
        if let Some(cs) = &choices {
            if !cs.contains(&gold) {
                return Err(StoryError::AdapterSchemaError("answer".into()));
            }
        }
        let q = Question {
            story_id: self.id.clone(),
            order: chain.len(),
            chain,
            object,
            choices,
            gold: Some(gold),
            text: self.question.clone(),
        };
        Ok((story, q))
    }
}

/// Lowercase, trimmed, article-free form used to compare answers.
pub fn normalize_answer(s: &str) -> String {
    normalize_phrase(s.trim().trim_end_matches(['.', '!']))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    Tomi,
    Hitom,
    Exploretom,
}

impl Adapter {
    pub fn dataset(self) -> &'static str {
        match self {
            Self::Tomi => "tomi",
            Self::Hitom => "hitom",
            Self::Exploretom => "exploretom",
        }
    }
}

/// Projects an upstream dataset record (`id`, `story`, `question`,
/// `choices`, `answer`) onto the normalized item schema.
pub fn normalize_record(raw: &Value, adapter: Adapter) -> Result<Item, StoryError> {
    let schema = |p: &str| StoryError::AdapterSchemaError(p.to_string());
    let obj = raw.as_object().ok_or_else(|| schema("$"))?;
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(schema("id")),
    };
    let story: Vec<String> = match obj.get("story") {
        Some(Value::String(s)) => split_story(s),
        Some(Value::Array(lines)) => lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.as_str()
                    .map(|s| strip_line_number(s).to_string())
                    .ok_or_else(|| schema(&format!("story[{i}]")))
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(schema("story")),
    };
    let question = obj
        .get("question")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("question"))?
        .to_string();
    let answer = obj
        .get("answer")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("answer"))?
        .to_string();
    let choices = match obj.get("choices") {
        None | Some(Value::Null) => None,
        Some(Value::Array(cs)) => Some(
            cs.iter()
                .enumerate()
                .map(|(i, c)| {
                    c.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| schema(&format!("choices[{i}]")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err(schema("choices")),
    };
    Ok(Item {
        id,
        story,
        question,
        choices,
        answer: normalize_answer(&answer),
        dataset: adapter.dataset().into(),
    })
}

/// Normalizes a record and parses it in one go.
pub fn normalize_item(raw: &Value, adapter: Adapter) -> Result<(Story, Question), StoryError> {
    normalize_record(raw, adapter)?.to_story_question()
}

/// Splits a story given as one string into lines: on newlines when present,
/// else on sentence ends.
fn split_story(s: &str) -> Vec<String> {
    let lines: Vec<&str> = s.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let pieces: Vec<String> = if lines.len() > 1 {
        lines.into_iter().map(str::to_string).collect()
    } else {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in s.trim().chars() {
            cur.push(ch);
            if matches!(ch, '.' | '!') {
                out.push(std::mem::take(&mut cur).trim().to_string());
            }
        }
        if !cur.trim().is_empty() {
            out.push(cur.trim().to_string());
        }
        out
    };
    pieces
        .iter()
        .map(|l| strip_line_number(l).to_string())
        .collect()
}
