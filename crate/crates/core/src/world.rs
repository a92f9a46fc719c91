//! Temporal world model: objective state, nested beliefs, and the rendered
//! `<information>` block injected into reasoning traces.
//!
//! Visibility rules:
//! - an agent witnesses an event iff it is in the event's room and attentive;
//!   the acting agent of a move always witnesses it, and an exit is also
//!   witnessed by the exiting agent;
//! - a private tell is witnessed by speaker and listener only;
//! - a distracted agent witnesses nothing until it next enters a room.
//!
//! A belief chain `(a1, .., an)` ("a1 thinks .. an thinks") is updated by an
//! event iff every agent on the chain witnesses it. For tells, chains ending
//! in the speaker are left alone and every other witnessing chain adopts the
//! claimed container. Chains never repeat an agent back to back.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{ChatProvider, ChatRequest, GenerationParams, Message, ProviderError, Role};
use crate::story::{Event, EventKind, Question, Story};
use crate::text::{find_whole_word, tail_chars};

pub const DEFAULT_MAX_ORDER: usize = 4;
/// Characters of recent reasoning scanned for entity mentions.
pub const MENTION_WINDOW: usize = 400;
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("story has no events")]
    EmptyStory,
    #[error("event {got} does not follow timestep {current}")]
    OutOfOrder { current: usize, got: usize },
    #[error("event {t} is inconsistent with the world state: {reason}")]
    InconsistentEvent { t: usize, reason: String },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub container: String,
    pub room: String,
}

/// Objective snapshot of the world.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: usize,
    pub placements: BTreeMap<String, Placement>,
    /// `None` when the agent is in no room.
    pub agent_rooms: BTreeMap<String, Option<String>>,
    pub attentive: BTreeMap<String, bool>,
    /// Room each container sits in.
    pub containers: BTreeMap<String, String>,
}

impl WorldState {
    fn room_of(&self, agent: &str) -> Option<&str> {
        self.agent_rooms.get(agent).and_then(|r| r.as_deref())
    }

    fn is_attentive(&self, agent: &str) -> bool {
        self.attentive.get(agent).copied().unwrap_or(true)
    }

    fn attentive_in(&self, room: &str) -> BTreeSet<String> {
        self.agent_rooms
            .iter()
            .filter(|(a, r)| r.as_deref() == Some(room) && self.is_attentive(a))
            .map(|(a, _)| a.clone())
            .collect()
    }

    fn know_agent(&mut self, agent: &str) {
        self.agent_rooms.entry(agent.to_string()).or_insert(None);
        self.attentive.entry(agent.to_string()).or_insert(true);
    }

    fn bind_container(&mut self, container: &str, room: &str) -> Result<(), String> {
        match self.containers.get(container) {
            Some(r) if r != room => Err(format!("the {container} is in the {r}, not the {room}")),
            Some(_) => Ok(()),
            None => {
                self.containers
                    .insert(container.to_string(), room.to_string());
                Ok(())
            }
        }
    }

    /// Agents that perceive `kind`, evaluated on the state before it applies.
    pub fn witnesses(&self, kind: &EventKind) -> BTreeSet<String> {
        match kind {
            EventKind::Enter { agent, room } => {
                let mut w = self.attentive_in(room);
                w.insert(agent.clone());
                w
            }
            EventKind::Exit { agent, room } => {
                let mut w = self.attentive_in(room);
                w.insert(agent.clone());
                w
            }
            EventKind::InitialPlacement { room, .. } => self.attentive_in(room),
            EventKind::Move { agent, object, .. } => {
                let mut w = self
                    .placements
                    .get(object)
                    .map(|p| self.attentive_in(&p.room))
                    .unwrap_or_default();
                w.insert(agent.clone());
                w
            }
            EventKind::PrivateTell {
                speaker, listener, ..
            } => [speaker.clone(), listener.clone()].into_iter().collect(),
            EventKind::PublicTell { speaker, room, .. } => {
                let mut w = self.attentive_in(room);
                w.insert(speaker.clone());
                w
            }
            EventKind::Distracted { agent, .. } => self
                .room_of(agent)
                .map(|r| self.attentive_in(r))
                .unwrap_or_default(),
            EventKind::Ambient => BTreeSet::new(),
        }
    }

    /// Applies the objective effect of an event. Does not touch `t`.
    pub fn apply(&mut self, kind: &EventKind) -> Result<(), String> {
        match kind {
            EventKind::Enter { agent, room } => {
                self.know_agent(agent);
                self.agent_rooms.insert(agent.clone(), Some(room.clone()));
                self.attentive.insert(agent.clone(), true);
            }
            EventKind::Exit { agent, room } => {
                if self.room_of(agent) != Some(room.as_str()) {
                    return Err(format!("{agent} is not in the {room}"));
                }
                self.agent_rooms.insert(agent.clone(), None);
            }
            EventKind::InitialPlacement {
                object,
                container,
                room,
            } => {
                if self.placements.contains_key(object) {
                    return Err(format!("the {object} is already placed"));
                }
                self.bind_container(container, room)?;
                self.placements.insert(
                    object.clone(),
                    Placement {
                        container: container.clone(),
                        room: room.clone(),
                    },
                );
            }
            EventKind::Move {
                agent,
                object,
                from,
                to,
            } => {
                let Some(p) = self.placements.get(object).cloned() else {
                    return Err(format!("the {object} was never placed"));
                };
                if &p.container != from {
                    return Err(format!(
                        "the {object} is in the {}, not the {from}",
                        p.container
                    ));
                }
                if from == to {
                    return Err(format!("the {object} is already in the {to}"));
                }
                if self.room_of(agent) != Some(p.room.as_str()) {
                    return Err(format!("{agent} is not in the {}", p.room));
                }
                self.bind_container(to, &p.room)?;
                self.placements.insert(
                    object.clone(),
                    Placement {
                        container: to.clone(),
                        room: p.room,
                    },
                );
            }
            EventKind::PrivateTell {
                speaker,
                listener,
                object,
                ..
            } => {
                if speaker == listener {
                    return Err(format!("{speaker} cannot tell themselves"));
                }
                if !self.placements.contains_key(object) {
                    return Err(format!("the {object} was never placed"));
                }
                self.know_agent(speaker);
                self.know_agent(listener);
            }
            EventKind::PublicTell {
                speaker,
                room,
                object,
                ..
            } => {
                if self.room_of(speaker) != Some(room.as_str()) {
                    return Err(format!("{speaker} is not in the {room}"));
                }
                if !self.placements.contains_key(object) {
                    return Err(format!("the {object} was never placed"));
                }
            }
            EventKind::Distracted { agent, .. } => {
                if self.room_of(agent).is_none() {
                    return Err(format!("{agent} is not in any room"));
                }
                self.attentive.insert(agent.clone(), false);
            }
            EventKind::Ambient => {}
        }
        Ok(())
    }
}

/// Nested beliefs. Only known placements are stored; a missing entry means
/// the chain has no belief about the object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BeliefStateRepr", from = "BeliefStateRepr")]
pub struct BeliefState {
    pub t: usize,
    pub max_order: usize,
    beliefs: BTreeMap<Vec<String>, BTreeMap<String, String>>,
}

#[derive(Serialize, Deserialize)]
struct BeliefStateRepr {
    t: usize,
    max_order: usize,
    beliefs: Vec<BeliefEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefEntry {
    pub chain: Vec<String>,
    pub object: String,
    pub container: String,
}

impl From<BeliefState> for BeliefStateRepr {
    fn from(b: BeliefState) -> Self {
        Self {
            t: b.t,
            max_order: b.max_order,
            beliefs: b.entries().collect(),
        }
    }
}

impl From<BeliefStateRepr> for BeliefState {
    fn from(r: BeliefStateRepr) -> Self {
        let mut b = BeliefState::new(r.max_order);
        b.t = r.t;
        for e in r.beliefs {
            b.set(e.chain, e.object, e.container);
        }
        b
    }
}

impl BeliefState {
    pub fn new(max_order: usize) -> Self {
        Self {
            t: 0,
            max_order,
            beliefs: BTreeMap::new(),
        }
    }

    pub fn get(&self, chain: &[String], object: &str) -> Option<&str> {
        self.beliefs
            .get(chain)
            .and_then(|m| m.get(object))
            .map(String::as_str)
    }

    pub fn set(&mut self, chain: Vec<String>, object: String, container: String) {
        self.beliefs
            .entry(chain)
            .or_default()
            .insert(object, container);
    }

    /// All known beliefs ordered by chain length, then chain, then object.
    pub fn entries(&self) -> impl Iterator<Item = BeliefEntry> + '_ {
        let mut chains: Vec<&Vec<String>> = self.beliefs.keys().collect();
        chains.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        chains.into_iter().flat_map(move |chain| {
            self.beliefs[chain].iter().map(move |(o, c)| BeliefEntry {
                chain: chain.clone(),
                object: o.clone(),
                container: c.clone(),
            })
        })
    }

    fn update(
        &mut self,
        witnesses: &BTreeSet<String>,
        object: &str,
        container: &str,
        skip_last: Option<&str>,
    ) {
        for chain in chains_over(witnesses, self.max_order) {
            if skip_last.is_some_and(|s| chain.last().map(String::as_str) == Some(s)) {
                continue;
            }
            self.set(chain, object.to_string(), container.to_string());
        }
    }
}

/// Every chain of length 1..=max_order over `agents` with no agent repeated
/// back to back, in length-then-lexicographic order.
pub fn chains_over(agents: &BTreeSet<String>, max_order: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_order {
        let mut next = Vec::new();
        for chain in &frontier {
            for a in agents {
                if chain.last() != Some(a) {
                    let mut c = chain.clone();
                    c.push(a.clone());
                    next.push(c);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Drops back-to-back duplicates: "Alice thinks Alice thinks" is "Alice thinks".
pub fn collapse_chain(chain: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(chain.len());
    for a in chain {
        if out.last() != Some(a) {
            out.push(a.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldModelSnapshot {
    pub state: WorldState,
    pub beliefs: BeliefState,
    /// One rendered summary per event so far.
    pub timeline: Vec<String>,
}

impl WorldModelSnapshot {
    pub fn empty(max_order: usize) -> Self {
        Self {
            state: WorldState::default(),
            beliefs: BeliefState::new(max_order),
            timeline: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.state.t
    }

    pub fn agents(&self) -> BTreeSet<String> {
        self.state.agent_rooms.keys().cloned().collect()
    }

    pub fn objects(&self) -> BTreeSet<String> {
        self.state.placements.keys().cloned().collect()
    }

    /// Returns the successor snapshot; `self` is left untouched.
    pub fn step(&self, event: &Event) -> Result<Self, WorldError> {
        if event.t != self.t() + 1 {
            return Err(WorldError::OutOfOrder {
                current: self.t(),
                got: event.t,
            });
        }
        let witnesses = self.state.witnesses(&event.kind);
        let mut next = self.clone();
        next.state
            .apply(&event.kind)
            .map_err(|reason| WorldError::InconsistentEvent { t: event.t, reason })?;
        next.state.t = event.t;
        next.beliefs.t = event.t;
        match &event.kind {
            EventKind::InitialPlacement {
                object, container, ..
            }
            | EventKind::Move {
                object,
                to: container,
                ..
            } => {
                next.beliefs.update(&witnesses, object, container, None);
            }
            EventKind::PrivateTell {
                speaker,
                object,
                claimed,
                ..
            }
            | EventKind::PublicTell {
                speaker,
                object,
                claimed,
                ..
            } => {
                next.beliefs
                    .update(&witnesses, object, claimed, Some(speaker));
            }
            _ => {}
        }
        next.timeline.push(event.summary());
        Ok(next)
    }

    /// Writes the snapshot as pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }
}

/// Snapshots after each event; `result[i]` reflects events `1..=i+1`.
pub fn replay(story: &Story) -> Result<Vec<WorldModelSnapshot>, WorldError> {
    replay_with_order(story, DEFAULT_MAX_ORDER)
}

pub fn replay_with_order(
    story: &Story,
    max_order: usize,
) -> Result<Vec<WorldModelSnapshot>, WorldError> {
    if story.events.is_empty() {
        return Err(WorldError::EmptyStory);
    }
    let mut out: Vec<WorldModelSnapshot> = Vec::with_capacity(story.events.len());
    let mut cur = WorldModelSnapshot::empty(max_order);
    for e in &story.events {
        cur = cur.step(e)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Final snapshot of a story, with the belief depth widened to fit `min_order`.
pub fn final_snapshot(story: &Story, min_order: usize) -> Result<WorldModelSnapshot, WorldError> {
    let mut snaps = replay_with_order(story, DEFAULT_MAX_ORDER.max(min_order))?;
    Ok(snaps.pop().expect("non-empty"))
}

/// Ground-truth answer for a question on the given snapshot.
pub fn answer(snapshot: &WorldModelSnapshot, q: &Question) -> Result<String, WorldError> {
    let known_object = snapshot.state.placements.contains_key(&q.object)
        || snapshot.beliefs.entries().any(|e| e.object == q.object);
    if !known_object {
        return Err(WorldError::UnknownEntity(q.object.clone()));
    }
    if let Some(a) = q
        .chain
        .iter()
        .find(|a| !snapshot.state.agent_rooms.contains_key(*a))
    {
        return Err(WorldError::UnknownEntity(a.clone()));
    }
    if q.chain.is_empty() {
        return Ok(snapshot
            .state
            .placements
            .get(&q.object)
            .map_or_else(|| UNKNOWN.to_string(), |p| p.container.clone()));
    }
    let chain = collapse_chain(&q.chain);
    if chain.len() > snapshot.beliefs.max_order {
        return Err(WorldError::UnknownEntity(format!(
            "order-{} chain",
            chain.len()
        )));
    }
    Ok(snapshot
        .beliefs
        .get(&chain, &q.object)
        .unwrap_or(UNKNOWN)
        .to_string())
}

/// Which parts of a snapshot to render.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateScope {
    Full,
    Partial {
        /// Entity names of any kind.
        entities: BTreeSet<String>,
        /// Longest belief chain rendered.
        depth: usize,
        /// Also render every agent's first-order belief about these objects.
        first_order_objects: BTreeSet<String>,
    },
}

impl StateScope {
    pub fn empty() -> Self {
        Self::Partial {
            entities: BTreeSet::new(),
            depth: 0,
            first_order_objects: BTreeSet::new(),
        }
    }

    pub fn entities(&self) -> Option<&BTreeSet<String>> {
        match self {
            Self::Full => None,
            Self::Partial { entities, .. } => Some(entities),
        }
    }
}

/// Chooses what to show for the `attempt`-th intervention: the question's
/// entities plus names mentioned near the end of the reasoning, then every
/// agent's first-order belief about the object, then everything.
pub fn select_scope(
    snapshot: &WorldModelSnapshot,
    q: &Question,
    reasoning_suffix: &str,
    attempt: usize,
) -> StateScope {
    select_scope_with_window(snapshot, q, reasoning_suffix, attempt, MENTION_WINDOW)
}

pub fn select_scope_with_window(
    snapshot: &WorldModelSnapshot,
    q: &Question,
    reasoning_suffix: &str,
    attempt: usize,
    window: usize,
) -> StateScope {
    if attempt >= 3 {
        return StateScope::Full;
    }
    let mut entities: BTreeSet<String> = q.chain.iter().cloned().collect();
    entities.insert(q.object.clone());
    let recent = tail_chars(reasoning_suffix, window);
    let s = &snapshot.state;
    let names = s
        .agent_rooms
        .keys()
        .chain(s.placements.keys())
        .chain(s.containers.keys())
        .chain(s.containers.values());
    for name in names {
        if !find_whole_word(recent, name).is_empty() {
            entities.insert(name.clone());
        }
    }
    let first_order_objects = if attempt >= 2 {
        [q.object.clone()].into()
    } else {
        BTreeSet::new()
    };
    StateScope::Partial {
        entities,
        depth: q.chain.len().max(1),
        first_order_objects,
    }
}

/// Renders the `<information>` block: timeline, then objective lines, then
/// belief lines, framed by the tags with no trailing whitespace.
pub fn render_information(snapshot: &WorldModelSnapshot, scope: &StateScope) -> String {
    let t = snapshot.t();
    let s = &snapshot.state;
    let mut lines: Vec<String> = snapshot
        .timeline
        .iter()
        .enumerate()
        .map(|(i, e)| format!("t={} | event | {e}", i + 1))
        .collect();

    let (objects, agents): (Vec<&String>, Vec<&String>) = match scope {
        StateScope::Full => (
            s.placements.keys().collect(),
            s.agent_rooms.keys().collect(),
        ),
        StateScope::Partial { entities, .. } if entities.is_empty() => (
            s.placements.keys().collect(),
            s.agent_rooms.keys().collect(),
        ),
        StateScope::Partial { entities, .. } => {
            let objects = s
                .placements
                .iter()
                .filter(|(o, p)| {
                    entities.contains(*o)
                        || entities.contains(&p.container)
                        || entities.contains(&p.room)
                })
                .map(|(o, _)| o)
                .collect();
            let agents = s
                .agent_rooms
                .keys()
                .filter(|a| entities.contains(*a))
                .collect();
            (objects, agents)
        }
    };
    for o in &objects {
        let p = &s.placements[*o];
        lines.push(format!(
            "t={t} | objective | {o} in {} ({})",
            p.container, p.room
        ));
    }
    for a in &agents {
        let loc = match s.agent_rooms[*a].as_deref() {
            None => "absent".to_string(),
            Some(r) if !s.is_attentive(a) => format!("in {r} (distracted)"),
            Some(r) => format!("in {r}"),
        };
        lines.push(format!("t={t} | objective | {a} {loc}"));
    }

    let selected: Vec<BeliefEntry> = match scope {
        StateScope::Full => snapshot.beliefs.entries().collect(),
        StateScope::Partial {
            entities,
            depth,
            first_order_objects,
        } => {
            let object_set: BTreeSet<&String> = objects.iter().copied().collect();
            snapshot
                .beliefs
                .entries()
                .filter(|e| {
                    let scoped = e.chain.len() <= *depth
                        && e.chain.iter().all(|a| entities.contains(a))
                        && object_set.contains(&e.object);
                    let first_order = e.chain.len() == 1 && first_order_objects.contains(&e.object);
                    scoped || first_order
                })
                .collect()
        }
    };
    for e in selected {
        lines.push(format!(
            "t={t} | belief | {} -> {} in {}",
            e.chain.join(" -> "),
            e.object,
            e.container
        ));
    }

    let mut out = String::from("<information>\n");
    out.push_str(&lines.join("\n"));
    out.push_str("\n</information>");
    out
}

/// Instruction sent with the story when an LLM builds the world model. The
/// reply must be a JSON object in the snapshot export schema.
pub const WORLD_MODEL_INSTRUCTION: &str = "Track the story as a world model. Reply with one JSON object and nothing else, with keys: \
\"state\": {\"t\": <number of events>, \"placements\": {<object>: {\"container\": str, \"room\": str}}, \
\"agent_rooms\": {<agent>: <room or null>}, \"attentive\": {<agent>: bool}, \"containers\": {<container>: <room>}}; \
\"beliefs\": {\"t\": <number of events>, \"max_order\": 4, \"beliefs\": [{\"chain\": [<agent>, ...], \"object\": str, \"container\": str}]}; \
\"timeline\": [<one short summary per event>]. A belief chain [A, B] means A thinks B thinks. \
Agents only see events in the room they are in, and distracted agents see nothing until they enter a room again.";

#[derive(Debug, Error)]
pub enum WorldModelBuildError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("world model reply is not a valid snapshot: {0}")]
    SchemaParse(String),
}

/// Parses a snapshot out of a model reply, tolerating code fences and prose
/// around the JSON object.
pub fn parse_snapshot_reply(reply: &str) -> Result<WorldModelSnapshot, String> {
    let start = reply.find('{').ok_or("no JSON object in reply")?;
    let end = reply.rfind('}').ok_or("no JSON object in reply")?;
    if end < start {
        return Err("no JSON object in reply".into());
    }
    serde_json::from_str(&reply[start..=end]).map_err(|e| e.to_string())
}

/// Has `provider` build the world model for `story`. A reply that fails to
/// parse is retried once with the parse error appended. Returns the snapshot
/// and the prompt+completion tokens spent across attempts.
pub fn llm_build_world_model(
    story: &Story,
    provider: &dyn ChatProvider,
    model: &str,
    params: &GenerationParams,
) -> Result<(WorldModelSnapshot, u64), WorldModelBuildError> {
    let mut messages = vec![
        Message::system(WORLD_MODEL_INSTRUCTION),
        Message::user(story.render().join("\n")),
    ];
    let mut tokens = 0;
    let mut last_err = String::new();
    for _ in 0..2 {
        let req = ChatRequest {
            model: model.to_string(),
            params: params.clone(),
            messages: messages.clone(),
            assistant_prefix: None,
        };
        let (reply, usage) = provider.complete(&req)?;
        tokens += usage.total();
        match parse_snapshot_reply(&reply) {
            Ok(snap) => return Ok((snap, tokens)),
            Err(e) => {
                last_err = e.clone();
                messages.push(Message {
                    role: Role::Assistant,
                    content: reply,
                });
                messages.push(Message::user(format!(
                    "That reply could not be parsed ({e}). Reply with the JSON object only."
                )));
            }
        }
    }
    Err(WorldModelBuildError::SchemaParse(last_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::{parse_story, StorySource, TemplateGrammar};

    fn apple() -> Story {
        let lines = [
            "Alice entered the kitchen.",
            "Bob entered the kitchen.",
            "The apple is in the refrigerator.",
            "Alice exited the kitchen.",
            "Bob moved the apple to the basket.",
        ];
        parse_story("s1", &lines, TemplateGrammar::Strict, StorySource::Custom).unwrap()
    }

    fn chain(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn q(c: &[&str]) -> Question {
        Question::new("s1", chain(c), "apple")
    }

    #[test]
    fn canonical_false_belief() {
        let last = replay(&apple()).unwrap().pop().unwrap();
        assert_eq!(answer(&last, &q(&[])).unwrap(), "basket");
        assert_eq!(answer(&last, &q(&["Alice"])).unwrap(), "refrigerator");
        assert_eq!(answer(&last, &q(&["Bob"])).unwrap(), "basket");
        assert_eq!(
            answer(&last, &q(&["Bob", "Alice"])).unwrap(),
            "refrigerator"
        );
        assert_eq!(
            answer(&last, &q(&["Alice", "Alice"])).unwrap(),
            "refrigerator"
        );
    }

    #[test]
    fn step_is_persistent() {
        let story = apple();
        let snaps = replay(&story).unwrap();
        let before = snaps[3].clone();
        let after = snaps[3].step(&story.events[4]).unwrap();
        assert_eq!(snaps[3], before);
        assert_eq!(after, snaps[4]);
        assert!(matches!(
            snaps[3].step(&story.events[0]),
            Err(WorldError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn private_tell_updates_listener_chains() {
        let mut lines: Vec<&str> = vec![
            "Alice entered the kitchen.",
            "Bob entered the kitchen.",
            "Carol entered the kitchen.",
            "The apple is in the refrigerator.",
        ];
        lines.push("Bob privately told Carol that the apple is in the cellar.");
        let story = parse_story("t", &lines, TemplateGrammar::Strict, StorySource::Custom).unwrap();
        let snaps = replay_with_order(&story, 2).unwrap();
        let (before, after) = (&snaps[3], &snaps[4]);
        let changed: Vec<Vec<String>> = after
            .beliefs
            .entries()
            .filter(|e| before.beliefs.get(&e.chain, &e.object) != Some(e.container.as_str()))
            .map(|e| e.chain)
            .collect();
        assert_eq!(changed, vec![chain(&["Carol"]), chain(&["Bob", "Carol"])]);
        assert_eq!(
            after.beliefs.get(&chain(&["Bob"]), "apple"),
            Some("refrigerator")
        );
    }

    #[test]
    fn distraction_blocks_witnessing_until_reentry() {
        let lines = [
            "Alice entered the kitchen.",
            "Bob entered the kitchen.",
            "The apple is in the refrigerator.",
            "Alice got distracted.",
            "Bob moved the apple to the basket.",
            "Alice entered the kitchen.",
            "Bob moved the apple to the drawer.",
        ];
        let story = parse_story("t", &lines, TemplateGrammar::Strict, StorySource::Custom).unwrap();
        let snaps = replay(&story).unwrap();
        assert_eq!(
            snaps[4].beliefs.get(&chain(&["Alice"]), "apple"),
            Some("refrigerator")
        );
        assert_eq!(
            snaps[6].beliefs.get(&chain(&["Alice"]), "apple"),
            Some("drawer")
        );
    }

    #[test]
    fn unseen_objects_are_unknown() {
        let lines = [
            "Bob entered the kitchen.",
            "The apple is in the box.",
            "Alice entered the kitchen.",
        ];
        let story = parse_story("t", &lines, TemplateGrammar::Strict, StorySource::Custom).unwrap();
        let last = replay(&story).unwrap().pop().unwrap();
        assert_eq!(answer(&last, &q(&["Alice"])).unwrap(), UNKNOWN);
        let mut bad = q(&["Zed"]);
        assert_eq!(
            answer(&last, &bad),
            Err(WorldError::UnknownEntity("Zed".into()))
        );
        bad = Question::new("t", vec![], "pear");
        assert_eq!(
            answer(&last, &bad),
            Err(WorldError::UnknownEntity("pear".into()))
        );
    }

    #[test]
    fn render_contains_expected_lines() {
        let last = replay(&apple()).unwrap().pop().unwrap();
        let block = render_information(&last, &StateScope::Full);
        assert!(block.starts_with("<information>\n"));
        assert!(block.ends_with("\n</information>"));
        assert!(block.contains("t=5 | belief | Alice -> apple in refrigerator"));
        assert!(block.contains("t=5 | objective | apple in basket (kitchen)"));
        assert!(block.contains("t=5 | objective | Alice absent"));
        assert!(block.contains("t=1 | event | Alice entered the kitchen"));
        assert_eq!(block, render_information(&last, &StateScope::Full));
    }

    #[test]
    fn empty_scope_renders_objective_state_only() {
        let last = replay(&apple()).unwrap().pop().unwrap();
        let block = render_information(&last, &StateScope::empty());
        assert!(block.contains("objective | apple in basket"));
        assert!(!block.contains("| belief |"));
        let snap = WorldModelSnapshot::empty(4);
        assert_eq!(
            render_information(&snap, &StateScope::Full),
            "<information>\n\n</information>"
        );
    }

    #[test]
    fn scope_escalates_with_attempts() {
        let last = replay(&apple()).unwrap().pop().unwrap();
        let question = q(&["Alice"]);
        let s1 = select_scope(&last, &question, "so where would Bob have put it", 1);
        let expected: BTreeSet<String> = ["Alice", "Bob", "apple"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(s1.entities(), Some(&expected));
        let s0 = select_scope(&last, &question, "", 1);
        assert_eq!(s0.entities().unwrap().len(), 2);
        assert_eq!(select_scope(&last, &question, "Bob", 3), StateScope::Full);

        let s2 = select_scope(&last, &question, "", 2);
        let block = render_information(&last, &s2);
        assert!(block.contains("belief | Bob -> apple in basket"));
        let block1 = render_information(&last, &s0);
        assert!(!block1.contains("belief | Bob -> apple"));
    }

    #[test]
    fn scope_window_only_sees_recent_text() {
        let last = replay(&apple()).unwrap().pop().unwrap();
        let question = q(&["Alice"]);
        let old = format!("Bob {}", "x".repeat(500));
        let s = select_scope(&last, &question, &old, 1);
        assert!(!s.entities().unwrap().contains("Bob"));
    }

    #[test]
    fn chain_enumeration_skips_repeats() {
        let agents: BTreeSet<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let chains = chains_over(&agents, 3);
        assert_eq!(chains.len(), 3 + 6 + 12);
        assert!(chains.iter().all(|c| c.windows(2).all(|w| w[0] != w[1])));
    }

    #[test]
    fn snapshot_json_round_trips() {
        let last = replay(&apple()).unwrap().pop().unwrap();
        let back: WorldModelSnapshot = serde_json::from_str(&last.to_json()).unwrap();
        assert_eq!(back, last);
    }

    #[test]
    fn llm_builder_parses_scripted_reply() {
        use crate::provider::{ScriptedProvider, StreamChunk};
        let story = apple();
        let expected = replay(&story).unwrap().pop().unwrap();
        let json = format!("```json\n{}\n```", expected.to_json());
        let provider = ScriptedProvider::new(move |_| Ok(vec![StreamChunk::new(json.clone(), 7)]));
        let (snap, tokens) =
            llm_build_world_model(&story, &provider, "m", &GenerationParams::default()).unwrap();
        assert_eq!(snap, expected);
        let prompt: u64 = [
            WORLD_MODEL_INSTRUCTION.to_string(),
            story.render().join("\n"),
        ]
        .iter()
        .map(|s| crate::text::estimate_tokens(s))
        .sum();
        assert_eq!(tokens, prompt + 7);
    }

    #[test]
    fn llm_builder_gives_up_after_one_retry() {
        use crate::provider::ScriptedProvider;
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let provider = ScriptedProvider::from_text(move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            "the apple is somewhere".into()
        });
        let err = llm_build_world_model(&apple(), &provider, "m", &GenerationParams::default())
            .unwrap_err();
        assert!(matches!(err, WorldModelBuildError::SchemaParse(_)));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }
}
