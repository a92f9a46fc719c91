//! Independent reference implementations used by the integration tests.
//!
//! The belief oracle answers one question at a time by enumerating, for
//! every event, which agents perceived it, and then scanning for the last
//! event that every agent in the question's chain perceived. It shares no
//! code with the world engine beyond the parsed event list.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use wmtom::story::{EventKind, Story};

pub const UNKNOWN: &str = "unknown";

/// Agent location and attention, rebuilt from scratch.
#[derive(Default)]
struct Scene {
    room: BTreeMap<String, Option<String>>,
    attentive: BTreeMap<String, bool>,
    object_room: BTreeMap<String, String>,
}

impl Scene {
    fn watchers(&self, room: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (agent, r) in &self.room {
            let here = r.as_deref() == Some(room);
            let awake = *self.attentive.get(agent).unwrap_or(&true);
            if here && awake {
                out.insert(agent.clone());
            }
        }
        out
    }
}

/// What an event claims about an object, and who perceived it.
pub struct Observation {
    pub object: String,
    pub container: String,
    pub witnesses: BTreeSet<String>,
    /// Speaker of a tell; chains ending in the speaker ignore it.
    pub speaker: Option<String>,
}

/// Enumerates witness sets event by event.
pub fn observations(story: &Story) -> Vec<Observation> {
    let mut scene = Scene::default();
    let mut out = Vec::new();
    for e in &story.events {
        match &e.kind {
            EventKind::Enter { agent, room } => {
                scene.room.insert(agent.clone(), Some(room.clone()));
                scene.attentive.insert(agent.clone(), true);
            }
            EventKind::Exit { agent, .. } => {
                scene.room.insert(agent.clone(), None);
            }
            EventKind::InitialPlacement {
                object,
                container,
                room,
            } => {
                out.push(Observation {
                    object: object.clone(),
                    container: container.clone(),
                    witnesses: scene.watchers(room),
                    speaker: None,
                });
                scene.object_room.insert(object.clone(), room.clone());
            }
            EventKind::Move {
                agent, object, to, ..
            } => {
                let room = scene.object_room[object].clone();
                let mut w = scene.watchers(&room);
                w.insert(agent.clone());
                out.push(Observation {
                    object: object.clone(),
                    container: to.clone(),
                    witnesses: w,
                    speaker: None,
                });
            }
            EventKind::PrivateTell {
                speaker,
                listener,
                object,
                claimed,
            } => {
                scene.room.entry(speaker.clone()).or_insert(None);
                scene.room.entry(listener.clone()).or_insert(None);
                out.push(Observation {
                    object: object.clone(),
                    container: claimed.clone(),
                    witnesses: [speaker.clone(), listener.clone()].into(),
                    speaker: Some(speaker.clone()),
                });
            }
            EventKind::PublicTell {
                speaker,
                room,
                object,
                claimed,
            } => {
                let mut w = scene.watchers(room);
                w.insert(speaker.clone());
                out.push(Observation {
                    object: object.clone(),
                    container: claimed.clone(),
                    witnesses: w,
                    speaker: Some(speaker.clone()),
                });
            }
            EventKind::Distracted { agent, .. } => {
                scene.attentive.insert(agent.clone(), false);
            }
            EventKind::Ambient => {}
        }
    }
    out
}

/// Answer to "where does a1 think a2 thinks ... the object is?" (objective
/// location for an empty chain).
pub fn oracle_answer(story: &Story, chain: &[String], object: &str) -> String {
    let obs = observations(story);
    if chain.is_empty() {
        return obs
            .iter()
            .rev()
            .find(|o| o.object == object && o.speaker.is_none())
            .map_or(UNKNOWN.to_string(), |o| o.container.clone());
    }
    let mut chain: Vec<String> = chain.to_vec();
    chain.dedup();
    let last = chain.last().cloned();
    obs.iter()
        .rev()
        .filter(|o| o.object == object)
        .filter(|o| chain.iter().all(|a| o.witnesses.contains(a)))
        .find(|o| o.speaker.is_none() || o.speaker != last)
        .map_or(UNKNOWN.to_string(), |o| o.container.clone())
}

/// Every agent-chain of length 1..=max_len with no back-to-back repeats.
pub fn all_chains(agents: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut layer = vec![Vec::<String>::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for c in &layer {
            for a in agents {
                if c.last() != Some(a) {
                    let mut d = c.clone();
                    d.push(a.clone());
                    next.push(d);
                }
            }
        }
        out.extend(next.clone());
        layer = next;
    }
    out
}

fn word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

/// Lexicon hits found by splitting on non-word characters: the byte span of
/// every word equal (case-insensitively) to a single-word entry.
pub fn naive_hits(text: &str, entries: &[&str]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text
        .char_indices()
        .chain(std::iter::once((text.len(), ' ')))
    {
        match (start, word_char(c)) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                let w = text[s..i].to_lowercase();
                if entries.contains(&w.as_str()) {
                    out.push((s, i, w));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}
