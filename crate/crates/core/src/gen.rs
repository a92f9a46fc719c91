//! Seeded generator for templated false-belief stories with exact gold
//! answers.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, so a corpus is a
//! pure function of its specs. Every story opens with all agents entering
//! and every object being placed; when questions above order 0 are wanted,
//! an exit-then-move pivot follows so that at least one agent holds a stale
//! belief. Gold answers come from replaying the story through the world
//! engine.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{parse_story, EventKind, Item, Question, Story, StorySource, TemplateGrammar};
use crate::world::{self, chains_over, WorldModelSnapshot, UNKNOWN};

pub const AGENTS: [&str; 6] = ["Alice", "Bob", "Carol", "David", "Emma", "Frank"];
pub const ROOMS: [&str; 4] = ["kitchen", "garden", "hallway", "cellar"];
pub const OBJECTS: [&str; 3] = ["apple", "ball", "book"];
/// Containers per room, indexed like [`ROOMS`].
pub const CONTAINERS: [[&str; 3]; 4] = [
    ["refrigerator", "basket", "cupboard"],
    ["shed", "bucket", "crate"],
    ["closet", "drawer", "suitcase"],
    ["barrel", "chest", "box"],
];

/// Most belief-question chains sampled per order.
const CHAINS_PER_ORDER: usize = 3;
const MAX_ATTEMPTS: usize = 64;
/// Chance that an agent outside every room walks back in before a move.
const REENTER_RATE: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum GenSpecError {
    #[error("{field} = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: String,
        range: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub n_agents: usize,
    pub n_rooms: usize,
    pub n_objects: usize,
    pub n_moves: usize,
    pub tell_rate: f64,
    pub distract_rate: f64,
    /// Chance that a present agent leaves before each move.
    pub exit_rate: f64,
    pub max_question_order: usize,
    /// Force an exit-then-move pattern when `max_question_order >= 1`.
    pub false_belief_pivot: bool,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_agents: 3,
            n_rooms: 2,
            n_objects: 2,
            n_moves: 3,
            tell_rate: 0.2,
            distract_rate: 0.1,
            exit_rate: 0.3,
            max_question_order: 2,
            false_belief_pivot: true,
            seed: 0,
        }
    }
}

impl GenSpec {
    /// A spec whose shape is itself drawn from `seed`, covering every
    /// allowed size and question order.
    pub fn sampled(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        Self {
            n_agents: rng.gen_range(2..=6),
            n_rooms: rng.gen_range(1..=4),
            n_objects: rng.gen_range(1..=3),
            n_moves: rng.gen_range(1..=8),
            tell_rate: rng.gen_range(0.0..=0.4),
            distract_rate: rng.gen_range(0.0..=0.3),
            exit_rate: rng.gen_range(0.0..=0.5),
            max_question_order: rng.gen_range(0..=4),
            false_belief_pivot: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenSpecError> {
        fn count(
            field: &'static str,
            v: usize,
            lo: usize,
            hi: usize,
            range: &'static str,
        ) -> Result<(), GenSpecError> {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(GenSpecError::OutOfRange {
                    field,
                    value: v.to_string(),
                    range,
                })
            }
        }
        fn prob(field: &'static str, v: f64) -> Result<(), GenSpecError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(GenSpecError::OutOfRange {
                    field,
                    value: v.to_string(),
                    range: "[0, 1]",
                })
            }
        }
        count("n_agents", self.n_agents, 2, 6, "2..=6")?;
        count("n_rooms", self.n_rooms, 1, 4, "1..=4")?;
        count("n_objects", self.n_objects, 1, 3, "1..=3")?;
        count("n_moves", self.n_moves, 1, 8, "1..=8")?;
        count("max_question_order", self.max_question_order, 0, 4, "0..=4")?;
        prob("tell_rate", self.tell_rate)?;
        prob("distract_rate", self.distract_rate)?;
        prob("exit_rate", self.exit_rate)
    }
}

/// Story under construction: raw lines plus the live snapshot used to pick
/// legal next events.
struct Builder {
    lines: Vec<String>,
    snap: WorldModelSnapshot,
    scene_room: Option<String>,
}

impl Builder {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            snap: WorldModelSnapshot::empty(world::DEFAULT_MAX_ORDER),
            scene_room: None,
        }
    }

    fn push(&mut self, kind: EventKind, raw: String) {
        let event = crate::story::Event {
            t: self.snap.t() + 1,
            kind,
            raw,
        };
        self.snap = self
            .snap
            .step(&event)
            .expect("generator emits consistent events");
        if let EventKind::Enter { room, .. } = &event.kind {
            self.scene_room = Some(room.clone());
        }
        self.lines.push(event.raw);
    }

    fn room_of(&self, agent: &str) -> Option<String> {
        self.snap.state.agent_rooms.get(agent).cloned().flatten()
    }

    fn present_in(&self, room: &str) -> Vec<String> {
        self.snap
            .state
            .agent_rooms
            .iter()
            .filter(|(_, r)| r.as_deref() == Some(room))
            .map(|(a, _)| a.clone())
            .collect()
    }

    fn enter(&mut self, agent: &str, room: &str) {
        if let Some(cur) = self.room_of(agent) {
            if cur == room {
                return;
            }
            self.exit(agent);
        }
        self.push(
            EventKind::Enter {
                agent: agent.into(),
                room: room.into(),
            },
            format!("{agent} entered the {room}."),
        );
    }

    fn exit(&mut self, agent: &str) {
        let room = self.room_of(agent).expect("exiting agent is in a room");
        self.push(
            EventKind::Exit {
                agent: agent.into(),
                room: room.clone(),
            },
            format!("{agent} exited the {room}."),
        );
    }

    fn place(&mut self, object: &str, container: &str, room: &str) {
        let raw = if self.scene_room.as_deref() == Some(room) {
            format!("The {object} is in the {container}.")
        } else {
            format!("The {object} is in the {container} in the {room}.")
        };
        self.push(
            EventKind::InitialPlacement {
                object: object.into(),
                container: container.into(),
                room: room.into(),
            },
            raw,
        );
    }

    fn move_object(&mut self, agent: &str, object: &str, to: &str) {
        let from = self.snap.state.placements[object].container.clone();
        self.push(
            EventKind::Move {
                agent: agent.into(),
                object: object.into(),
                from,
                to: to.into(),
            },
            format!("{agent} moved the {object} to the {to}."),
        );
    }
}

fn room_index(room: &str) -> usize {
    ROOMS
        .iter()
        .position(|r| *r == room)
        .expect("generated room")
}

fn other_container(rng: &mut ChaCha8Rng, room: &str, current: &str) -> String {
    let options: Vec<&str> = CONTAINERS[room_index(room)]
        .iter()
        .copied()
        .filter(|c| *c != current)
        .collect();
    options
        .choose(rng)
        .expect("three containers per room")
        .to_string()
}

fn build_lines(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let agents = &AGENTS[..spec.n_agents];
    let rooms = &ROOMS[..spec.n_rooms];
    let objects = &OBJECTS[..spec.n_objects];
    let mut b = Builder::new();

    // Agents 0 and 1 share room 0 with object 0 so the pivot always has a
    // witness and a mover.
    for (i, agent) in agents.iter().enumerate() {
        let room = if i < 2 {
            rooms[0]
        } else {
            rooms.choose(rng).unwrap()
        };
        b.enter(agent, room);
    }
    for (i, object) in objects.iter().enumerate() {
        let room = if i == 0 {
            rooms[0]
        } else {
            rooms.choose(rng).unwrap()
        };
        let container = CONTAINERS[room_index(room)].choose(rng).unwrap();
        b.place(object, container, room);
    }

    if spec.false_belief_pivot && spec.max_question_order >= 1 {
        b.exit(agents[0]);
        let current = b.snap.state.placements[objects[0]].container.clone();
        let to = other_container(rng, rooms[0], &current);
        b.move_object(agents[1], objects[0], &to);
    }

    for _ in 0..spec.n_moves {
        // Prefer objects someone can reach without leaving another room.
        let reachable: Vec<&str> = objects
            .iter()
            .copied()
            .filter(|o| !b.present_in(&b.snap.state.placements[*o].room).is_empty())
            .collect();
        let object = *if reachable.is_empty() {
            objects
        } else {
            &reachable[..]
        }
        .choose(rng)
        .unwrap();
        let room = b.snap.state.placements[object].room.clone();

        if rng.gen_bool(REENTER_RATE) {
            let outside: Vec<&str> = agents
                .iter()
                .copied()
                .filter(|a| b.room_of(a).is_none())
                .collect();
            if let Some(a) = outside.choose(rng) {
                b.enter(a, rooms.choose(rng).unwrap());
            }
        }
        if rng.gen_bool(spec.distract_rate) {
            let candidates: Vec<String> = agents
                .iter()
                .filter(|a| {
                    b.room_of(a).is_some()
                        && b.snap.state.attentive.get(**a).copied().unwrap_or(true)
                })
                .map(|a| a.to_string())
                .collect();
            if let Some(a) = candidates.choose(rng) {
                b.push(
                    EventKind::Distracted {
                        agent: a.clone(),
                        t_start: b.snap.t() + 1,
                    },
                    format!("{a} got distracted."),
                );
            }
        }
        if rng.gen_bool(spec.tell_rate) {
            let speaker = *agents.choose(rng).unwrap();
            let claimed = b
                .snap
                .beliefs
                .get(&[speaker.to_string()], object)
                .map(str::to_string)
                .unwrap_or_else(|| {
                    CONTAINERS[room_index(&room)]
                        .choose(rng)
                        .unwrap()
                        .to_string()
                });
            match b.room_of(speaker) {
                Some(speaker_room) if rng.gen_bool(0.5) => b.push(
                    EventKind::PublicTell {
                        speaker: speaker.into(),
                        room: speaker_room,
                        object: object.into(),
                        claimed: claimed.clone(),
                    },
                    format!("{speaker} publicly claimed that the {object} is in the {claimed}."),
                ),
                _ => {
                    let listener = *agents
                        .iter()
                        .filter(|a| **a != speaker)
                        .collect::<Vec<_>>()
                        .choose(rng)
                        .unwrap();
                    b.push(
                        EventKind::PrivateTell {
                            speaker: speaker.into(),
                            listener: listener.to_string(),
                            object: object.into(),
                            claimed: claimed.clone(),
                        },
                        format!("{speaker} privately told {listener} that the {object} is in the {claimed}."),
                    );
                }
            }
        }

        let present = b.present_in(&room);
        if rng.gen_bool(spec.exit_rate) && present.len() > 1 {
            let leaver = present.choose(rng).unwrap().clone();
            b.exit(&leaver);
        }
        let present = b.present_in(&room);
        let mover = match present.choose(rng) {
            Some(a) => a.clone(),
            None => {
                let a = agents.choose(rng).unwrap().to_string();
                b.enter(&a, &room);
                a
            }
        };
        let current = b.snap.state.placements[object].container.clone();
        let to = other_container(rng, &room, &current);
        b.move_object(&mover, object, &to);
    }
    b.lines
}

/// Containers that appear anywhere in the story, sorted.
fn story_containers(story: &Story) -> Vec<String> {
    story.entities.containers.iter().cloned().collect()
}

fn pick_questions(
    spec: &GenSpec,
    story: &Story,
    snap: &WorldModelSnapshot,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Question>> {
    let choices = story_containers(story);
    let objects: Vec<String> = snap.objects().into_iter().collect();
    let agents = snap.agents();
    let objective = |o: &str| snap.state.placements[o].container.clone();
    let mut out = Vec::new();
    let mut false_belief = false;

    let make = |chain: Vec<String>, object: &str, gold: String| {
        let mut q = Question::new(&story.id, chain, object);
        q.choices = Some(choices.clone());
        q.gold = Some(gold);
        q
    };

    for o in &objects {
        out.push(make(Vec::new(), o, objective(o)));
    }
    for order in 1..=spec.max_question_order {
        let mut known: Vec<(Vec<String>, String, String)> = chains_over(&agents, order)
            .into_iter()
            .filter(|c| c.len() == order)
            .flat_map(|c| objects.iter().map(move |o| (c.clone(), o.clone())))
            .filter_map(|(c, o)| snap.beliefs.get(&c, &o).map(|g| (c, o, g.to_string())))
            .collect();
        if known.is_empty() {
            return None;
        }
        known.shuffle(rng);
        let mut picked: Vec<_> = known.iter().take(CHAINS_PER_ORDER).cloned().collect();
        let is_false = |(_, o, g): &(Vec<String>, String, String)| *g != objective(o);
        if spec.false_belief_pivot && !false_belief && !picked.iter().any(is_false) {
            if let Some(fb) = known.iter().find(|k| is_false(k)) {
                picked.pop();
                picked.push(fb.clone());
            }
        }
        false_belief |= picked.iter().any(is_false);
        out.extend(picked.into_iter().map(|(c, o, g)| make(c, &o, g)));
    }
    if spec.false_belief_pivot && spec.max_question_order >= 1 && !false_belief {
        return None;
    }
    Some(out)
}

/// Generates one story and its questions; identical specs give identical
/// output.
///
/// # Panics
/// If `spec` fails [`GenSpec::validate`].
pub fn generate(spec: &GenSpec) -> (Story, Vec<Question>) {
    spec.validate().expect("valid GenSpec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let id = format!("gen-{}", spec.seed);
    let mut last = None;
    for _ in 0..MAX_ATTEMPTS {
        let lines = build_lines(spec, &mut rng);
        let story = parse_story(&id, &lines, TemplateGrammar::Strict, StorySource::Generated)
            .expect("generated lines parse");
        let order = spec.max_question_order;
        let snap = world::final_snapshot(&story, order).expect("generated story replays");
        if let Some(qs) = pick_questions(spec, &story, &snap, &mut rng) {
            debug_assert!(qs.iter().all(|q| q.gold.as_deref() != Some(UNKNOWN)));
            return (story, qs);
        }
        last = Some(story);
    }
    // The pivot makes failure practically impossible; fall back to the
    // objective questions so generation stays total.
    let story = last.expect("at least one attempt");
    let snap = world::final_snapshot(&story, 0).expect("generated story replays");
    let choices = story_containers(&story);
    let qs = snap
        .objects()
        .into_iter()
        .map(|o| {
            let mut q = Question::new(&story.id, Vec::new(), &o);
            q.choices = Some(choices.clone());
            q.gold = Some(snap.state.placements[&o].container.clone());
            q
        })
        .collect();
    (story, qs)
}

/// Normalized items for one generated story, one per question.
pub fn to_items(story: &Story, questions: &[Question]) -> Vec<Item> {
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| Item {
            id: format!("{}-q{i}", story.id),
            story: story.render(),
            question: q.text.clone(),
            choices: q.choices.clone(),
            answer: q.gold.clone().unwrap_or_default(),
            dataset: "generated".into(),
        })
        .collect()
}

/// Snapshot sequence of a story, for debugging gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTrace {
    pub story_id: String,
    pub snapshots: Vec<WorldModelSnapshot>,
}

pub fn gold_trace(story: &Story) -> GoldTrace {
    GoldTrace {
        story_id: story.id.clone(),
        snapshots: world::replay(story).expect("generated story replays"),
    }
}

/// Builds a corpus of exactly `n_items` items from consecutive seeds
/// starting at `base.seed`, keeping every other field of `base`.
pub fn corpus(base: &GenSpec, n_items: usize) -> (Vec<Item>, Vec<GoldTrace>) {
    let mut items = Vec::with_capacity(n_items);
    let mut traces = Vec::new();
    let mut seed = base.seed;
    while items.len() < n_items {
        let spec = GenSpec {
            seed,
            ..base.clone()
        };
        let (story, qs) = generate(&spec);
        let take = (n_items - items.len()).min(qs.len());
        items.extend(to_items(&story, &qs).into_iter().take(take));
        traces.push(gold_trace(&story));
        seed += 1;
    }
    (items, traces)
}

/// Agents whose first-order belief about `object` differs from the truth.
pub fn mistaken_agents(snap: &WorldModelSnapshot, object: &str) -> BTreeSet<String> {
    let truth = &snap.state.placements[object].container;
    snap.agents()
        .into_iter()
        .filter(|a| {
            snap.beliefs
                .get(std::slice::from_ref(a), object)
                .is_some_and(|b| b != truth)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = GenSpec {
            seed: 7,
            ..GenSpec::default()
        };
        assert_eq!(generate(&spec), generate(&spec));
        let other = GenSpec {
            seed: 8,
            ..GenSpec::default()
        };
        assert_ne!(generate(&spec).0.render(), generate(&other).0.render());
    }

    #[test]
    fn gold_matches_engine() {
        for seed in 0..200 {
            let spec = GenSpec::sampled(seed);
            let (story, qs) = generate(&spec);
            let snap = world::final_snapshot(&story, 4).unwrap();
            for q in &qs {
                assert_eq!(
                    world::answer(&snap, q).unwrap(),
                    q.gold.clone().unwrap(),
                    "seed {seed}: {}",
                    q.text
                );
                assert!(q
                    .choices
                    .as_ref()
                    .unwrap()
                    .contains(q.gold.as_ref().unwrap()));
            }
        }
    }

    #[test]
    fn covers_every_order() {
        for seed in 0..100 {
            let spec = GenSpec::sampled(seed);
            let (_, qs) = generate(&spec);
            let orders: BTreeSet<usize> = qs.iter().map(|q| q.order).collect();
            assert_eq!(
                orders,
                (0..=spec.max_question_order).collect(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn pivot_yields_false_belief() {
        let spec = GenSpec {
            n_agents: 4,
            max_question_order: 3,
            seed: 11,
            ..GenSpec::default()
        };
        let (story, qs) = generate(&spec);
        let snap = world::final_snapshot(&story, 3).unwrap();
        assert!(qs.iter().any(
            |q| q.gold.as_deref() != Some(snap.state.placements[&q.object].container.as_str())
        ));
    }

    #[test]
    fn full_visibility_collapses_to_truth() {
        for seed in 0..50 {
            let spec = GenSpec {
                tell_rate: 0.0,
                distract_rate: 0.0,
                exit_rate: 0.0,
                false_belief_pivot: false,
                max_question_order: 3,
                seed,
                ..GenSpec::default()
            };
            let (story, qs) = generate(&spec);
            assert!(!story.render().iter().any(|l| l.contains("exited")));
            let snap = world::final_snapshot(&story, 3).unwrap();
            for q in qs {
                assert_eq!(q.gold.unwrap(), snap.state.placements[&q.object].container);
            }
        }
    }

    #[test]
    fn validation_rejects_out_of_range() {
        assert!(GenSpec {
            n_agents: 7,
            ..GenSpec::default()
        }
        .validate()
        .is_err());
        assert!(GenSpec {
            tell_rate: 1.5,
            ..GenSpec::default()
        }
        .validate()
        .is_err());
        assert!(GenSpec::default().validate().is_ok());
    }

    #[test]
    fn corpus_has_exact_size() {
        let (items, _) = corpus(
            &GenSpec {
                seed: 3,
                ..GenSpec::default()
            },
            25,
        );
        assert_eq!(items.len(), 25);
        for item in &items {
            let (_, q) = item.to_story_question().unwrap();
            assert_eq!(q.gold.as_deref(), Some(item.answer.as_str()));
        }
    }
}
