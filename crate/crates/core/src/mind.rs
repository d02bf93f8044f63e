//! Per-agent memory, reflection and plan making.
//!
//! Memories are tagged with topics when written, so retrieval is a pure
//! index operation: take the K most recent entries, keep those carrying the
//! topic. There is no importance weighting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::config::{AgentProfile, World, WorldConfig};
use crate::gateway::{parse_choice, Gateway, GatewayError, Message, Purpose};
use crate::prompt::{memory_list, persona, state_line, time_line, Prompt};
use crate::world::BasicState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    SensoryPerception,
    Summary,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub kind: MemoryKind,
    pub step: u32,
    pub topics: BTreeSet<String>,
    pub text: String,
}

impl MemoryEntry {
    pub fn new(kind: MemoryKind, step: u32, topics: impl IntoIterator<Item = String>, text: impl Into<String>) -> Self {
        Self { kind, step, topics: topics.into_iter().collect(), text: text.into() }
    }
}

/// Append-only, chronologically ordered memory of one agent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryStore {
    owner: String,
    entries: Vec<MemoryEntry>,
}

impl MemoryStore {
    pub fn new(owner: impl Into<String>) -> Self {
        Self { owner: owner.into(), entries: Vec::new() }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `entry`. Steps must not go backwards.
    pub fn record(&mut self, entry: MemoryEntry) {
        debug_assert!(
            self.entries.last().is_none_or(|last| last.step <= entry.step),
            "memory entries must be appended in step order"
        );
        self.entries.push(entry);
    }

    /// The `k` most recent entries, oldest first.
    pub fn recent(&self, k: usize) -> &[MemoryEntry] {
        &self.entries[self.entries.len().saturating_sub(k)..]
    }

    /// Entries among the `k` most recent that carry `topic`, oldest first.
    pub fn retrieve(&self, topic: &str, k: usize) -> Vec<&MemoryEntry> {
        self.recent(k).iter().filter(|e| e.topics.contains(topic)).collect()
    }

    /// Like [`retrieve`](Self::retrieve) but for entries carrying any of `topics`.
    pub fn retrieve_any(&self, topics: &BTreeSet<String>, k: usize) -> Vec<&MemoryEntry> {
        self.recent(k).iter().filter(|e| !e.topics.is_disjoint(topics)).collect()
    }

    /// Most recent entry carrying `topic`, searching the whole store.
    pub fn latest(&self, topic: &str) -> Option<&MemoryEntry> {
        self.entries.iter().rev().find(|e| e.topics.contains(topic))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(out, "{}", serde_json::to_string(e).expect("memory entry serializes")).unwrap();
        }
        out
    }

    pub fn from_jsonl(owner: impl Into<String>, reader: impl BufRead) -> Result<Self, serde_json::Error> {
        let mut store = Self::new(owner);
        for line in reader.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            store.entries.push(serde_json::from_str(&line)?);
        }
        Ok(store)
    }
}

/// Canonical topic tags and the surface phrases that signal them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopicLexicon {
    terms: BTreeMap<String, BTreeSet<String>>,
}

impl TopicLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tag: impl Into<String>, phrase: impl Into<String>) {
        self.terms.entry(tag.into()).or_default().insert(phrase.into());
    }

    /// Every action name and agent id becomes a tag; object tags come from config.
    pub fn for_world(config: &WorldConfig) -> Self {
        let mut lex = Self::new();
        for area in &config.areas {
            for action in &area.actions {
                lex.insert(action.name.clone(), action.name.clone());
            }
        }
        for agent in &config.agents {
            lex.insert(agent.id.clone(), agent.name.clone());
        }
        for (tag, phrases) in &config.objects {
            for p in phrases {
                lex.insert(tag.clone(), p.clone());
            }
        }
        lex
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn phrases(&self, tag: &str) -> Option<&BTreeSet<String>> {
        self.terms.get(tag)
    }

    /// Tags any of whose phrases occur in `text`, ignoring case.
    pub fn extract_topics(&self, text: &str) -> BTreeSet<String> {
        let hay = text.to_lowercase();
        self.terms
            .iter()
            .filter(|(_, phrases)| phrases.iter().any(|p| !p.is_empty() && hay.contains(&p.to_lowercase())))
            .map(|(tag, _)| tag.clone())
            .collect()
    }
}

pub fn extract_topics(text: &str, lexicon: &TopicLexicon) -> BTreeSet<String> {
    lexicon.extract_topics(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanOrigin {
    Initial,
    Periodic,
    PostDialogue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub text: String,
    pub created_step: u32,
    pub origin: PlanOrigin,
}

/// One reflection pass over `subjects`.
///
/// For each subject the related entries among the `k` most recent memories are
/// gathered from the store as it stood before the pass; subjects with none are
/// skipped without a call. New reflections are appended after all subjects
/// have been considered and returned in subject order. A failed call skips
/// that subject and leaves a diagnostic on the gateway.
pub fn reflect(
    world: &World,
    agent: &AgentProfile,
    store: &mut MemoryStore,
    subjects: &[String],
    k: usize,
    step: u32,
    gw: &mut Gateway,
) -> Vec<MemoryEntry> {
    let mut fresh = Vec::new();
    for subject in subjects {
        let related = store.retrieve(subject, k);
        if related.is_empty() {
            continue;
        }
        let label = world.topic_label(subject);
        let user = Prompt::new()
            .section("Time", time_line(world, step))
            .section(format!("Memories about {label}"), memory_list(&related))
            .section(
                "Task",
                format!(
                    "Reflect on these memories about {label}. Write one or two sentences of deeper insight \
                     about {label} from your own point of view. Reply with the insight only."
                ),
            );
        let request = gw.request(
            Purpose::Reflection,
            vec![Message::system(persona(world, agent).render()), Message::user(user.render())],
        );
        match gw.complete(request) {
            Ok(text) if !text.trim().is_empty() => {
                fresh.push(MemoryEntry::new(MemoryKind::Reflection, step, [subject.clone()], text.trim()));
            }
            Ok(_) => gw.warn(Some(&agent.id), Purpose::Reflection, format!("empty reflection on '{subject}' skipped")),
            Err(e) => gw.warn(Some(&agent.id), Purpose::Reflection, format!("reflection on '{subject}' skipped: {e}")),
        }
    }
    for entry in &fresh {
        store.record(entry.clone());
    }
    fresh
}

/// Periodic plan making from identity, basic state, recent memories and time.
pub fn make_plan(
    world: &World,
    agent: &AgentProfile,
    store: &MemoryStore,
    state: &BasicState,
    step: u32,
    gw: &mut Gateway,
) -> Result<Plan, GatewayError> {
    let k = world.config().retrieval_k;
    let recent: Vec<&MemoryEntry> = store.recent(k).iter().collect();
    let user = Prompt::new()
        .section("Time", time_line(world, step))
        .section("Basic state", state_line(world, state))
        .section("Recent memories", memory_list(&recent))
        .section(
            "Task",
            "Make a short plan for the rest of the day, starting from now. Keep the aim of staying happy in mind. \
             Reply with the plan only.",
        );
    let request = gw.request(
        Purpose::Plan,
        vec![Message::system(persona(world, agent).render()), Message::user(user.render())],
    );
    let text = gw.complete(request)?;
    plan_from_reply(text, step, PlanOrigin::Periodic, Purpose::Plan)
}

fn plan_from_reply(text: String, step: u32, origin: PlanOrigin, purpose: Purpose) -> Result<Plan, GatewayError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(GatewayError::Decode { purpose, message: "empty plan".into() });
    }
    Ok(Plan { text: text.to_string(), created_step: step, origin })
}

pub const WILLINGNESS_QUESTION: &str = "Would you like to update your plan after this conversation?";

/// Asks whether the conversation changed the agent's mind; on "yes" makes a
/// new plan. An unreadable answer counts as "no" and leaves one diagnostic.
pub fn maybe_update_plan_after_dialogue(
    world: &World,
    agent: &AgentProfile,
    current: Option<&Plan>,
    summary: &str,
    step: u32,
    gw: &mut Gateway,
) -> Result<Option<Plan>, GatewayError> {
    let system = persona(world, agent).render();
    let base = Prompt::new()
        .section("Time", time_line(world, step))
        .section_opt("Current plan", current.map(|p| p.text.clone()))
        .section("Conversation summary", summary);
    let ask = base.clone().section(
        "Task",
        format!("{WILLINGNESS_QUESTION} Answer with `ANSWER: yes` or `ANSWER: no`."),
    );
    let request = gw.request(Purpose::Plan, vec![Message::system(system.clone()), Message::user(ask.render())]);
    let answer = gw.complete_parsed(request, |t| parse_choice(t, &["yes", "no"]).ok())?;
    match answer.as_deref() {
        Some("yes") => {}
        Some(_) => return Ok(None),
        None => {
            gw.warn(
                Some(&agent.id),
                Purpose::Plan,
                "could not read plan-update willingness; keeping the current plan",
            );
            return Ok(None);
        }
    }
    let write = base.section(
        "Task",
        "Write your updated plan for the rest of the day, taking the conversation into account. \
         Reply with the plan only.",
    );
    let request = gw.request(Purpose::Plan, vec![Message::system(system), Message::user(write.render())]);
    let text = gw.complete(request)?;
    plan_from_reply(text, step, PlanOrigin::PostDialogue, Purpose::Plan).map(Some)
}
