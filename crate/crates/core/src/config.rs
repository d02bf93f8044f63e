//! World configuration: loading, cross-reference validation and the compiled
//! [`World`] used by the engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::SessionConfig;
use crate::mind::TopicLexicon;
use crate::world::{ActionKind, BasicState, DecayConfig, SensoryOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub name: String,
    /// Minutes after midnight at which step 1 begins.
    #[serde(default = "default_start_minute")]
    pub start_minute: u32,
    pub step_minutes: u32,
    pub total_steps: u32,
    pub reflection_period: u32,
    pub plan_period: u32,
    #[serde(default = "default_retrieval_k")]
    pub retrieval_k: usize,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub dialogue: SessionConfig,
    pub areas: Vec<AreaSpec>,
    pub agents: Vec<AgentProfile>,
    #[serde(default)]
    pub relationships: Vec<Relationship>,
    /// Extra topic tags (objects) and the surface phrases that signal them.
    #[serde(default)]
    pub objects: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub cues: CueLexicon,
    #[serde(default)]
    pub llm: LlmSettings,
}

fn default_start_minute() -> u32 {
    9 * 60
}

pub const DEFAULT_RETRIEVAL_K: usize = 10;

fn default_retrieval_k() -> usize {
    DEFAULT_RETRIEVAL_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub energy: f64,
    pub satiety: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Self { energy: 10.0, satiety: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaSpec {
    pub name: String,
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub name: String,
    pub display_phrase: String,
    /// Topic tag whose memories inform decisions about this action; defaults
    /// to the action name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub initial_action: String,
    #[serde(default)]
    pub initial_state: BasicState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_plan: Option<String>,
    /// Reflection subject set: action names, object tags and agent ids.
    #[serde(default)]
    pub subjects: Vec<String>,
    #[serde(default)]
    pub sense_map: BTreeMap<String, SensoryOutcome>,
    #[serde(default = "yes")]
    pub reflection_enabled: bool,
    #[serde(default = "yes")]
    pub plan_enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relationship {
    pub between: [String; 2],
    pub description: String,
}

/// Keyword cues used to read action decisions out of free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueLexicon {
    #[serde(default = "default_affirmative")]
    pub affirmative: Vec<String>,
    #[serde(default = "default_refusal")]
    pub refusal: Vec<String>,
}

fn default_affirmative() -> Vec<String> {
    ["would like", "want to", "decide", "choose", "will"].map(String::from).to_vec()
}

fn default_refusal() -> Vec<String> {
    ["stay", "continue", "remain"].map(String::from).to_vec()
}

impl Default for CueLexicon {
    fn default() -> Self {
        Self { affirmative: default_affirmative(), refusal: default_refusal() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Extra attempts allowed when a reply cannot be parsed.
    #[serde(default = "default_parse_retries")]
    pub parse_retries: u32,
}

fn default_max_tokens() -> u32 {
    crate::gateway::DEFAULT_MAX_TOKENS
}

fn default_parse_retries() -> u32 {
    crate::gateway::DEFAULT_PARSE_RETRIES
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self { max_tokens: default_max_tokens(), parse_retries: default_parse_retries() }
    }
}

/// One failed check, located by a path into the configuration document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} is empty")]
    Empty { path: String },
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{} violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> Vec<Violation> {
        match self {
            ConfigError::Invalid(v) => v.clone(),
            other => vec![Violation::new("$", other.to_string())],
        }
    }
}

pub(crate) fn read_document(path: &Path) -> Result<String, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if text.trim().is_empty() {
        return Err(ConfigError::Empty { path: path.display().to_string() });
    }
    Ok(text)
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_document(path)?)
    }

    pub fn action_names(&self) -> impl Iterator<Item = &str> {
        self.areas.iter().flat_map(|a| a.actions.iter().map(|x| x.name.as_str()))
    }

    pub fn agent(&self, id: &str) -> Option<&AgentProfile> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn agent_mut(&mut self, id: &str) -> Option<&mut AgentProfile> {
        self.agents.iter_mut().find(|a| a.id == id)
    }

    pub fn action_mut(&mut self, name: &str) -> Option<&mut ActionSpec> {
        self.areas.iter_mut().flat_map(|a| a.actions.iter_mut()).find(|x| x.name == name)
    }

    /// Topic tags known to the world: action names, agent ids and object tags.
    pub fn topic_tags(&self) -> BTreeSet<String> {
        self.action_names()
            .map(str::to_string)
            .chain(self.agents.iter().map(|a| a.id.clone()))
            .chain(self.objects.keys().cloned())
            .collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut v = |path: String, msg: String| out.push(Violation::new(path, msg));

        if self.name.trim().is_empty() {
            v("name".into(), "must not be empty".into());
        }
        for (field, value) in [
            ("step_minutes", self.step_minutes),
            ("total_steps", self.total_steps),
            ("reflection_period", self.reflection_period),
            ("plan_period", self.plan_period),
        ] {
            if value < 1 {
                v(field.into(), "must be at least 1".into());
            }
        }
        if self.retrieval_k < 1 {
            v("retrieval_k".into(), "must be at least 1".into());
        }
        for (field, cap) in [("caps.energy", self.caps.energy), ("caps.satiety", self.caps.satiety)] {
            if !(cap.is_finite() && cap > 0.0) {
                v(field.into(), format!("must be a positive number, got {cap}"));
            }
        }
        for (field, drain) in [
            ("decay.happiness_drain_per_step", self.decay.happiness_drain_per_step),
            ("decay.energy_drain_per_step", self.decay.energy_drain_per_step),
            ("decay.satiety_drain_per_step", self.decay.satiety_drain_per_step),
        ] {
            if !(drain.is_finite() && drain >= 0.0) {
                v(field.into(), format!("must be a non-negative number, got {drain}"));
            }
        }
        if !(self.decay.starving_multiplier.is_finite() && self.decay.starving_multiplier >= 1.0) {
            v(
                "decay.starving_multiplier".into(),
                format!("must be at least 1, got {}", self.decay.starving_multiplier),
            );
        }
        if let Err(msg) = self.dialogue.check() {
            v("dialogue".into(), msg);
        }
        if self.llm.max_tokens < 1 {
            v("llm.max_tokens".into(), "must be at least 1".into());
        }

        let mut area_names = BTreeSet::new();
        let mut action_names = BTreeSet::new();
        if self.areas.is_empty() {
            v("areas".into(), "at least one area is required".into());
        }
        for (ai, area) in self.areas.iter().enumerate() {
            if area.name.trim().is_empty() {
                v(format!("areas[{ai}].name"), "must not be empty".into());
            } else if !area_names.insert(area.name.as_str()) {
                v(format!("areas[{ai}].name"), format!("duplicate area '{}'", area.name));
            }
            for (xi, action) in area.actions.iter().enumerate() {
                let path = format!("areas[{ai}].actions[{xi}]");
                if action.name.trim().is_empty() {
                    v(format!("{path}.name"), "must not be empty".into());
                } else if !action_names.insert(action.name.as_str()) {
                    v(
                        format!("{path}.name"),
                        format!("action '{}' is listed in more than one place", action.name),
                    );
                }
                if action.display_phrase.trim().is_empty() {
                    v(format!("{path}.display_phrase"), "must not be empty".into());
                }
            }
        }

        let mut agent_ids = BTreeSet::new();
        if self.agents.is_empty() {
            v("agents".into(), "at least one agent is required".into());
        }
        for (gi, agent) in self.agents.iter().enumerate() {
            if agent.id.trim().is_empty() {
                v(format!("agents[{gi}].id"), "must not be empty".into());
            } else if !agent_ids.insert(agent.id.as_str()) {
                v(format!("agents[{gi}].id"), format!("duplicate agent id '{}'", agent.id));
            }
            if action_names.contains(agent.id.as_str()) || self.objects.contains_key(&agent.id) {
                v(format!("agents[{gi}].id"), format!("'{}' collides with an action or object tag", agent.id));
            }
        }
        let tags: BTreeSet<String> = action_names
            .iter()
            .map(|s| s.to_string())
            .chain(agent_ids.iter().map(|s| s.to_string()))
            .chain(self.objects.keys().cloned())
            .collect();

        for (ai, area) in self.areas.iter().enumerate() {
            for (xi, action) in area.actions.iter().enumerate() {
                if let Some(topic) = &action.topic {
                    if !tags.contains(topic) {
                        v(format!("areas[{ai}].actions[{xi}].topic"), format!("unknown topic tag '{topic}'"));
                    }
                }
            }
        }

        for (gi, agent) in self.agents.iter().enumerate() {
            let path = format!("agents[{gi}]");
            if agent.name.trim().is_empty() {
                v(format!("{path}.name"), "must not be empty".into());
            }
            if agent.identity.as_deref().is_some_and(|s| s.trim().is_empty()) {
                v(format!("{path}.identity"), "must not be empty when present".into());
            }
            if agent.initial_plan.as_deref().is_some_and(|s| s.trim().is_empty()) {
                v(format!("{path}.initial_plan"), "must not be empty when present".into());
            }
            if !action_names.contains(agent.initial_action.as_str()) {
                v(format!("{path}.initial_action"), format!("unknown action '{}'", agent.initial_action));
            }
            let s = &agent.initial_state;
            if !s.happiness.is_finite() {
                v(format!("{path}.initial_state.happiness"), "must be finite".into());
            }
            if !(0.0..=self.caps.energy).contains(&s.energy) {
                v(format!("{path}.initial_state.energy"), format!("must lie in [0, {}]", self.caps.energy));
            }
            if !(0.0..=self.caps.satiety).contains(&s.satiety) {
                v(format!("{path}.initial_state.satiety"), format!("must lie in [0, {}]", self.caps.satiety));
            }
            for (si, subject) in agent.subjects.iter().enumerate() {
                if !tags.contains(subject) {
                    v(format!("{path}.subjects[{si}]"), format!("unknown subject '{subject}'"));
                }
            }
            for (action, outcome) in &agent.sense_map {
                let key = format!("{path}.sense_map[\"{action}\"]");
                if !action_names.contains(action.as_str()) {
                    v(key.clone(), format!("unknown action '{action}'"));
                }
                if ![outcome.d_happiness, outcome.d_energy, outcome.d_satiety].iter().all(|d| d.is_finite()) {
                    v(key, "deltas must be finite".into());
                }
            }
        }

        let mut pairs = BTreeSet::new();
        for (ri, rel) in self.relationships.iter().enumerate() {
            let path = format!("relationships[{ri}]");
            for (k, id) in rel.between.iter().enumerate() {
                if !agent_ids.contains(id.as_str()) {
                    v(format!("{path}.between[{k}]"), format!("unknown agent '{id}'"));
                }
            }
            if rel.between[0] == rel.between[1] {
                v(format!("{path}.between"), "an agent cannot relate to itself".into());
            }
            let mut key = rel.between.clone();
            key.sort();
            if !pairs.insert(key) {
                v(format!("{path}.between"), "pair already has a relationship".into());
            }
            if rel.description.trim().is_empty() {
                v(format!("{path}.description"), "must not be empty".into());
            }
        }

        for (tag, phrases) in &self.objects {
            let path = format!("objects[\"{tag}\"]");
            if tag.trim().is_empty() {
                v(path.clone(), "tag must not be empty".into());
            }
            if phrases.is_empty() || phrases.iter().any(|p| p.trim().is_empty()) {
                v(path, "needs at least one non-empty phrase".into());
            }
        }
        if self.cues.affirmative.iter().any(|c| c.trim().is_empty()) {
            v("cues.affirmative".into(), "cues must not be empty strings".into());
        }
        if self.cues.refusal.iter().any(|c| c.trim().is_empty()) {
            v("cues.refusal".into(), "cues must not be empty strings".into());
        }
        out
    }

    pub fn compile(self) -> Result<World, ConfigError> {
        World::new(self)
    }
}

/// A validated world with derived lookup tables. Immutable during a run.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    actions: Vec<ActionKind>,
    lexicon: TopicLexicon,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, ConfigError> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        let actions = config
            .areas
            .iter()
            .flat_map(|area| {
                area.actions.iter().map(move |a| ActionKind {
                    name: a.name.clone(),
                    area: area.name.clone(),
                    display_phrase: a.display_phrase.clone(),
                    topic: a.topic.clone().unwrap_or_else(|| a.name.clone()),
                })
            })
            .collect();
        let lexicon = TopicLexicon::for_world(&config);
        Ok(Self { config, actions, lexicon })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// All actions in area order.
    pub fn actions(&self) -> &[ActionKind] {
        &self.actions
    }

    pub fn action(&self, name: &str) -> Option<&ActionKind> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn agents(&self) -> &[AgentProfile] {
        &self.config.agents
    }

    pub fn agent(&self, id: &str) -> Option<&AgentProfile> {
        self.config.agent(id)
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.config.agents.iter().position(|a| a.id == id)
    }

    pub fn lexicon(&self) -> &TopicLexicon {
        &self.lexicon
    }

    pub fn relationship(&self, a: &str, b: &str) -> Option<&str> {
        self.config
            .relationships
            .iter()
            .find(|r| (r.between[0] == a && r.between[1] == b) || (r.between[0] == b && r.between[1] == a))
            .map(|r| r.description.as_str())
    }

    pub fn relationships_of(&self, agent: &str) -> Vec<&Relationship> {
        self.config.relationships.iter().filter(|r| r.between.iter().any(|id| id == agent)).collect()
    }

    /// Human label for a topic tag: agent names for agent ids, the tag otherwise.
    pub fn topic_label<'a>(&'a self, tag: &'a str) -> &'a str {
        self.agent(tag).map_or(tag, |a| a.name.as_str())
    }

    /// Wall-clock label for a 1-based step.
    pub fn clock(&self, step: u32) -> String {
        let minutes = self.config.start_minute + step.saturating_sub(1) * self.config.step_minutes;
        format!("{:02}:{:02}", (minutes / 60) % 24, minutes % 60)
    }
}
