//! The sandbox: basic-state dynamics, sensory outcomes and the step loop.

mod decision;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use decision::{capture_decision, decide_action, menu_text, ActionDecision, Capture, DECISION_MARKER};

use crate::config::{Caps, World};
use crate::dialogue::{
    run_session, summarize, AttitudeInjection, DialogueSession, EndReason, SessionFailure,
};
use crate::gateway::{Diagnostic, Gateway, GatewayError, Purpose};
use crate::mind::{make_plan, maybe_update_plan_after_dialogue, reflect, MemoryEntry, MemoryKind, MemoryStore, Plan, PlanOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicState {
    pub happiness: f64,
    pub energy: f64,
    pub satiety: f64,
}

impl BasicState {
    pub fn new(happiness: f64, energy: f64, satiety: f64) -> Self {
        Self { happiness, energy, satiety }
    }

    pub fn clamped(mut self, caps: &Caps) -> Self {
        self.energy = self.energy.clamp(0.0, caps.energy);
        self.satiety = self.satiety.clamp(0.0, caps.satiety);
        self
    }
}

impl Default for BasicState {
    fn default() -> Self {
        Self::new(5.0, 5.0, 5.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub happiness_drain_per_step: f64,
    pub energy_drain_per_step: f64,
    pub satiety_drain_per_step: f64,
    /// Scales the happiness drain while satiety is zero.
    pub starving_multiplier: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            happiness_drain_per_step: 0.0,
            energy_drain_per_step: 1.0,
            satiety_drain_per_step: 1.0,
            starving_multiplier: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensoryOutcome {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub d_happiness: f64,
    #[serde(default)]
    pub d_energy: f64,
    #[serde(default)]
    pub d_satiety: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionKind {
    pub name: String,
    pub area: String,
    pub display_phrase: String,
    /// Topic tag consulted when deciding about this action.
    pub topic: String,
}

/// The starving check looks at satiety before this step's drain.
pub fn decay_step(state: BasicState, decay: &DecayConfig, caps: &Caps) -> BasicState {
    let factor = if state.satiety == 0.0 { decay.starving_multiplier } else { 1.0 };
    BasicState {
        happiness: state.happiness - decay.happiness_drain_per_step * factor,
        energy: state.energy - decay.energy_drain_per_step,
        satiety: state.satiety - decay.satiety_drain_per_step,
    }
    .clamped(caps)
}

pub const ENERGETIC_IMPRESSION: &str = "make me energetic";
pub const FULL_IMPRESSION: &str = "make me full";
pub const IMPRESSION_THRESHOLD: f64 = 3.0;

/// Applies one step of `action`. Without a sense-map entry nothing changes;
/// an entry with no description and no auto-impression changes state only.
pub fn apply_action(
    state: BasicState,
    action: &ActionKind,
    outcome: Option<&SensoryOutcome>,
    caps: &Caps,
    step: u32,
) -> (BasicState, Option<MemoryEntry>) {
    let Some(outcome) = outcome else {
        return (state, None);
    };
    let next = BasicState {
        happiness: state.happiness + outcome.d_happiness,
        energy: state.energy + outcome.d_energy,
        satiety: state.satiety + outcome.d_satiety,
    }
    .clamped(caps);
    let mut parts = Vec::new();
    if !outcome.description.trim().is_empty() {
        parts.push(outcome.description.trim());
    }
    if outcome.d_energy > IMPRESSION_THRESHOLD {
        parts.push(ENERGETIC_IMPRESSION);
    }
    if outcome.d_satiety > IMPRESSION_THRESHOLD {
        parts.push(FULL_IMPRESSION);
    }
    let memory = (!parts.is_empty()).then(|| {
        MemoryEntry::new(
            MemoryKind::SensoryPerception,
            step,
            [action.name.clone(), action.topic.clone()],
            parts.join(", "),
        )
    });
    (next, memory)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: String,
    pub state: BasicState,
    pub action: String,
    pub area: String,
    pub memory: MemoryStore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Number of completed steps.
    pub step: u32,
    pub agents: Vec<AgentState>,
}

impl WorldState {
    pub fn new(world: &World) -> Self {
        let agents = world
            .agents()
            .iter()
            .map(|p| AgentState {
                id: p.id.clone(),
                state: p.initial_state.clamped(&world.config().caps),
                action: p.initial_action.clone(),
                area: world.action(&p.initial_action).expect("validated initial action").area.clone(),
                memory: MemoryStore::new(&p.id),
                plan: p
                    .initial_plan
                    .as_ref()
                    .filter(|_| p.plan_enabled)
                    .map(|text| Plan { text: text.clone(), created_step: 0, origin: PlanOrigin::Initial }),
            })
            .collect();
        Self { step: 0, agents }
    }

    pub fn agent(&self, id: &str) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn is_finished(&self, world: &World) -> bool {
        self.step >= world.config().total_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub agent: String,
    pub action: String,
    pub area: String,
    pub state: BasicState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    pub memories: usize,
}

/// One line of the step journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Decay {
        agent: String,
        before: BasicState,
        after: BasicState,
    },
    Decision(ActionDecision),
    Action {
        agent: String,
        action: String,
        area: String,
        moved: bool,
        before: BasicState,
        after: BasicState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        memory: Option<String>,
    },
    Session {
        session_id: String,
        participants: [String; 2],
        rounds: usize,
        ended_by: EndReason,
    },
    SessionAborted {
        session_id: String,
        participants: [String; 2],
        rounds: usize,
        agent: String,
        purpose: Purpose,
        error: String,
    },
    Summary {
        agent: String,
        session_id: String,
        topics: BTreeSet<String>,
        text: String,
    },
    SummaryMissing {
        agent: String,
        session_id: String,
        error: String,
    },
    PlanUpdated {
        agent: String,
        plan: Plan,
    },
    PlanKept {
        agent: String,
        origin: PlanOrigin,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    ReflectionPass {
        agent: String,
    },
    Reflection {
        agent: String,
        topics: BTreeSet<String>,
        text: String,
    },
    Warning(Diagnostic),
    StepEnd {
        agents: Vec<AgentSnapshot>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u32,
    pub events: Vec<Event>,
    /// Full transcripts of sessions that produced at least one round.
    pub sessions: Vec<DialogueSession>,
}

impl StepLog {
    pub fn decisions(&self) -> impl Iterator<Item = &ActionDecision> {
        self.events.iter().filter_map(|e| match e {
            Event::Decision(d) => Some(d),
            _ => None,
        })
    }

    pub fn end_state(&self, agent: &str) -> Option<&BasicState> {
        self.events.iter().rev().find_map(|e| match e {
            Event::StepEnd { agents } => agents.iter().find(|a| a.agent == agent).map(|a| &a.state),
            _ => None,
        })
    }

    fn push_diagnostics(&mut self, gw: &mut Gateway) {
        self.events.extend(gw.take_diagnostics().into_iter().map(Event::Warning));
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("step {step} aborted on {purpose} call for agent '{agent}': {source}")]
pub struct StepError {
    pub step: u32,
    pub agent: String,
    pub purpose: Purpose,
    pub source: GatewayError,
    /// Events logged before the failure.
    pub partial: StepLog,
}

fn session_id(step: u32, a: &str, b: &str) -> String {
    format!("s{step:03}-{a}-{b}")
}

/// Advances the world by one step.
pub fn step_world(
    world: &World,
    injections: &[AttitudeInjection],
    state: &mut WorldState,
    gw: &mut Gateway,
) -> Result<StepLog, Box<StepError>> {
    assert!(!state.is_finished(world), "world already ran all {} steps", world.config().total_steps);
    let cfg = world.config();
    let step = state.step + 1;
    let k = cfg.retrieval_k;
    let mut log = StepLog { step, ..StepLog::default() };
    let mut met: BTreeSet<(usize, usize)> = BTreeSet::new();

    for i in 0..state.agents.len() {
        let profile = &world.agents()[i];

        let before = state.agents[i].state;
        let after = decay_step(before, &cfg.decay, &cfg.caps);
        state.agents[i].state = after;
        log.events.push(Event::Decay { agent: profile.id.clone(), before, after });

        let menu: Vec<_> = world.actions().iter().filter(|a| a.name != state.agents[i].action).collect();
        let decision = match decide_action(world, profile, &state.agents[i], &menu, step, gw) {
            Ok(d) => d,
            Err(source) => {
                log.push_diagnostics(gw);
                return Err(Box::new(StepError {
                    step,
                    agent: profile.id.clone(),
                    purpose: Purpose::ActionDecision,
                    source,
                    partial: log,
                }));
            }
        };
        let moved = match &decision.switch_to {
            Some(name) => {
                let action = world.action(name).expect("captured from menu");
                let agent = &mut state.agents[i];
                let moved = agent.area != action.area;
                agent.action = action.name.clone();
                agent.area = action.area.clone();
                moved
            }
            None => false,
        };
        log.events.push(Event::Decision(decision));

        let agent = &mut state.agents[i];
        let action = world.action(&agent.action).expect("validated action");
        let before = agent.state;
        let (after, memory) = apply_action(before, action, profile.sense_map.get(&action.name), &cfg.caps, step);
        agent.state = after;
        let memory_text = memory.as_ref().map(|m| m.text.clone());
        if let Some(m) = memory {
            agent.memory.record(m);
        }
        log.events.push(Event::Action {
            agent: profile.id.clone(),
            action: action.name.clone(),
            area: action.area.clone(),
            moved,
            before,
            after,
            memory: memory_text,
        });

        for j in 0..state.agents.len() {
            if j == i || state.agents[j].area != state.agents[i].area || met.contains(&(i.min(j), i.max(j))) {
                continue;
            }
            met.insert((i.min(j), i.max(j)));
            let (first, second) = (i.min(j), i.max(j));
            run_pair(world, injections, state, gw, &mut log, step, first, second);
        }
        log.push_diagnostics(gw);
    }

    if step.is_multiple_of(cfg.reflection_period) {
        for (i, profile) in world.agents().iter().enumerate() {
            if !profile.reflection_enabled {
                continue;
            }
            log.events.push(Event::ReflectionPass { agent: profile.id.clone() });
            let fresh = reflect(world, profile, &mut state.agents[i].memory, &profile.subjects, k, step, gw);
            log.push_diagnostics(gw);
            for entry in fresh {
                log.events.push(Event::Reflection { agent: profile.id.clone(), topics: entry.topics, text: entry.text });
            }
        }
    }

    if step.is_multiple_of(cfg.plan_period) {
        for (i, profile) in world.agents().iter().enumerate() {
            if !profile.plan_enabled {
                continue;
            }
            let agent = &state.agents[i];
            match make_plan(world, profile, &agent.memory, &agent.state, step, gw) {
                Ok(plan) => {
                    state.agents[i].plan = Some(plan.clone());
                    log.events.push(Event::PlanUpdated { agent: profile.id.clone(), plan });
                }
                Err(e) => log.events.push(Event::PlanKept {
                    agent: profile.id.clone(),
                    origin: PlanOrigin::Periodic,
                    error: Some(e.to_string()),
                }),
            }
            log.push_diagnostics(gw);
        }
    }

    log.events.push(Event::StepEnd {
        agents: state
            .agents
            .iter()
            .map(|a| AgentSnapshot {
                agent: a.id.clone(),
                action: a.action.clone(),
                area: a.area.clone(),
                state: a.state,
                plan: a.plan.as_ref().map(|p| p.text.clone()),
                memories: a.memory.len(),
            })
            .collect(),
    });
    state.step = step;
    Ok(log)
}

/// One session between agents `a` < `b` plus summaries and plan follow-ups.
#[allow(clippy::too_many_arguments)]
fn run_pair(
    world: &World,
    injections: &[AttitudeInjection],
    state: &mut WorldState,
    gw: &mut Gateway,
    log: &mut StepLog,
    step: u32,
    a: usize,
    b: usize,
) {
    let (pa, pb) = (&world.agents()[a], &world.agents()[b]);
    let id = session_id(step, &pa.id, &pb.id);
    let participants = [pa.id.clone(), pb.id.clone()];
    let outcome = run_session(
        world,
        [(pa, &state.agents[a]), (pb, &state.agents[b])],
        &world.config().dialogue,
        injections,
        step,
        &id,
        gw,
    );
    let session = match outcome {
        Ok(session) => session,
        Err(failure) => {
            let SessionFailure { session, agent, purpose, source } = *failure;
            log.events.push(Event::SessionAborted {
                session_id: id,
                participants,
                rounds: session.rounds.len(),
                agent,
                purpose,
                error: source.to_string(),
            });
            if !session.rounds.is_empty() {
                log.sessions.push(session);
            }
            return;
        }
    };
    log.events.push(Event::Session {
        session_id: id.clone(),
        participants: participants.clone(),
        rounds: session.rounds.len(),
        ended_by: session.ended_by.expect("completed session has an end reason"),
    });

    let mut summaries: Vec<(usize, String)> = Vec::new();
    for idx in [a, b] {
        let profile = &world.agents()[idx];
        match summarize(world, &session, profile, step, gw) {
            Ok(entry) => {
                log.events.push(Event::Summary {
                    agent: profile.id.clone(),
                    session_id: id.clone(),
                    topics: entry.topics.clone(),
                    text: entry.text.clone(),
                });
                summaries.push((idx, entry.text.clone()));
                state.agents[idx].memory.record(entry);
            }
            Err(e) => log.events.push(Event::SummaryMissing {
                agent: profile.id.clone(),
                session_id: id.clone(),
                error: e.to_string(),
            }),
        }
    }
    log.sessions.push(session);

    for (idx, summary) in summaries {
        let profile = &world.agents()[idx];
        if !profile.plan_enabled {
            continue;
        }
        let current = state.agents[idx].plan.clone();
        match maybe_update_plan_after_dialogue(world, profile, current.as_ref(), &summary, step, gw) {
            Ok(Some(plan)) => {
                state.agents[idx].plan = Some(plan.clone());
                log.events.push(Event::PlanUpdated { agent: profile.id.clone(), plan });
            }
            Ok(None) => log.events.push(Event::PlanKept {
                agent: profile.id.clone(),
                origin: PlanOrigin::PostDialogue,
                error: None,
            }),
            Err(e) => log.events.push(Event::PlanKept {
                agent: profile.id.clone(),
                origin: PlanOrigin::PostDialogue,
                error: Some(e.to_string()),
            }),
        }
    }
}

/// Runs every remaining step. Stops at the first aborted step.
pub fn run_world(
    world: &World,
    injections: &[AttitudeInjection],
    state: &mut WorldState,
    gw: &mut Gateway,
) -> Result<Vec<StepLog>, (Vec<StepLog>, Box<StepError>)> {
    let mut logs = Vec::new();
    while !state.is_finished(world) {
        match step_world(world, injections, state, gw) {
            Ok(log) => logs.push(log),
            Err(e) => return Err((logs, e)),
        }
    }
    Ok(logs)
}
