//! Two-agent conversations with attitude injection, end decisions and
//! per-participant summaries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::{AgentProfile, World};
use crate::gateway::{parse_choice, Gateway, GatewayError, Message, Purpose};
use crate::mind::{MemoryEntry, MemoryKind};
use crate::prompt::{identity_title, memory_list, persona, time_line, Prompt, ATTITUDE_TITLE};
use crate::world::AgentState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// L: no end decision is asked before this many rounds.
    pub min_rounds: u32,
    /// U: the session always ends here.
    pub max_rounds: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { min_rounds: 2, max_rounds: 4 }
    }
}

impl SessionConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.min_rounds < 1 {
            return Err("min_rounds must be at least 1".into());
        }
        if self.max_rounds < self.min_rounds {
            return Err(format!(
                "max_rounds ({}) must not be below min_rounds ({})",
                self.max_rounds, self.min_rounds
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionScope {
    #[default]
    AllDialogue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttitudeInjection {
    pub target_agent: String,
    pub instruction: String,
    #[serde(default)]
    pub scope: InjectionScope,
}

impl AttitudeInjection {
    pub fn new(target_agent: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self { target_agent: target_agent.into(), instruction: instruction.into(), scope: InjectionScope::AllDialogue }
    }
}

/// Instructions aimed at `agent`, in the order given.
pub fn active_injections<'a>(agent: &str, injections: &'a [AttitudeInjection]) -> Vec<&'a str> {
    injections
        .iter()
        .filter(|i| i.target_agent == agent)
        .map(|i| i.instruction.as_str())
        .collect()
}

/// Body of the attitude section for `agent`, if any injection targets it.
pub fn attitude_for(agent: &str, injections: &[AttitudeInjection]) -> Option<String> {
    let active = active_injections(agent, injections);
    (!active.is_empty()).then(|| active.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    EndDecision,
    CapReached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub speaker: String,
    pub text: String,
    pub injections_active: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub step: u32,
    pub participants: [String; 2],
    pub rounds: Vec<Round>,
    /// Absent while running and for aborted sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_by: Option<EndReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionFailure {
    /// The session as far as it got.
    pub session: DialogueSession,
    pub agent: String,
    pub purpose: Purpose,
    pub source: GatewayError,
}

fn transcript(world: &World, session: &DialogueSession) -> String {
    if session.rounds.is_empty() {
        return "(the conversation has not started yet)".into();
    }
    session
        .rounds
        .iter()
        .map(|r| format!("{}: {}", world.agent(&r.speaker).map_or(r.speaker.as_str(), |a| a.name.as_str()), r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Speaker context: own persona, the partner's identity, the relationship and
/// any attitude aimed at the speaker.
fn speaker_system(world: &World, me: &AgentProfile, partner: &AgentProfile, injections: &[AttitudeInjection]) -> String {
    persona(world, me)
        .section_opt(identity_title(&partner.name), partner.identity.as_deref())
        .section_opt("Relationship", world.relationship(&me.id, &partner.id))
        .section_opt(ATTITUDE_TITLE, attitude_for(&me.id, injections))
        .render()
}

fn turn_messages(
    world: &World,
    session: &DialogueSession,
    (me, my_state): (&AgentProfile, &AgentState),
    partner: &AgentProfile,
    injections: &[AttitudeInjection],
) -> Vec<Message> {
    let lexicon = world.lexicon();
    let mut topics: BTreeSet<String> = BTreeSet::from([partner.id.clone()]);
    for r in &session.rounds {
        topics.extend(lexicon.extract_topics(&r.text));
    }
    let memories = my_state.memory.retrieve_any(&topics, world.config().retrieval_k);
    let plan = if me.plan_enabled { my_state.plan.as_ref().map(|p| p.text.clone()) } else { None };
    let area = &my_state.area;
    let user = Prompt::new()
        .section("Time", time_line(world, session.step))
        .section_opt("Current plan", plan)
        .section("Relevant memories", memory_list(&memories))
        .section("Conversation so far", transcript(world, session))
        .section(
            "Task",
            format!(
                "You are talking with {} in the {area} area. Write what {} says next, one short utterance, \
                 without the speaker's name.",
                partner.name, me.name
            ),
        );
    vec![Message::system(speaker_system(world, me, partner, injections)), Message::user(user.render())]
}

/// Asks the agent who just spoke whether to stop. Unreadable answers mean
/// "continue" and leave a diagnostic.
pub fn should_end(
    world: &World,
    session: &DialogueSession,
    me: &AgentProfile,
    partner: &AgentProfile,
    injections: &[AttitudeInjection],
    gw: &mut Gateway,
) -> Result<bool, GatewayError> {
    let user = Prompt::new()
        .section("Conversation so far", transcript(world, session))
        .section(
            "Task",
            format!(
                "Do you, {}, want to end the conversation with {} now? Answer with `ANSWER: end` or `ANSWER: continue`.",
                me.name, partner.name
            ),
        );
    let request = gw.request(
        Purpose::EndDecision,
        vec![Message::system(speaker_system(world, me, partner, injections)), Message::user(user.render())],
    );
    match gw.complete_parsed(request, |t| parse_choice(t, &["end", "continue"]).ok())? {
        Some(label) => Ok(label == "end"),
        None => {
            gw.warn(Some(&me.id), Purpose::EndDecision, "could not read end decision; continuing");
            Ok(false)
        }
    }
}

/// Runs a session between two co-located agents; the first pair member
/// speaks first.
pub fn run_session(
    world: &World,
    pair: [(&AgentProfile, &AgentState); 2],
    config: &SessionConfig,
    injections: &[AttitudeInjection],
    step: u32,
    id: &str,
    gw: &mut Gateway,
) -> Result<DialogueSession, Box<SessionFailure>> {
    let mut session = DialogueSession {
        id: id.to_string(),
        step,
        participants: [pair[0].0.id.clone(), pair[1].0.id.clone()],
        rounds: Vec::new(),
        ended_by: None,
    };
    let fail = |session: DialogueSession, agent: &AgentProfile, purpose, source| Box::new(SessionFailure {
        session,
        agent: agent.id.clone(),
        purpose,
        source,
    });
    for n in 1..=config.max_rounds {
        let (me, my_state) = pair[((n - 1) % 2) as usize];
        let partner = pair[(n % 2) as usize].0;
        let messages = turn_messages(world, &session, (me, my_state), partner, injections);
        let request = gw.request(Purpose::DialogueTurn, messages);
        let text = match gw.complete(request) {
            Ok(t) => t.trim().to_string(),
            Err(e) => return Err(fail(session, me, Purpose::DialogueTurn, e)),
        };
        session.rounds.push(Round {
            speaker: me.id.clone(),
            text,
            injections_active: active_injections(&me.id, injections).into_iter().map(String::from).collect(),
        });
        if n == config.max_rounds {
            session.ended_by = Some(EndReason::CapReached);
            break;
        }
        if n > config.min_rounds {
            match should_end(world, &session, me, partner, injections, gw) {
                Ok(true) => {
                    session.ended_by = Some(EndReason::EndDecision);
                    break;
                }
                Ok(false) => {}
                Err(e) => return Err(fail(session, me, Purpose::EndDecision, e)),
            }
        }
    }
    Ok(session)
}

/// The session from `agent`'s point of view, as a Summary memory.
pub fn summarize(
    world: &World,
    session: &DialogueSession,
    agent: &AgentProfile,
    step: u32,
    gw: &mut Gateway,
) -> Result<MemoryEntry, GatewayError> {
    let partner = session
        .participants
        .iter()
        .find(|p| **p != agent.id)
        .and_then(|p| world.agent(p))
        .map_or("your partner", |p| p.name.as_str());
    let user = Prompt::new()
        .section("Conversation", transcript(world, session))
        .section(
            "Task",
            format!(
                "Summarize your conversation with {partner} from {}'s point of view in one or two sentences. \
                 Reply with the summary only.",
                agent.name
            ),
        );
    let request = gw.request(
        Purpose::Summary,
        vec![Message::system(persona(world, agent).render()), Message::user(user.render())],
    );
    let text = gw.complete(request)?.trim().to_string();
    if text.is_empty() {
        return Err(GatewayError::Decode { purpose: Purpose::Summary, message: "empty summary".into() });
    }
    let topics = world.lexicon().extract_topics(&text);
    Ok(MemoryEntry::new(MemoryKind::Summary, step, topics, text))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::fixtures::{cafe, cafe_config};
    use crate::gateway::{ScriptRulebook, ScriptedBackend};
    use crate::prompt::strip_section;
    use crate::world::WorldState;

    fn gateway(rules: &str) -> Gateway {
        let book = ScriptRulebook::from_json(rules).unwrap();
        Gateway::new(Arc::new(ScriptedBackend::new(&book).unwrap()), 0, 0)
    }

    fn talk(world: &World, rules: &str, injections: &[AttitudeInjection]) -> (Result<DialogueSession, Box<SessionFailure>>, Gateway) {
        let state = WorldState::new(world);
        let mut gw = gateway(rules);
        let pair = [(&world.agents()[0], &state.agents[0]), (&world.agents()[1], &state.agents[1])];
        let out = run_session(world, pair, &world.config().dialogue, injections, 3, "s003-anty-agnes", &mut gw);
        (out, gw)
    }

    #[test]
    fn end_policies_bound_the_rounds() {
        let world = cafe();
        let (s, _) = talk(&world, r#"{"rules":[{"purpose":"end_decision","response":"continue"},{"response":"Hi."}]}"#, &[]);
        let s = s.unwrap();
        assert_eq!((s.rounds.len(), s.ended_by), (4, Some(EndReason::CapReached)));
        let (s, gw) = talk(&world, r#"{"rules":[{"purpose":"end_decision","response":"end"},{"response":"Hi."}]}"#, &[]);
        let s = s.unwrap();
        assert_eq!((s.rounds.len(), s.ended_by), (3, Some(EndReason::EndDecision)));
        let speakers: Vec<&str> = s.rounds.iter().map(|r| r.speaker.as_str()).collect();
        assert_eq!(speakers, ["anty", "agnes", "anty"]);
        // the end question goes to whoever just spoke
        let ask = gw.records().iter().find(|r| r.purpose == Purpose::EndDecision).unwrap();
        assert!(ask.request.messages[1].content.contains("Do you, Anty,"));
    }

    #[test]
    fn min_equal_to_max_never_asks() {
        let mut cfg = cafe_config();
        cfg.dialogue = SessionConfig { min_rounds: 3, max_rounds: 3 };
        let world = cfg.compile().unwrap();
        let (s, gw) = talk(&world, r#"{"rules":[{"response":"end"}]}"#, &[]);
        assert_eq!(s.unwrap().rounds.len(), 3);
        assert!(gw.records().iter().all(|r| r.purpose == Purpose::DialogueTurn));
    }

    #[test]
    fn unreadable_end_answer_continues_with_a_warning() {
        let world = cafe();
        let (s, mut gw) = talk(&world, r#"{"rules":[{"purpose":"end_decision","response":"hmm"},{"response":"Hi."}]}"#, &[]);
        assert_eq!(s.unwrap().rounds.len(), 4);
        assert_eq!(gw.take_diagnostics().len(), 1);
    }

    #[test]
    fn injection_reaches_only_its_target() {
        let world = cafe();
        let love = AttitudeInjection::new("agnes", "Love Coffee: when the talk turns to coffee, praise it warmly.");
        let rules = r#"{"rules":[{"purpose":"end_decision","response":"continue"},{"response":"Hi."}]}"#;
        let (s, gw) = talk(&world, rules, std::slice::from_ref(&love));
        let (_, control) = talk(&world, rules, &[]);
        let s = s.unwrap();
        assert_eq!(s.rounds[1].injections_active, vec![love.instruction.clone()]);
        assert!(s.rounds[0].injections_active.is_empty());
        for (rec, ctl) in gw.records().iter().zip(control.records()) {
            let system = &rec.request.messages[0].content;
            if system.starts_with("You are Agnes") {
                assert!(system.contains(&love.instruction));
                assert_eq!(strip_section(system, ATTITUDE_TITLE), ctl.request.messages[0].content);
            } else {
                assert_eq!(rec.request, ctl.request);
            }
        }
    }

    #[test]
    fn turn_failure_aborts_with_partial_transcript() {
        let world = cafe();
        let rules = r#"{"rules":[{"purpose":"dialogue_turn","pattern":"Anty: Hi","response":"boom"},{"purpose":"dialogue_turn","response":"Hi."}]}"#;
        let (out, _) = talk(&world, rules, &[]);
        // the end decision after round 3 has no rule
        let err = out.unwrap_err();
        assert_eq!(err.purpose, Purpose::EndDecision);
        assert_eq!(err.session.rounds.len(), 3);
        assert!(err.session.ended_by.is_none());
    }

    #[test]
    fn summary_is_tagged_from_its_text() {
        let world = cafe();
        let (s, _) = talk(&world, r#"{"rules":[{"response":"end"}]}"#, &[]);
        let s = s.unwrap();
        let anty = world.agent("anty").unwrap();
        let mut gw = gateway(r#"{"rules":[{"response":"Agnes is looking forward to trying a new coffee blend with me."}]}"#);
        let entry = summarize(&world, &s, anty, 3, &mut gw).unwrap();
        assert_eq!(entry.text, "Agnes is looking forward to trying a new coffee blend with me.");
        assert_eq!(entry.topics, BTreeSet::from(["agnes".to_string(), "coffee".to_string()]));
        let mut gw = gateway(r#"{"rules":[{"response":"Nothing much."}]}"#);
        assert!(summarize(&world, &s, anty, 3, &mut gw).unwrap().topics.is_empty());
    }
}
