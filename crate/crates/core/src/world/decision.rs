use serde::{Deserialize, Serialize};

use super::{ActionKind, AgentState};
use crate::config::{AgentProfile, CueLexicon, World};
use crate::gateway::parse::{find_standalone, strip_marker};
use crate::gateway::{Gateway, GatewayError, Message, Purpose};
use crate::prompt::{persona, state_line, time_line, Prompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    Stay,
    Switch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub agent: String,
    pub step: u32,
    /// Action names offered, in menu order.
    pub menu: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_to: Option<String>,
    pub raw_response: String,
    pub positive_capture: bool,
}

impl ActionDecision {
    pub fn chosen(&self) -> Capture {
        match &self.switch_to {
            Some(a) => Capture::Switch(a.clone()),
            None => Capture::Stay,
        }
    }
}

pub const DECISION_MARKER: &str = "DECISION";

/// Reads an action choice out of free text.
///
/// A `DECISION: <action>` line wins; the action may also be given by its menu
/// number. Naming `stay` or an action outside the menu there means Stay. Otherwise any refusal cue forces Stay. Otherwise,
/// when an affirmative cue occurs, the first menu action whose name or display
/// phrase appears in the text is chosen. Anything else is Stay.
pub fn capture_decision(raw: &str, menu: &[&ActionKind], cues: &CueLexicon) -> Capture {
    for line in raw.lines() {
        let Some(rest) = strip_marker(line, DECISION_MARKER) else {
            continue;
        };
        let rest = rest.trim().trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '.').trim();
        if let Some(pos) = option_number(rest) {
            return menu.get(pos - 1).map_or(Capture::Stay, |a| Capture::Switch(a.name.clone()));
        }
        return menu
            .iter()
            .filter(|a| {
                rest.eq_ignore_ascii_case(&a.name)
                    || rest.eq_ignore_ascii_case(&a.display_phrase)
                    || rest.to_lowercase().starts_with(&format!("{} ", a.name.to_lowercase()))
            })
            .max_by_key(|a| a.name.len())
            .map_or(Capture::Stay, |a| Capture::Switch(a.name.clone()));
    }
    if cues.refusal.iter().any(|c| find_standalone(raw, c).is_some()) {
        return Capture::Stay;
    }
    let lower = raw.to_lowercase();
    if !cues.affirmative.iter().any(|c| has_cue(&lower, &c.to_lowercase())) {
        return Capture::Stay;
    }
    menu.iter()
        .find(|a| lower.contains(&a.name.to_lowercase()) || lower.contains(&a.display_phrase.to_lowercase()))
        .map_or(Capture::Stay, |a| Capture::Switch(a.name.clone()))
}

/// A leading menu number such as `2`, `2.` or `2) drink coffee`.
fn option_number(text: &str) -> Option<usize> {
    let digits = text.len() - text.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let tail = &text[digits..];
    if digits == 0 || !(tail.is_empty() || tail.starts_with(['.', ')', ' '])) {
        return None;
    }
    text[..digits].parse().ok().filter(|&n| n >= 1)
}

/// Cue occurrence starting at a word boundary ("decide" also matches "decided").
fn has_cue(lower: &str, cue: &str) -> bool {
    lower.match_indices(cue).any(|(i, _)| {
        lower[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Options in the prompt, one per line: `N. <display phrase>`.
pub fn menu_text(menu: &[&ActionKind]) -> String {
    menu.iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i + 1, a.display_phrase))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn decision_prompt(
    world: &World,
    profile: &AgentProfile,
    agent: &AgentState,
    menu: &[&ActionKind],
    step: u32,
) -> Vec<Message> {
    let current = world.action(&agent.action).map_or(agent.action.as_str(), |a| a.display_phrase.as_str());
    let recollections: Vec<String> = menu
        .iter()
        .filter_map(|a| {
            agent.memory.latest(&a.topic).map(|m| format!("- {}: {}", a.display_phrase, m.text))
        })
        .collect();
    let system = persona(world, profile);
    let plan = if profile.plan_enabled { agent.plan.as_ref().map(|p| p.text.clone()) } else { None };
    let user = Prompt::new()
        .section("Time", time_line(world, step))
        .section("Basic state", state_line(world, &agent.state))
        .section("Current action", format!("You are currently going to {current}."))
        .section_opt("Current plan", plan)
        .section_opt(
            "What you remember about the options",
            (!recollections.is_empty()).then(|| recollections.join("\n")),
        )
        .section("Options", menu_text(menu))
        .section(
            "Task",
            format!(
                "Decide whether to switch to one of the options or keep your current action. \
                 Explain briefly, then finish with a line `{DECISION_MARKER}: <option>` naming the action or its number, \
                 or `{DECISION_MARKER}: stay`."
            ),
        );
    vec![Message::system(system.render()), Message::user(user.render())]
}

/// One decision call over `menu`. An empty menu is Stay without a call.
pub fn decide_action(
    world: &World,
    profile: &AgentProfile,
    agent: &AgentState,
    menu: &[&ActionKind],
    step: u32,
    gw: &mut Gateway,
) -> Result<ActionDecision, GatewayError> {
    let names: Vec<String> = menu.iter().map(|a| a.name.clone()).collect();
    if menu.is_empty() {
        return Ok(ActionDecision {
            agent: profile.id.clone(),
            step,
            menu: names,
            switch_to: None,
            raw_response: String::new(),
            positive_capture: false,
        });
    }
    let request = gw.request(Purpose::ActionDecision, decision_prompt(world, profile, agent, menu, step));
    let raw = gw.complete(request)?;
    let switch_to = match capture_decision(&raw, menu, &world.config().cues) {
        Capture::Switch(a) => Some(a),
        Capture::Stay => None,
    };
    Ok(ActionDecision {
        agent: profile.id.clone(),
        step,
        menu: names,
        positive_capture: switch_to.is_some(),
        switch_to,
        raw_response: raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::fixtures::cafe;

    fn menu_of<'a>(world: &'a World, names: &[&str]) -> Vec<&'a ActionKind> {
        names.iter().map(|n| world.action(n).unwrap()).collect()
    }

    #[test]
    fn marker_wins_over_prose() {
        let world = cafe();
        let menu = menu_of(&world, &["drink coffee", "work on computer", "eat bread"]);
        let cues = CueLexicon::default();
        assert_eq!(
            capture_decision("I want to eat bread.\nDECISION: work on computer", &menu, &cues),
            Capture::Switch("work on computer".into())
        );
        assert_eq!(capture_decision("I would like to drink coffee.\nDECISION: stay", &menu, &cues), Capture::Stay);
        assert_eq!(capture_decision("**Decision:** drink coffee in the Dining area", &menu, &cues), Capture::Switch("drink coffee".into()));
        assert_eq!(capture_decision("DECISION: fly to the moon", &menu, &cues), Capture::Stay);
    }

    #[test]
    fn cue_rules() {
        let world = cafe();
        let menu = menu_of(&world, &["drink coffee", "eat bread"]);
        let cues = CueLexicon::default();
        assert_eq!(capture_decision("I want to drink coffee", &menu, &cues), Capture::Switch("drink coffee".into()));
        assert_eq!(capture_decision("I prefer to remain where I am.", &menu, &cues), Capture::Stay);
        assert_eq!(capture_decision("drink coffee in the Dining area", &menu, &cues), Capture::Stay);
        assert_eq!(
            capture_decision(
                "I would like to drink coffee in the Dining area. The coffee can energize me",
                &menu,
                &cues
            ),
            Capture::Switch("drink coffee".into())
        );
        assert_eq!(capture_decision("I will eat bread, then drink coffee", &menu, &cues), Capture::Switch("drink coffee".into()));
        assert_eq!(capture_decision("Goodwill drink coffee", &menu, &cues), Capture::Stay);
    }

    #[test]
    fn two_mentions_pick_first_in_menu_order() {
        let world = cafe();
        let names = ["drink coffee", "eat bread", "read books"];
        let cues = CueLexicon::default();
        let text = "I decided: read books, eat bread or drink coffee";
        // every ordering of the menu: the winner is whichever mentioned action is listed first
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for order in orders {
            let ordered: Vec<&str> = order.iter().map(|&i| names[i]).collect();
            let menu = menu_of(&world, &ordered);
            assert_eq!(capture_decision(text, &menu, &cues), Capture::Switch(ordered[0].into()));
        }
    }

    #[test]
    fn positive_capture_implies_switch() {
        let world = cafe();
        let menu = menu_of(&world, &["drink coffee"]);
        let cues = CueLexicon::default();
        for text in ["", "stay", "DECISION: drink coffee", "want to drink coffee", "nothing"] {
            let c = capture_decision(text, &menu, &cues);
            if let Capture::Switch(a) = c {
                assert_eq!(a, "drink coffee");
            }
        }
    }
}
