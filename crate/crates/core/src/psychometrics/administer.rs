use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Answer, AnswerSheet, Instrument, Item, ScoringKind, LIKERT_POINTS};
use crate::gateway::{parse_choice, Gateway, GatewayError, Message, Purpose};
use crate::mind::MemoryEntry;
use crate::prompt::{identity_title, Prompt};

/// What the test taker knows about itself.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PersonaContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reflections: Vec<MemoryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relationships: Vec<String>,
}

impl PersonaContext {
    pub fn is_empty(&self) -> bool {
        self.identity.is_none() && self.reflections.is_empty() && self.relationships.is_empty()
    }

    /// System context for every item; empty for the blank persona.
    pub fn render(&self) -> String {
        if self.is_empty() {
            return String::new();
        }
        let mut p = Prompt::new();
        if let Some(name) = &self.name {
            p = p.line(format!("You are {name}."));
        }
        let title = self.name.as_deref().map_or_else(|| "Identity".to_string(), identity_title);
        p.section_opt(title, self.identity.as_deref())
            .section_opt(
                "Your reflections",
                (!self.reflections.is_empty())
                    .then(|| self.reflections.iter().map(|r| format!("- {}", r.text)).collect::<Vec<_>>().join("\n")),
            )
            .section_opt(
                "Relationships",
                (!self.relationships.is_empty())
                    .then(|| self.relationships.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n")),
            )
            .render()
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdministerError {
    #[error("item {item}: {source}")]
    Backend { item: String, source: GatewayError },
    #[error("item {item}: no readable answer after {attempts} attempt(s)")]
    Unparseable { item: String, attempts: u32 },
}

impl AdministerError {
    pub fn item(&self) -> &str {
        match self {
            AdministerError::Backend { item, .. } | AdministerError::Unparseable { item, .. } => item,
        }
    }
}

fn labels(instrument: &Instrument, item: &Item) -> Vec<String> {
    match instrument.scoring_kind {
        ScoringKind::ForcedChoicePoles => item.options.iter().map(|o| o.label.clone()).collect(),
        ScoringKind::LikertSubscales => (1..=LIKERT_POINTS).map(|r| r.to_string()).collect(),
    }
}

/// The request for item `index`. Depends only on the persona and the item.
pub fn item_messages(instrument: &Instrument, index: usize, persona: &PersonaContext) -> Vec<Message> {
    let item = &instrument.items[index];
    let (options, task) = match instrument.scoring_kind {
        ScoringKind::ForcedChoicePoles => (
            item.options.iter().map(|o| format!("{}. {}", o.label, o.text)).collect::<Vec<_>>().join("\n"),
            "Choose the option that describes you better. Reply with a line `ANSWER: <label>` followed by a brief explanation.",
        ),
        ScoringKind::LikertSubscales => (
            instrument.scale.iter().enumerate().map(|(k, s)| format!("{}. {s}", k + 1)).collect::<Vec<_>>().join("\n"),
            "Rate how much you agree with the statement. Reply with a line `ANSWER: <number>` followed by a brief explanation.",
        ),
    };
    let user = Prompt::new()
        .section(format!("Question {} of {}", index + 1, instrument.items.len()), item.prompt.as_str())
        .section("Options", options)
        .section("Task", task)
        .render();
    let system = persona.render();
    let mut messages = Vec::with_capacity(2);
    if !system.is_empty() {
        messages.push(Message::system(system));
    }
    messages.push(Message::user(user));
    messages
}

/// Asks every item in order, one call each plus parse retries.
pub fn administer(
    instrument: &Instrument,
    persona: &PersonaContext,
    gw: &mut Gateway,
) -> Result<AnswerSheet, AdministerError> {
    let mut sheet = AnswerSheet::new(instrument, persona.digest());
    for (index, item) in instrument.items.iter().enumerate() {
        let allowed = labels(instrument, item);
        let request = gw.request(Purpose::InstrumentItem, item_messages(instrument, index, persona));
        let parsed = gw
            .complete_parsed(request, |text| parse_choice(text, &allowed).ok().map(|label| (label, text.trim().to_string())))
            .map_err(|source| AdministerError::Backend { item: item.id.clone(), source })?;
        let Some((label, explanation)) = parsed else {
            return Err(AdministerError::Unparseable { item: item.id.clone(), attempts: gw.parse_retries() + 1 });
        };
        let answer = match instrument.scoring_kind {
            ScoringKind::ForcedChoicePoles => Answer::Choice(label),
            ScoringKind::LikertSubscales => Answer::Rating(label.parse().expect("numeric Likert label")),
        };
        sheet.answers.insert(item.id.clone(), answer);
        sheet.explanations.insert(item.id.clone(), explanation);
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{ScriptRulebook, ScriptedBackend};
    use crate::mind::MemoryKind;
    use crate::psychometrics::{score_mbti, score_sd3};

    fn gateway(rules: &str) -> Gateway {
        let book = ScriptRulebook::from_json(rules).unwrap();
        Gateway::new(Arc::new(ScriptedBackend::new(&book).unwrap()), 0, 0)
    }

    #[test]
    fn all_a_sheet() {
        let inst = Instrument::mbti93();
        let mut gw = gateway(r#"{"rules":[{"response":"ANSWER: A\nIt fits me."}]}"#);
        let sheet = administer(&inst, &PersonaContext::default(), &mut gw).unwrap();
        assert_eq!(sheet.answers.len(), 93);
        assert!(sheet.answers.values().all(|a| *a == Answer::Choice("A".into())));
        assert_eq!(gw.records().len(), 93);
        score_mbti(&sheet, &inst).unwrap();
    }

    #[test]
    fn garbage_on_item_five_aborts() {
        let inst = Instrument::mbti93();
        let mut gw = gateway(
            r#"{"rules":[{"pattern":"Question 5 of","response":"I cannot decide"},{"response":"ANSWER: B"}]}"#,
        );
        let err = administer(&inst, &PersonaContext::default(), &mut gw).unwrap_err();
        assert_eq!(err, AdministerError::Unparseable { item: "m05".into(), attempts: 4 });
        assert_eq!(gw.records().len(), 4 + 4);
    }

    #[test]
    fn likert_answers_and_persona_context() {
        let inst = Instrument::sd3();
        let persona = PersonaContext {
            name: Some("Anty".into()),
            identity: None,
            reflections: vec![MemoryEntry::new(MemoryKind::Reflection, 5, ["agnes".to_string()], "Respect matters to me.")],
            relationships: vec!["Agnes is Anty's schoolmate and lover.".into()],
        };
        let mut gw = gateway(r#"{"rules":[{"response":"ANSWER: 4 - mostly true"}]}"#);
        let sheet = administer(&inst, &persona, &mut gw).unwrap();
        let scores = score_sd3(&sheet, &inst).unwrap();
        // 9 x 4 with reversed items counted as 2
        assert_eq!((scores.machiavellianism, scores.narcissism, scores.psychopathy), (36, 30, 32));
        let system = &gw.records()[0].request.messages[0].content;
        assert!(system.contains("Respect matters to me.") && system.contains("schoolmate"));
        assert_eq!(sheet.persona_digest, persona.digest());
    }

    #[test]
    fn item_prompts_ignore_earlier_answers() {
        let inst = Instrument::sd3();
        let persona = PersonaContext::default();
        let mut a = gateway(r#"{"rules":[{"response":"ANSWER: 1"}]}"#);
        let mut b = gateway(r#"{"rules":[{"response":"ANSWER: 5 because"}]}"#);
        administer(&inst, &persona, &mut a).unwrap();
        administer(&inst, &persona, &mut b).unwrap();
        for (ra, rb) in a.records().iter().zip(b.records()) {
            assert_eq!(ra.request, rb.request);
        }
        assert_eq!(a.records()[3].request.messages, item_messages(&inst, 3, &persona));
        assert_eq!(a.records()[0].request.messages.len(), 1);
    }
}
