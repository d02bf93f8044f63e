use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::spec::{Ablation, PipelineSpec, SpecError};
use crate::config::{Violation, WorldConfig};
use crate::dialogue::AttitudeInjection;

/// One term replacement for the prior-knowledge ablation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rename {
    pub from: String,
    pub to: String,
}

/// Case-insensitive term replacement that keeps the capitalization of each hit.
#[derive(Debug, Clone)]
pub struct Renamer {
    rules: Vec<(Regex, String)>,
}

fn match_case(found: &str, replacement: &str) -> String {
    let letters: Vec<char> = found.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    match found.chars().next() {
        Some(first) if first.is_uppercase() => {
            let mut chars = replacement.chars();
            chars.next().map_or_else(String::new, |c| c.to_uppercase().chain(chars).collect())
        }
        _ => replacement.to_string(),
    }
}

impl Renamer {
    pub fn new(renames: &[Rename]) -> Self {
        let rules = renames
            .iter()
            .map(|r| {
                let re = Regex::new(&format!("(?i){}", regex::escape(&r.from))).expect("escaped term is a valid pattern");
                (re, r.to.clone())
            })
            .collect();
        Self { rules }
    }

    pub fn apply(&self, text: &str) -> String {
        let mut out = text.to_string();
        for (re, to) in &self.rules {
            out = re.replace_all(&out, |c: &Captures| match_case(&c[0], to)).into_owned();
        }
        out
    }

    /// Renames every string and object key inside `value`.
    pub fn apply_value(&self, value: Value) -> Value {
        match value {
            Value::String(s) => Value::String(self.apply(&s)),
            Value::Array(items) => Value::Array(items.into_iter().map(|v| self.apply_value(v)).collect()),
            Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (self.apply(&k), self.apply_value(v))).collect()),
            other => other,
        }
    }

    /// Index of each rename whose term appears nowhere in `value`.
    pub fn absent_terms(&self, value: &Value) -> Vec<usize> {
        let text = value.to_string();
        self.rules.iter().enumerate().filter(|(_, (re, _))| !re.is_match(&text)).map(|(k, _)| k).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Ablated {
    pub config: WorldConfig,
    pub injections: Vec<AttitudeInjection>,
    pub target_action: Option<String>,
}

/// Applies the spec's ablations to `config`. Everything but the rename acts on
/// the target agent only.
pub fn apply_ablations(spec: &PipelineSpec, mut config: WorldConfig) -> Result<Ablated, SpecError> {
    let mut injections = spec.injections.clone();
    let mut target_action = spec.target_action.clone();
    let target = spec.target_agent.as_str();

    for (k, ablation) in spec.ablations.iter().enumerate() {
        match ablation {
            Ablation::NoIdentity => {
                agent(&mut config, target).identity = None;
            }
            Ablation::NoSensoryPerception => {
                let action = target_action.clone().ok_or_else(|| {
                    SpecError::Invalid(vec![Violation::new(
                        format!("ablations[{k}]"),
                        "no_sensory_perception needs a target action",
                    )])
                })?;
                let profile = agent(&mut config, target);
                match profile.sense_map.get_mut(&action) {
                    Some(outcome) => outcome.description.clear(),
                    None => {
                        return Err(SpecError::Invalid(vec![Violation::new(
                            format!("ablations[{k}]"),
                            format!("agent '{target}' has no sensory outcome for '{action}'"),
                        )]))
                    }
                }
            }
            Ablation::NoReflection => {
                agent(&mut config, target).reflection_enabled = false;
            }
            Ablation::NoPlan => {
                let profile = agent(&mut config, target);
                profile.plan_enabled = false;
                profile.initial_plan = None;
            }
            Ablation::NoPriorKnowledge { renames } => {
                let renamer = Renamer::new(renames);
                let value = serde_json::to_value(&config).expect("config serializes");
                let absent = renamer.absent_terms(&value);
                if !absent.is_empty() {
                    return Err(SpecError::Invalid(
                        absent
                            .into_iter()
                            .map(|r| {
                                Violation::new(
                                    format!("ablations[{k}].renames[{r}].from"),
                                    format!("term '{}' does not occur in the world", renames[r].from),
                                )
                            })
                            .collect(),
                    ));
                }
                config = serde_json::from_value(renamer.apply_value(value)).map_err(|e| {
                    SpecError::Invalid(vec![Violation::new(format!("ablations[{k}]"), format!("renamed world is malformed: {e}"))])
                })?;
                for inj in &mut injections {
                    inj.instruction = renamer.apply(&inj.instruction);
                }
                target_action = target_action.map(|a| renamer.apply(&a));
            }
        }
    }
    Ok(Ablated { config, injections, target_action })
}

fn agent<'a>(config: &'a mut WorldConfig, id: &str) -> &'a mut crate::config::AgentProfile {
    config.agent_mut(id).expect("target agent checked before ablation")
}
