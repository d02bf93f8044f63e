use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::psychometrics::{type_from_means, MbtiResult, Sd3Result, TIE_BREAK};
use crate::world::{Capture, StepLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMetrics {
    pub pos_intent: u32,
    pub neg_intent: u32,
    /// Absent when the target action was never on offer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_ratio: Option<f64>,
    pub avg_happiness: f64,
}

pub fn pos_ratio(pos: f64, neg: f64) -> Option<f64> {
    let total = pos + neg;
    (total > 0.0).then(|| pos / total)
}

/// Counts the target agent's decisions over menus that offered `target_action`
/// and averages its end-of-step happiness.
pub fn compute_preference_metrics(logs: &[StepLog], target_agent: &str, target_action: &str) -> PreferenceMetrics {
    let (mut pos, mut neg) = (0u32, 0u32);
    for decision in logs.iter().flat_map(StepLog::decisions) {
        if decision.agent != target_agent || !decision.menu.iter().any(|a| a == target_action) {
            continue;
        }
        match decision.chosen() {
            Capture::Switch(a) if a == target_action => pos += 1,
            _ => neg += 1,
        }
    }
    let happiness: Vec<f64> = logs.iter().filter_map(|l| l.end_state(target_agent)).map(|s| s.happiness).collect();
    PreferenceMetrics {
        pos_intent: pos,
        neg_intent: neg,
        pos_ratio: pos_ratio(pos as f64, neg as f64),
        avg_happiness: mean(&happiness).unwrap_or(0.0),
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceAggregate {
    pub pos_intent: f64,
    pub neg_intent: f64,
    /// Ratio of the mean counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_ratio: Option<f64>,
    /// Mean of the per-repetition ratios that are defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_ratio_rep_mean: Option<f64>,
    pub avg_happiness: f64,
}

pub fn aggregate_preference(reps: &[PreferenceMetrics]) -> Option<PreferenceAggregate> {
    let pos = mean(&reps.iter().map(|m| m.pos_intent as f64).collect::<Vec<_>>())?;
    let neg = mean(&reps.iter().map(|m| m.neg_intent as f64).collect::<Vec<_>>())?;
    Some(PreferenceAggregate {
        pos_intent: pos,
        neg_intent: neg,
        pos_ratio: pos_ratio(pos, neg),
        pos_ratio_rep_mean: mean(&reps.iter().filter_map(|m| m.pos_ratio).collect::<Vec<_>>()),
        avg_happiness: mean(&reps.iter().map(|m| m.avg_happiness).collect::<Vec<_>>())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbtiAggregate {
    /// Mean pole scores in E, I, S, N, T, F, J, P order.
    pub means: [f64; 8],
    /// Type read off the mean scores.
    #[serde(rename = "type")]
    pub type_string: String,
    /// Most frequent per-repetition type; ties go to the alphabetically first.
    pub modal_type: String,
    pub type_counts: BTreeMap<String, u32>,
}

pub fn aggregate_mbti(reps: &[MbtiResult]) -> Option<MbtiAggregate> {
    if reps.is_empty() {
        return None;
    }
    let mut means = [0.0; 8];
    for (k, slot) in means.iter_mut().enumerate() {
        *slot = mean(&reps.iter().map(|r| r.scores.to_array()[k] as f64).collect::<Vec<_>>())?;
    }
    let mut type_counts = BTreeMap::new();
    for r in reps {
        *type_counts.entry(r.type_string.clone()).or_insert(0) += 1;
    }
    let top = type_counts.values().copied().max().unwrap_or(0);
    let modal_type = type_counts.iter().find(|(_, &n)| n == top).map(|(t, _)| t.clone()).unwrap_or_default();
    Some(MbtiAggregate { means, type_string: type_from_means(means, TIE_BREAK), modal_type, type_counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sd3Aggregate {
    pub machiavellianism: f64,
    pub narcissism: f64,
    pub psychopathy: f64,
}

pub fn aggregate_sd3(reps: &[Sd3Result]) -> Option<Sd3Aggregate> {
    let m = |f: fn(&Sd3Result) -> u32| mean(&reps.iter().map(|r| f(r) as f64).collect::<Vec<_>>());
    Some(Sd3Aggregate {
        machiavellianism: m(|r| r.machiavellianism)?,
        narcissism: m(|r| r.narcissism)?,
        psychopathy: m(|r| r.psychopathy)?,
    })
}
