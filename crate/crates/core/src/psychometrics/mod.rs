//! Questionnaire instruments: loading, administration to an agent persona
//! and scoring.

mod administer;
mod riasec;
mod scoring;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use administer::{administer, item_messages, AdministerError, PersonaContext};
pub use riasec::Riasec;
pub use scoring::{
    mbti_type, score_mbti, score_sd3, type_from_means, MbtiResult, MbtiScores, ScoreError, Sd3Result,
    TIE_BREAK,
};

use crate::config::{read_document, ConfigError, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pole {
    E,
    I,
    S,
    N,
    T,
    F,
    J,
    P,
}

impl Pole {
    pub const ALL: [Pole; 8] = [Pole::E, Pole::I, Pole::S, Pole::N, Pole::T, Pole::F, Pole::J, Pole::P];

    pub fn axis(self) -> Axis {
        match self {
            Pole::E | Pole::I => Axis::EI,
            Pole::S | Pole::N => Axis::SN,
            Pole::T | Pole::F => Axis::TF,
            Pole::J | Pole::P => Axis::JP,
        }
    }

    pub fn opposite(self) -> Pole {
        let [a, b] = self.axis().poles();
        if self == a {
            b
        } else {
            a
        }
    }

    pub fn letter(self) -> char {
        match self {
            Pole::E => 'E',
            Pole::I => 'I',
            Pole::S => 'S',
            Pole::N => 'N',
            Pole::T => 'T',
            Pole::F => 'F',
            Pole::J => 'J',
            Pole::P => 'P',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    EI,
    SN,
    TF,
    JP,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::EI, Axis::SN, Axis::TF, Axis::JP];

    pub fn poles(self) -> [Pole; 2] {
        match self {
            Axis::EI => [Pole::E, Pole::I],
            Axis::SN => [Pole::S, Pole::N],
            Axis::TF => [Pole::T, Pole::F],
            Axis::JP => [Pole::J, Pole::P],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b] = self.poles();
        write!(f, "{}/{}", a.letter(), b.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subscale {
    Machiavellianism,
    Narcissism,
    Psychopathy,
}

impl Subscale {
    pub const ALL: [Subscale; 3] = [Subscale::Machiavellianism, Subscale::Narcissism, Subscale::Psychopathy];

    pub fn as_str(self) -> &'static str {
        match self {
            Subscale::Machiavellianism => "machiavellianism",
            Subscale::Narcissism => "narcissism",
            Subscale::Psychopathy => "psychopathy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrumentName {
    #[serde(rename = "MBTI93")]
    Mbti93,
    #[serde(rename = "SD3")]
    Sd3,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for InstrumentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstrumentName::Mbti93 => "MBTI93",
            InstrumentName::Sd3 => "SD3",
            InstrumentName::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringKind {
    ForcedChoicePoles,
    LikertSubscales,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemOption {
    pub label: String,
    pub text: String,
    pub key: Pole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub id: String,
    pub prompt: String,
    /// Forced-choice options; empty for Likert items.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<ItemOption>,
    /// Likert subscale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Subscale>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reverse: bool,
}

impl Item {
    /// The axis both options of a forced-choice item are keyed to.
    pub fn axis(&self) -> Option<Axis> {
        self.options.first().map(|o| o.key.axis())
    }
}

pub const LIKERT_POINTS: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instrument {
    pub name: InstrumentName,
    pub scoring_kind: ScoringKind,
    /// Likert anchors for ratings 1..=5.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scale: Vec<String>,
    pub items: Vec<Item>,
}

pub const MBTI_AXIS_ITEMS: [u32; 4] = [21, 27, 23, 22];
pub const SD3_ITEMS_PER_SUBSCALE: u32 = 9;

const MBTI93_JSON: &str = include_str!("../../data/instruments/mbti93.json");
const SD3_JSON: &str = include_str!("../../data/instruments/sd3.json");

pub const BUILTIN_PREFIX: &str = "builtin:";

impl Instrument {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Err(ConfigError::Empty { path: "instrument".into() });
        }
        let inst: Self = serde_json::from_str(text).map_err(ConfigError::Json)?;
        let violations = inst.validate();
        if violations.is_empty() {
            Ok(inst)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_document(path)?)
    }

    /// The shipped synthetic 93-item forced-choice bank.
    pub fn mbti93() -> Self {
        Self::from_json(MBTI93_JSON).expect("shipped MBTI bank is valid")
    }

    /// The shipped 27-item SD3 keying map.
    pub fn sd3() -> Self {
        Self::from_json(SD3_JSON).expect("shipped SD3 bank is valid")
    }

    /// `builtin:mbti93` or `builtin:sd3`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name.strip_prefix(BUILTIN_PREFIX)? {
            "mbti93" => Some(Self::mbti93()),
            "sd3" => Some(Self::sd3()),
            _ => None,
        }
    }

    /// The raw document behind a builtin reference.
    pub fn builtin_source(name: &str) -> Option<&'static str> {
        match name.strip_prefix(BUILTIN_PREFIX)? {
            "mbti93" => Some(MBTI93_JSON),
            "sd3" => Some(SD3_JSON),
            _ => None,
        }
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Items per axis, in [`Axis::ALL`] order.
    pub fn axis_totals(&self) -> [u32; 4] {
        let mut totals = [0; 4];
        for item in &self.items {
            if let Some(axis) = item.axis() {
                totals[axis.index()] += 1;
            }
        }
        totals
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut v = |path: String, msg: String| out.push(Violation::new(path, msg));
        if self.items.is_empty() {
            v("items".into(), "at least one item is required".into());
        }
        let mut ids = BTreeSet::new();
        for (k, item) in self.items.iter().enumerate() {
            let path = format!("items[{k}]");
            if item.id.trim().is_empty() {
                v(format!("{path}.id"), "must not be empty".into());
            } else if !ids.insert(item.id.as_str()) {
                v(format!("{path}.id"), format!("duplicate item id '{}'", item.id));
            }
            if item.prompt.trim().is_empty() {
                v(format!("{path}.prompt"), "must not be empty".into());
            }
            match self.scoring_kind {
                ScoringKind::ForcedChoicePoles => {
                    if item.options.len() != 2 {
                        v(format!("{path}.options"), format!("needs exactly 2 options, has {}", item.options.len()));
                    } else {
                        let (a, b) = (&item.options[0], &item.options[1]);
                        if a.key.opposite() != b.key {
                            v(
                                format!("{path}.options"),
                                format!("options must be keyed to opposite poles of one axis, got {:?} and {:?}", a.key, b.key),
                            );
                        }
                        if a.label.trim().is_empty() || b.label.trim().is_empty() {
                            v(format!("{path}.options"), "labels must not be empty".into());
                        }
                        if a.label.eq_ignore_ascii_case(&b.label) {
                            v(format!("{path}.options"), format!("duplicate label '{}'", a.label));
                        }
                    }
                    if item.key.is_some() || item.reverse {
                        v(path, "forced-choice items take no subscale key or reverse flag".into());
                    }
                }
                ScoringKind::LikertSubscales => {
                    if item.key.is_none() {
                        v(format!("{path}.key"), "Likert items need a subscale key".into());
                    }
                    if !item.options.is_empty() {
                        v(format!("{path}.options"), "Likert items use the shared scale".into());
                    }
                }
            }
        }
        if self.scoring_kind == ScoringKind::LikertSubscales && self.scale.len() != LIKERT_POINTS as usize {
            v("scale".into(), format!("needs {LIKERT_POINTS} anchors, has {}", self.scale.len()));
        }
        match self.name {
            InstrumentName::Mbti93 => {
                if self.scoring_kind != ScoringKind::ForcedChoicePoles {
                    v("scoring_kind".into(), "MBTI93 is scored by forced-choice poles".into());
                }
                if self.items.len() != 93 {
                    v("items".into(), format!("MBTI93 needs 93 items, has {}", self.items.len()));
                }
                for (axis, (have, want)) in Axis::ALL.iter().zip(self.axis_totals().iter().zip(MBTI_AXIS_ITEMS)) {
                    if *have != want {
                        v("items".into(), format!("MBTI93 needs {want} {axis} items, has {have}"));
                    }
                }
            }
            InstrumentName::Sd3 => {
                if self.scoring_kind != ScoringKind::LikertSubscales {
                    v("scoring_kind".into(), "SD3 is scored by Likert subscales".into());
                }
                if self.items.len() != 27 {
                    v("items".into(), format!("SD3 needs 27 items, has {}", self.items.len()));
                }
                let mut counts: BTreeMap<Subscale, u32> = BTreeMap::new();
                for item in &self.items {
                    if let Some(k) = item.key {
                        *counts.entry(k).or_default() += 1;
                    }
                }
                for s in Subscale::ALL {
                    let have = counts.get(&s).copied().unwrap_or(0);
                    if have != SD3_ITEMS_PER_SUBSCALE {
                        v("items".into(), format!("SD3 needs {SD3_ITEMS_PER_SUBSCALE} {} items, has {have}", s.as_str()));
                    }
                }
            }
            InstrumentName::Custom => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Choice(String),
    Rating(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub instrument: String,
    pub answers: BTreeMap<String, Answer>,
    #[serde(default)]
    pub explanations: BTreeMap<String, String>,
    #[serde(default)]
    pub persona_digest: String,
}

impl AnswerSheet {
    pub fn new(instrument: &Instrument, persona_digest: impl Into<String>) -> Self {
        Self {
            instrument: instrument.name.to_string(),
            answers: BTreeMap::new(),
            explanations: BTreeMap::new(),
            persona_digest: persona_digest.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_banks_are_valid() {
        let mbti = Instrument::mbti93();
        assert_eq!(mbti.items.len(), 93);
        assert_eq!(mbti.axis_totals(), MBTI_AXIS_ITEMS);
        let sd3 = Instrument::sd3();
        assert_eq!(sd3.items.len(), 27);
        let reversed: Vec<&str> = sd3.items.iter().filter(|i| i.reverse).map(|i| i.id.as_str()).collect();
        assert_eq!(reversed, ["N2", "N6", "N8", "P2", "P7"]);
        assert_eq!(sd3.item("N9").unwrap().prompt, "I insist on getting the respect I deserve.");
        assert!(Instrument::builtin("builtin:sd3").is_some());
        assert!(Instrument::builtin("builtin:big5").is_none());
    }

    #[test]
    fn mbti_bank_alternates_pole_order() {
        let mbti = Instrument::mbti93();
        for axis in Axis::ALL {
            let firsts: Vec<Pole> = mbti
                .items
                .iter()
                .filter(|i| i.axis() == Some(axis))
                .map(|i| i.options[0].key)
                .collect();
            let [a, b] = axis.poles();
            let on_a = firsts.iter().filter(|p| **p == a).count();
            let on_b = firsts.iter().filter(|p| **p == b).count();
            assert!(on_a.abs_diff(on_b) <= 1, "{axis}: {on_a} vs {on_b}");
        }
    }

    #[test]
    fn validation_catches_bad_banks() {
        let mut inst = Instrument::mbti93();
        inst.items.pop();
        inst.items[0].options[1].key = Pole::S;
        let v = inst.validate();
        assert!(v.iter().any(|x| x.message.contains("93 items")));
        assert!(v.iter().any(|x| x.path == "items[0].options"));
        let mut sd3 = Instrument::sd3();
        sd3.items[0].key = Some(Subscale::Narcissism);
        assert!(sd3.validate().iter().any(|x| x.message.contains("machiavellianism")));
        assert!(matches!(Instrument::from_json(" "), Err(ConfigError::Empty { .. })));
    }

    #[test]
    fn answers_serialize_untagged() {
        let mut sheet = AnswerSheet::new(&Instrument::sd3(), "d");
        sheet.answers.insert("M1".into(), Answer::Rating(4));
        sheet.answers.insert("x".into(), Answer::Choice("A".into()));
        let text = serde_json::to_string(&sheet).unwrap();
        assert!(text.contains(r#""M1":4"#) && text.contains(r#""x":"A""#));
        assert_eq!(AnswerSheet::from_json(&text).unwrap(), sheet);
    }
}
