use serde::{Deserialize, Serialize};

use super::{Answer, AnswerSheet, Axis, Instrument, Pole, ScoringKind, Subscale, LIKERT_POINTS};

/// Letter chosen on each axis when both poles score the same.
pub const TIE_BREAK: [Pole; 4] = [Pole::I, Pole::N, Pole::F, Pole::P];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error("sheet is for instrument {sheet}, not {instrument}")]
    InstrumentMismatch { sheet: String, instrument: String },
    #[error("instrument {0} is not scored this way")]
    WrongScoring(String),
    #[error("item {0} is unanswered")]
    Unanswered(String),
    #[error("sheet answers unknown item {0}")]
    UnknownItem(String),
    #[error("item {item}: '{label}' is not one of its option labels")]
    UnknownLabel { item: String, label: String },
    #[error("item {item}: rating {rating} is outside 1..=5")]
    RatingOutOfRange { item: String, rating: u8 },
    #[error("item {0}: answer has the wrong form for this instrument")]
    WrongAnswerForm(String),
    #[error("{axis} scores sum to {actual}, expected {expected}")]
    AxisSum { axis: Axis, expected: u32, actual: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct MbtiScores {
    pub e: u32,
    pub i: u32,
    pub s: u32,
    pub n: u32,
    pub t: u32,
    pub f: u32,
    pub j: u32,
    pub p: u32,
}

impl MbtiScores {
    pub fn get(&self, pole: Pole) -> u32 {
        match pole {
            Pole::E => self.e,
            Pole::I => self.i,
            Pole::S => self.s,
            Pole::N => self.n,
            Pole::T => self.t,
            Pole::F => self.f,
            Pole::J => self.j,
            Pole::P => self.p,
        }
    }

    pub fn add(&mut self, pole: Pole) {
        let slot = match pole {
            Pole::E => &mut self.e,
            Pole::I => &mut self.i,
            Pole::S => &mut self.s,
            Pole::N => &mut self.n,
            Pole::T => &mut self.t,
            Pole::F => &mut self.f,
            Pole::J => &mut self.j,
            Pole::P => &mut self.p,
        };
        *slot += 1;
    }

    /// In E, I, S, N, T, F, J, P order.
    pub fn to_array(&self) -> [u32; 8] {
        Pole::ALL.map(|p| self.get(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MbtiResult {
    pub scores: MbtiScores,
    #[serde(rename = "type")]
    pub type_string: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sd3Result {
    pub machiavellianism: u32,
    pub narcissism: u32,
    pub psychopathy: u32,
}

impl Sd3Result {
    pub fn get(&self, s: Subscale) -> u32 {
        match s {
            Subscale::Machiavellianism => self.machiavellianism,
            Subscale::Narcissism => self.narcissism,
            Subscale::Psychopathy => self.psychopathy,
        }
    }

    fn slot(&mut self, s: Subscale) -> &mut u32 {
        match s {
            Subscale::Machiavellianism => &mut self.machiavellianism,
            Subscale::Narcissism => &mut self.narcissism,
            Subscale::Psychopathy => &mut self.psychopathy,
        }
    }
}

fn check_sheet(sheet: &AnswerSheet, instrument: &Instrument, kind: ScoringKind) -> Result<(), ScoreError> {
    if sheet.instrument != instrument.name.to_string() {
        return Err(ScoreError::InstrumentMismatch {
            sheet: sheet.instrument.clone(),
            instrument: instrument.name.to_string(),
        });
    }
    if instrument.scoring_kind != kind {
        return Err(ScoreError::WrongScoring(instrument.name.to_string()));
    }
    if let Some(extra) = sheet.answers.keys().find(|id| instrument.item(id).is_none()) {
        return Err(ScoreError::UnknownItem(extra.clone()));
    }
    Ok(())
}

/// One point per answer to the pole its option is keyed to.
pub fn score_mbti(sheet: &AnswerSheet, instrument: &Instrument) -> Result<MbtiResult, ScoreError> {
    check_sheet(sheet, instrument, ScoringKind::ForcedChoicePoles)?;
    let mut scores = MbtiScores::default();
    for item in &instrument.items {
        let label = match sheet.answers.get(&item.id) {
            None => return Err(ScoreError::Unanswered(item.id.clone())),
            Some(Answer::Choice(label)) => label,
            Some(Answer::Rating(_)) => return Err(ScoreError::WrongAnswerForm(item.id.clone())),
        };
        let option = item
            .options
            .iter()
            .find(|o| o.label == *label)
            .ok_or_else(|| ScoreError::UnknownLabel { item: item.id.clone(), label: label.clone() })?;
        scores.add(option.key);
    }
    let type_string = mbti_type(&scores, instrument.axis_totals(), TIE_BREAK)?;
    Ok(MbtiResult { scores, type_string })
}

/// Per-axis majority letter; `tie_break[axis]` wins equal counts. Each axis
/// must sum to `totals[axis]`.
pub fn mbti_type(scores: &MbtiScores, totals: [u32; 4], tie_break: [Pole; 4]) -> Result<String, ScoreError> {
    let mut out = String::with_capacity(4);
    for axis in Axis::ALL {
        let [a, b] = axis.poles();
        let (sa, sb) = (scores.get(a), scores.get(b));
        let expected = totals[axis.index()];
        if sa + sb != expected {
            return Err(ScoreError::AxisSum { axis, expected, actual: sa + sb });
        }
        let pole = match sa.cmp(&sb) {
            std::cmp::Ordering::Greater => a,
            std::cmp::Ordering::Less => b,
            std::cmp::Ordering::Equal => tie_break[axis.index()],
        };
        out.push(pole.letter());
    }
    Ok(out)
}

/// Type letters for real-valued (averaged) scores in E, I, S, N, T, F, J, P order.
pub fn type_from_means(means: [f64; 8], tie_break: [Pole; 4]) -> String {
    Axis::ALL
        .iter()
        .map(|axis| {
            let (a, b) = (means[axis.index() * 2], means[axis.index() * 2 + 1]);
            let [pa, pb] = axis.poles();
            if a > b {
                pa.letter()
            } else if b > a {
                pb.letter()
            } else {
                tie_break[axis.index()].letter()
            }
        })
        .collect()
}

/// Per-subscale sums of 1..=5 ratings, reverse-keyed items counted as 6 - r.
pub fn score_sd3(sheet: &AnswerSheet, instrument: &Instrument) -> Result<Sd3Result, ScoreError> {
    check_sheet(sheet, instrument, ScoringKind::LikertSubscales)?;
    let mut out = Sd3Result::default();
    for item in &instrument.items {
        let rating = match sheet.answers.get(&item.id) {
            None => return Err(ScoreError::Unanswered(item.id.clone())),
            Some(Answer::Rating(r)) => *r,
            Some(Answer::Choice(_)) => return Err(ScoreError::WrongAnswerForm(item.id.clone())),
        };
        if !(1..=LIKERT_POINTS).contains(&rating) {
            return Err(ScoreError::RatingOutOfRange { item: item.id.clone(), rating });
        }
        let value = if item.reverse { LIKERT_POINTS + 1 - rating } else { rating };
        let key = item.key.expect("validated Likert item has a subscale");
        *out.slot(key) += u32::from(value);
    }
    Ok(out)
}
