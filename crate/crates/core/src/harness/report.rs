use std::fmt::Write as _;
use std::str::FromStr;

use super::run::{Aggregate, RunReport};
use super::spec::PipelineKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unknown report format '{0}' (expected csv, json or markdown)")]
    UnknownFormat(String),
    #[error("cannot put {0:?} and {1:?} reports in one table")]
    MixedKinds(PipelineKind, PipelineKind),
    #[error("no reports to emit")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn header(kind: PipelineKind) -> &'static [&'static str] {
    match kind {
        PipelineKind::PreferenceShaping => &["label", "pos_intent", "neg_intent", "pos_ratio", "happiness"],
        PipelineKind::PersonalityMbti => &["label", "E", "I", "S", "N", "T", "F", "J", "P", "Type"],
        PipelineKind::PersonalitySd3 => &["label", "machiavellianism", "narcissism", "psychopathy"],
    }
}

fn cells(report: &RunReport, num: impl Fn(f64) -> String) -> Vec<String> {
    let mut row = vec![report.label.clone()];
    let blanks = header(report.kind).len() - 1;
    match &report.aggregate {
        None => row.extend(std::iter::repeat_n(String::new(), blanks)),
        Some(Aggregate::Preference(p)) => {
            row.push(num(p.pos_intent));
            row.push(num(p.neg_intent));
            row.push(p.pos_ratio.map(&num).unwrap_or_default());
            row.push(num(p.avg_happiness));
        }
        Some(Aggregate::Mbti(m)) => {
            row.extend(m.means.iter().map(|&v| num(v)));
            row.push(m.type_string.clone());
        }
        Some(Aggregate::Sd3(s)) => {
            row.extend([s.machiavellianism, s.narcissism, s.psychopathy].map(&num));
        }
    }
    row
}

fn common_kind(reports: &[RunReport]) -> Result<PipelineKind, ReportError> {
    let first = reports.first().ok_or(ReportError::Empty)?.kind;
    match reports.iter().find(|r| r.kind != first) {
        Some(other) => Err(ReportError::MixedKinds(first, other.kind)),
        None => Ok(first),
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    if format == ReportFormat::Json {
        let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
        out.push(b'\n');
        return Ok(out);
    }
    emit_reports(std::slice::from_ref(report), format)
}

/// One table row per report; JSON gives an array.
pub fn emit_reports(reports: &[RunReport], format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    let kind = common_kind(reports)?;
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(reports).expect("reports serialize");
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header(kind))?;
            for r in reports {
                w.write_record(cells(r, |v| v.to_string()))?;
            }
            Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
        }
        ReportFormat::Markdown => Ok(markdown(reports, kind).into_bytes()),
    }
}

fn markdown(reports: &[RunReport], kind: PipelineKind) -> String {
    let mut cols: Vec<&str> = header(kind).to_vec();
    if kind == PipelineKind::PersonalityMbti {
        cols.push("Modal type");
    }
    cols.push("completed");
    let mut out = String::new();
    writeln!(out, "| {} |", cols.join(" | ")).unwrap();
    let align: Vec<&str> = cols.iter().enumerate().map(|(k, _)| if k == 0 { "---" } else { "---:" }).collect();
    writeln!(out, "| {} |", align.join(" | ")).unwrap();
    for r in reports {
        let mut row = cells(r, |v| format!("{v:.2}"));
        if kind == PipelineKind::PersonalityMbti {
            row.push(match &r.aggregate {
                Some(Aggregate::Mbti(m)) => m.modal_type.clone(),
                _ => String::new(),
            });
        }
        row.push(format!("{}/{}", r.completed, r.completed + r.failed));
        writeln!(out, "| {} |", row.join(" | ")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::PreferenceAggregate;

    fn report(label: &str, pos: f64, neg: f64) -> RunReport {
        RunReport {
            label: label.into(),
            kind: PipelineKind::PreferenceShaping,
            spec_digest: "d".into(),
            repetitions: vec![],
            aggregate: Some(Aggregate::Preference(PreferenceAggregate {
                pos_intent: pos,
                neg_intent: neg,
                pos_ratio: crate::harness::metrics::pos_ratio(pos, neg),
                pos_ratio_rep_mean: None,
                avg_happiness: 4.25,
            })),
            completed: 10,
            failed: 0,
            artifacts: vec![],
        }
    }

    #[test]
    fn csv_layout() {
        let out = String::from_utf8(emit_report(&report("None", 3.2, 3.6), ReportFormat::Csv).unwrap()).unwrap();
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("label,pos_intent,neg_intent,pos_ratio,happiness"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "None");
        let (p, n, r): (f64, f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap(), row[3].parse().unwrap());
        assert!((r - p / (p + n)).abs() < 1e-9);
        let never = emit_report(&report("x", 0.0, 0.0), ReportFormat::Csv).unwrap();
        assert!(String::from_utf8(never).unwrap().ends_with("x,0,0,,4.25\n"));
    }

    #[test]
    fn markdown_and_formats() {
        let md = String::from_utf8(emit_report(&report("Love Coffee", 5.0, 1.3), ReportFormat::Markdown).unwrap()).unwrap();
        assert!(md.contains("| Love Coffee | 5.00 | 1.30 | 0.79 | 4.25 | 10/10 |"), "{md}");
        assert!(matches!("xml".parse::<ReportFormat>(), Err(ReportError::UnknownFormat(f)) if f == "xml"));
        let a = emit_report(&report("a", 1.0, 2.0), ReportFormat::Json).unwrap();
        assert_eq!(a, emit_report(&report("a", 1.0, 2.0), ReportFormat::Json).unwrap());
        let mut mixed = report("b", 1.0, 1.0);
        mixed.kind = PipelineKind::PersonalitySd3;
        assert!(matches!(emit_reports(&[report("a", 1.0, 1.0), mixed], ReportFormat::Csv), Err(ReportError::MixedKinds(..))));
    }
}
