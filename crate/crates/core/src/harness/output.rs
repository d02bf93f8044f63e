use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{emit_report, ReportFormat};
use super::run::PipelineRun;
use super::spec::PipelineKind;
use crate::gateway::{BackendKind, CallLog};

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub spec_digest: String,
    pub label: String,
    pub kind: PipelineKind,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub repetitions: u32,
    pub jobs: usize,
    pub backend: BackendKind,
    pub version: String,
    pub completed: u32,
    pub failed: u32,
}

impl RunMeta {
    pub fn new(run: &PipelineRun, seed: u64, jobs: usize, backend: BackendKind) -> Self {
        let r = &run.report;
        Self {
            spec_digest: r.spec_digest.clone(),
            label: r.label.clone(),
            kind: r.kind,
            seed,
            seeds: r.repetitions.iter().map(|x| x.seed).collect(),
            repetitions: r.repetitions.len() as u32,
            jobs,
            backend,
            version: env!("CARGO_PKG_VERSION").to_string(),
            completed: r.completed,
            failed: r.failed,
        }
    }
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    rep: u32,
    step: u32,
    session_id: &'a str,
    round: usize,
    speaker: &'a str,
    text: &'a str,
    injections_active: &'a [String],
}

pub fn steps_jsonl(run: &PipelineRun) -> String {
    let mut out = String::new();
    for o in &run.outputs {
        for log in &o.steps {
            for event in &log.events {
                let mut line = serde_json::Map::new();
                line.insert("rep".into(), o.record.index.into());
                line.insert("step".into(), log.step.into());
                if let serde_json::Value::Object(fields) = serde_json::to_value(event).expect("event serializes") {
                    line.extend(fields);
                }
                writeln!(out, "{}", serde_json::Value::Object(line)).unwrap();
            }
        }
    }
    out
}

pub fn transcripts_jsonl(run: &PipelineRun) -> String {
    let mut out = String::new();
    for o in &run.outputs {
        for log in &o.steps {
            for session in &log.sessions {
                for (k, round) in session.rounds.iter().enumerate() {
                    let line = TranscriptLine {
                        rep: o.record.index,
                        step: session.step,
                        session_id: &session.id,
                        round: k + 1,
                        speaker: &round.speaker,
                        text: &round.text,
                        injections_active: &round.injections_active,
                    };
                    writeln!(out, "{}", serde_json::to_string(&line).expect("round serializes")).unwrap();
                }
            }
        }
    }
    out
}

pub fn calls_jsonl(run: &PipelineRun) -> String {
    let records = run.outputs.iter().flat_map(|o| o.calls.iter().cloned()).collect();
    CallLog::new(run.report.spec_digest.clone(), records).to_jsonl()
}

pub fn report_file(format: ReportFormat) -> String {
    format!("report.{}", format.extension())
}

/// Writes reports in every format plus the journals and `meta.json` into `dir`.
pub fn write_run_dir(dir: &Path, run: &PipelineRun, meta: &RunMeta) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for format in ReportFormat::ALL {
        let bytes = emit_report(&run.report, format).map_err(io::Error::other)?;
        std::fs::write(dir.join(report_file(format)), bytes)?;
    }
    std::fs::write(dir.join("transcripts.jsonl"), transcripts_jsonl(run))?;
    std::fs::write(dir.join("calls.jsonl"), calls_jsonl(run))?;
    std::fs::write(dir.join("steps.jsonl"), steps_jsonl(run))?;
    let mut meta_json = serde_json::to_vec_pretty(meta).expect("meta serializes");
    meta_json.push(b'\n');
    std::fs::write(dir.join("meta.json"), meta_json)?;
    Ok(())
}
