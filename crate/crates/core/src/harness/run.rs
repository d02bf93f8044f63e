use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{
    aggregate_mbti, aggregate_preference, aggregate_sd3, compute_preference_metrics, MbtiAggregate, PreferenceAggregate,
    PreferenceMetrics, Sd3Aggregate,
};
use super::spec::{BackendSpec, PersonaMode, PipelineKind, ResolvedPipeline};
use crate::config::{AgentProfile, World};
use crate::dialogue::{run_session, summarize};
use crate::gateway::{
    read_call_log, Backend, BackendKind, CallLog, CallLogError, CallRecord, Gateway, LiveBackend, ReplayBackend,
    RulebookError, ScriptRulebook, ScriptedBackend,
};
use crate::mind::{reflect, MemoryKind, MemoryStore};
use crate::psychometrics::{administer, score_mbti, score_sd3, AnswerSheet, MbtiResult, PersonaContext, Sd3Result};
use crate::world::{run_world, Event, StepLog, WorldState};

#[derive(Debug, thiserror::Error)]
pub enum BackendSetupError {
    #[error("live backend: {0}")]
    Live(String),
    #[error(transparent)]
    Rulebook(#[from] RulebookError),
    #[error("cannot read call log {path}: {source}")]
    LogIo { path: String, source: std::io::Error },
    #[error(transparent)]
    Log(#[from] CallLogError),
}

/// A ready backend plus the header of the call log it replays, if any.
pub struct BackendSetup {
    pub backend: Arc<dyn Backend>,
    pub replayed: Option<CallLog>,
    /// Live backends without a rate limit run one repetition at a time.
    pub serial: bool,
}

/// Builds the backend named by `spec`; relative paths resolve against `base_dir`.
pub fn build_backend(spec: &BackendSpec, base_dir: &Path) -> Result<BackendSetup, BackendSetupError> {
    match spec {
        BackendSpec::Live(cfg) => {
            let serial = cfg.requests_per_minute.is_none();
            let backend = LiveBackend::from_env(cfg.clone()).map_err(BackendSetupError::Live)?;
            Ok(BackendSetup { backend: Arc::new(backend), replayed: None, serial })
        }
        BackendSpec::Scripted { rulebook } => {
            let book = ScriptRulebook::load(&base_dir.join(rulebook))?;
            Ok(BackendSetup { backend: Arc::new(ScriptedBackend::new(&book)?), replayed: None, serial: false })
        }
        BackendSpec::Replay { log } => {
            let path = base_dir.join(log);
            let text = std::fs::read_to_string(&path)
                .map_err(|source| BackendSetupError::LogIo { path: path.display().to_string(), source })?;
            let log = read_call_log(&text)?;
            let backend = ReplayBackend::new(log.clone());
            Ok(BackendSetup { backend: Arc::new(backend), replayed: Some(log), serial: false })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RepetitionMetrics {
    Preference(PreferenceMetrics),
    Mbti(MbtiResult),
    Sd3(Sd3Result),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub index: u32,
    pub seed: u64,
    pub status: RepetitionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RepetitionMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sheet: Option<AnswerSheet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregate {
    Preference(PreferenceAggregate),
    Mbti(MbtiAggregate),
    Sd3(Sd3Aggregate),
}

pub const ARTIFACTS: [&str; 3] = ["transcripts.jsonl", "calls.jsonl", "steps.jsonl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub kind: PipelineKind,
    pub spec_digest: String,
    pub repetitions: Vec<RepetitionRecord>,
    /// Absent when no repetition completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    pub completed: u32,
    pub failed: u32,
    /// Companion files, relative to the report.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn all_completed(&self) -> bool {
        self.failed == 0
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Everything one repetition produced.
#[derive(Debug, Clone)]
pub struct RepetitionOutput {
    pub record: RepetitionRecord,
    pub steps: Vec<StepLog>,
    pub calls: Vec<CallRecord>,
}

pub struct PipelineRun {
    pub report: RunReport,
    pub outputs: Vec<RepetitionOutput>,
}

fn failed(index: u32, seed: u64, error: String, steps: Vec<StepLog>, gw: Gateway) -> RepetitionOutput {
    let record = RepetitionRecord {
        index,
        seed,
        status: RepetitionStatus::Failed,
        error: Some(error),
        metrics: None,
        sheet: None,
    };
    RepetitionOutput { record, steps, calls: gw.into_records() }
}

/// One independent repetition on a fresh world state.
pub fn run_repetition(pipeline: &ResolvedPipeline, backend: Arc<dyn Backend>, index: u32, seed: u64) -> RepetitionOutput {
    let llm = &pipeline.world.config().llm;
    let mut gw = Gateway::new(backend, index, seed)
        .with_max_tokens(llm.max_tokens)
        .with_parse_retries(llm.parse_retries);
    let spec = &pipeline.spec;

    if spec.kind == PipelineKind::PreferenceShaping {
        let mut state = WorldState::new(&pipeline.world);
        let target_action = pipeline.target_action.as_deref().expect("validated preference spec");
        return match run_world(&pipeline.world, &pipeline.injections, &mut state, &mut gw) {
            Ok(steps) => {
                let metrics = compute_preference_metrics(&steps, &spec.target_agent, target_action);
                let record = RepetitionRecord {
                    index,
                    seed,
                    status: RepetitionStatus::Completed,
                    error: None,
                    metrics: Some(RepetitionMetrics::Preference(metrics)),
                    sheet: None,
                };
                RepetitionOutput { record, steps, calls: gw.into_records() }
            }
            Err((mut steps, err)) => {
                let message = err.to_string();
                steps.push(err.partial);
                failed(index, seed, message, steps, gw)
            }
        };
    }

    let (persona, log) = match build_persona(pipeline, &mut gw) {
        Ok(built) => built,
        Err((log, message)) => return failed(index, seed, message, vec![log], gw),
    };
    let steps: Vec<StepLog> = log.into_iter().collect();
    let instrument = pipeline.instrument.as_ref().expect("validated personality spec");
    let sheet = match administer(instrument, &persona, &mut gw) {
        Ok(s) => s,
        Err(e) => return failed(index, seed, e.to_string(), steps, gw),
    };
    let scored = match spec.kind {
        PipelineKind::PersonalityMbti => score_mbti(&sheet, instrument).map(RepetitionMetrics::Mbti),
        _ => score_sd3(&sheet, instrument).map(RepetitionMetrics::Sd3),
    };
    match scored {
        Ok(metrics) => {
            let record = RepetitionRecord {
                index,
                seed,
                status: RepetitionStatus::Completed,
                error: None,
                metrics: Some(metrics),
                sheet: Some(sheet),
            };
            RepetitionOutput { record, steps, calls: gw.into_records() }
        }
        Err(e) => failed(index, seed, e.to_string(), steps, gw),
    }
}

fn partner_of<'w>(pipeline: &'w ResolvedPipeline, target: &AgentProfile) -> &'w AgentProfile {
    let world = &pipeline.world;
    let id = match pipeline.spec.persona.as_ref().and_then(|p| p.partner.as_deref()) {
        Some(id) => id.to_string(),
        None => {
            let rel = world.relationships_of(&target.id)[0];
            rel.between.iter().find(|id| **id != target.id).expect("relationship has two sides").clone()
        }
    };
    world.agent(&id).expect("validated partner")
}

fn relationship_lines(world: &World, target: &str) -> Vec<String> {
    world.relationships_of(target).iter().map(|r| r.description.clone()).collect()
}

/// Builds the test taker's context. The dialogue-reflection mode also returns
/// the journal of the conversation it ran.
#[allow(clippy::result_large_err)]
fn build_persona(
    pipeline: &ResolvedPipeline,
    gw: &mut Gateway,
) -> Result<(PersonaContext, Option<StepLog>), (StepLog, String)> {
    let persona_spec = pipeline.spec.persona.as_ref().expect("validated personality spec");
    let world = &pipeline.world;
    let target = world.agent(&pipeline.spec.target_agent).expect("validated target");
    let seeded = || {
        persona_spec.seed_memories.iter().filter(|m| m.kind == MemoryKind::Reflection).cloned().collect::<Vec<_>>()
    };
    match persona_spec.mode {
        PersonaMode::None => Ok((PersonaContext::default(), None)),
        PersonaMode::Identity => {
            let identity = persona_spec
                .identity
                .clone()
                .or_else(|| persona_spec.riasec.map(|r| r.identity_prompt().to_string()));
            Ok((PersonaContext { name: None, identity, reflections: seeded(), relationships: Vec::new() }, None))
        }
        PersonaMode::DialogueReflection => {
            let step = 1;
            let mut log = StepLog { step, ..StepLog::default() };
            let partner = partner_of(pipeline, target);
            let state = WorldState::new(world);
            let mut pair = [target, partner];
            pair.sort_by_key(|p| world.agent_index(&p.id));
            let states = pair.map(|p| state.agent(&p.id).expect("agent state").clone());
            let mut stores = pair.map(|p| {
                let mut store = MemoryStore::new(&p.id);
                if p.id == target.id {
                    for m in &persona_spec.seed_memories {
                        store.record(m.clone());
                    }
                }
                store
            });
            let id = format!("s{step:03}-{}-{}", pair[0].id, pair[1].id);
            let session = match run_session(
                world,
                [(pair[0], &states[0]), (pair[1], &states[1])],
                &world.config().dialogue,
                &pipeline.injections,
                step,
                &id,
                gw,
            ) {
                Ok(s) => s,
                Err(f) => {
                    let message = format!("{} call for agent '{}' failed: {}", f.purpose, f.agent, f.source);
                    log.events.push(Event::SessionAborted {
                        session_id: id,
                        participants: f.session.participants.clone(),
                        rounds: f.session.rounds.len(),
                        agent: f.agent.clone(),
                        purpose: f.purpose,
                        error: f.source.to_string(),
                    });
                    log.sessions.push(f.session);
                    return Err((log, message));
                }
            };
            log.events.push(Event::Session {
                session_id: id.clone(),
                participants: session.participants.clone(),
                rounds: session.rounds.len(),
                ended_by: session.ended_by.expect("finished session has an end reason"),
            });
            for (k, agent) in pair.iter().enumerate() {
                match summarize(world, &session, agent, step, gw) {
                    Ok(entry) => {
                        log.events.push(Event::Summary {
                            agent: agent.id.clone(),
                            session_id: id.clone(),
                            topics: entry.topics.clone(),
                            text: entry.text.clone(),
                        });
                        stores[k].record(entry);
                    }
                    Err(e) => log.events.push(Event::SummaryMissing {
                        agent: agent.id.clone(),
                        session_id: id.clone(),
                        error: e.to_string(),
                    }),
                }
            }
            log.sessions.push(session);
            let t = pair.iter().position(|p| p.id == target.id).expect("target in pair");
            if target.reflection_enabled {
                log.events.push(Event::ReflectionPass { agent: target.id.clone() });
                let fresh = reflect(world, target, &mut stores[t], &target.subjects, world.config().retrieval_k, step, gw);
                log.events.extend(fresh.iter().map(|r| Event::Reflection {
                    agent: target.id.clone(),
                    topics: r.topics.clone(),
                    text: r.text.clone(),
                }));
            }
            log.events.extend(gw.take_diagnostics().into_iter().map(Event::Warning));
            let reflections =
                stores[t].entries().iter().filter(|m| m.kind == MemoryKind::Reflection).cloned().collect();
            let persona = PersonaContext {
                name: Some(target.name.clone()),
                identity: None,
                reflections,
                relationships: relationship_lines(world, &target.id),
            };
            Ok((persona, Some(log)))
        }
    }
}

/// Reduces per-repetition records, in index order, to a report.
pub fn aggregate(pipeline: &ResolvedPipeline, records: Vec<RepetitionRecord>) -> RunReport {
    let completed: Vec<&RepetitionMetrics> = records
        .iter()
        .filter(|r| r.status == RepetitionStatus::Completed)
        .filter_map(|r| r.metrics.as_ref())
        .collect();
    let aggregate = match pipeline.spec.kind {
        PipelineKind::PreferenceShaping => aggregate_preference(
            &completed
                .iter()
                .filter_map(|m| match m {
                    RepetitionMetrics::Preference(p) => Some(*p),
                    _ => None,
                })
                .collect::<Vec<_>>(),
        )
        .map(Aggregate::Preference),
        PipelineKind::PersonalityMbti => aggregate_mbti(
            &completed
                .iter()
                .filter_map(|m| match m {
                    RepetitionMetrics::Mbti(r) => Some(r.clone()),
                    _ => None,
                })
                .collect::<Vec<_>>(),
        )
        .map(Aggregate::Mbti),
        PipelineKind::PersonalitySd3 => aggregate_sd3(
            &completed
                .iter()
                .filter_map(|m| match m {
                    RepetitionMetrics::Sd3(r) => Some(*r),
                    _ => None,
                })
                .collect::<Vec<_>>(),
        )
        .map(Aggregate::Sd3),
    };
    let done = completed.len() as u32;
    RunReport {
        label: pipeline.spec.label.clone(),
        kind: pipeline.spec.kind,
        spec_digest: pipeline.spec_digest.clone(),
        failed: records.len() as u32 - done,
        completed: done,
        repetitions: records,
        aggregate,
        artifacts: ARTIFACTS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Runs every repetition of `pipeline` with at most `jobs` in flight.
pub fn run_pipeline(pipeline: &ResolvedPipeline, backend: Arc<dyn Backend>, jobs: usize) -> PipelineRun {
    let seeds: Vec<(u32, u64)> =
        (0..pipeline.spec.repetitions).map(|i| (i, pipeline.spec.seed.wrapping_add(i as u64))).collect();
    let run_one = |&(index, seed): &(u32, u64)| run_repetition(pipeline, backend.clone(), index, seed);
    let outputs: Vec<RepetitionOutput> = if jobs <= 1 {
        seeds.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
        pool.install(|| seeds.par_iter().map(run_one).collect())
    };
    for out in &outputs {
        if let Some(e) = &out.record.error {
            log::warn!("repetition {} failed: {e}", out.record.index);
        }
    }
    let report = aggregate(pipeline, outputs.iter().map(|o| o.record.clone()).collect());
    PipelineRun { report, outputs }
}

/// Kind recorded in run metadata.
pub fn backend_kind(spec: &BackendSpec) -> BackendKind {
    match spec {
        BackendSpec::Live(_) => BackendKind::Live,
        BackendSpec::Scripted { .. } => BackendKind::Scripted,
        BackendSpec::Replay { .. } => BackendKind::Replay,
    }
}
