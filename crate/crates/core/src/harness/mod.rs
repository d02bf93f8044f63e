//! Declarative experiment pipelines: spec loading, ablations, repeated runs,
//! aggregation and report files.

mod ablation;
mod metrics;
mod output;
mod report;
mod run;
mod spec;

pub use ablation::{apply_ablations, Ablated, Rename, Renamer};
pub use metrics::{
    aggregate_mbti, aggregate_preference, aggregate_sd3, compute_preference_metrics, mean, pos_ratio, MbtiAggregate,
    PreferenceAggregate, PreferenceMetrics, Sd3Aggregate,
};
pub use output::{calls_jsonl, report_file, steps_jsonl, transcripts_jsonl, write_run_dir, RunMeta};
pub use report::{emit_report, emit_reports, header, ReportError, ReportFormat};
pub use run::{
    aggregate, backend_kind, build_backend, run_pipeline, run_repetition, Aggregate, BackendSetup, BackendSetupError,
    PipelineRun, RepetitionMetrics, RepetitionOutput, RepetitionRecord, RepetitionStatus, RunReport, ARTIFACTS,
};
pub use spec::{
    load_instrument, spec_digest, Ablation, BackendSpec, PersonaMode, PersonaSpec, PipelineKind, PipelineSpec,
    ResolvedPipeline, SpecError,
};
