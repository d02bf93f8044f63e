//! Command implementations behind the `afspp` binary.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use afspp_core::config::{ConfigError, Violation, WorldConfig};
use afspp_core::gateway::{read_call_log, Purpose, ScriptRulebook, ScriptedBackend};
use afspp_core::harness::{
    backend_kind, build_backend, emit_report, emit_reports, report_file, run_pipeline, write_run_dir, BackendSpec,
    PipelineSpec, ReportFormat, RunMeta, RunReport, SpecError,
};
use afspp_core::psychometrics::{score_mbti, score_sd3, AnswerSheet, Instrument, ScoringKind};
use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "afspp", version, about = "Run and inspect agent preference and personality experiments")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a pipeline spec, world, instrument or rulebook file.
    Validate { path: PathBuf },
    /// Execute every repetition of a pipeline spec.
    Run {
        spec: PathBuf,
        /// `live`, `scripted:<rulebook>` or `replay:<calls.jsonl>`.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Format of the report printed to stdout.
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Re-run a recorded run from its call log and compare the reports.
    Replay {
        log: PathBuf,
        spec: PathBuf,
        /// Where to write the reproduced run; a temporary directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score a saved answer sheet, or every sheet in a run's report.json.
    Score {
        path: PathBuf,
        /// Instrument reference; inferred from the sheet when omitted.
        #[arg(long)]
        instrument: Option<String>,
    },
    /// Merge the reports of several runs into one table.
    Report {
        /// Run directories or report.json files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs one parsed invocation and returns the process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Validate { path } => validate(&path, out, err),
        Command::Run { spec, backend, out: dir, jobs, seed, format } => {
            run(&spec, backend.as_deref(), &dir, jobs, seed, &format, out, err)
        }
        Command::Replay { log, spec, out: dir, jobs } => replay(&log, &spec, dir.as_deref(), jobs, out, err),
        Command::Score { path, instrument } => score(&path, instrument.as_deref(), out),
        Command::Report { runs, format, out: file } => report(&runs, &format, file.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_USAGE
        }
    }
}

fn print_violations(err: &mut dyn Write, what: &Path, violations: &[Violation]) {
    let _ = writeln!(err, "{}: {} violation(s)", what.display(), violations.len());
    for v in violations {
        let _ = writeln!(err, "  {v}");
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if text.trim().is_empty() {
        bail!("{} is empty", path.display());
    }
    Ok(text)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DocKind {
    Spec,
    World,
    Instrument,
    Rulebook,
}

fn detect(value: &serde_json::Value) -> DocKind {
    let has = |k: &str| value.get(k).is_some();
    if has("rules") {
        DocKind::Rulebook
    } else if has("items") {
        DocKind::Instrument
    } else if has("areas") || has("agents") {
        DocKind::World
    } else {
        DocKind::Spec
    }
}

fn validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let text = read_text(path)?;
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            print_violations(err, path, &[Violation::new("$", format!("malformed document: {e}"))]);
            return Ok(EXIT_FAILURE);
        }
    };
    let kind = detect(&value);
    let violations: Vec<Violation> = match kind {
        DocKind::Spec => match PipelineSpec::from_json(&text) {
            Ok(spec) => spec.resolve(&base_dir(path)).err().map(|e| e.violations()).unwrap_or_default(),
            Err(e) => e.violations(),
        },
        DocKind::World => match WorldConfig::from_json(&text) {
            Ok(cfg) => cfg.validate(),
            Err(e) => e.violations(),
        },
        DocKind::Instrument => Instrument::from_json(&text).err().map(|e| e.violations()).unwrap_or_default(),
        DocKind::Rulebook => {
            let checked = ScriptRulebook::from_json(&text).and_then(|book| {
                ScriptedBackend::new(&book)?;
                book.check_covers(&Purpose::ALL)
            });
            checked.err().map(|e| vec![Violation::new("$", e.to_string())]).unwrap_or_default()
        }
    };
    if violations.is_empty() {
        writeln!(out, "ok: {} ({kind:?})", path.display())?;
        Ok(EXIT_OK)
    } else {
        print_violations(err, path, &violations);
        Ok(EXIT_FAILURE)
    }
}

/// Loads and resolves a spec. `Err` is an environment problem; `Ok(Err)` a
/// validation failure that has already been printed.
fn load_spec(path: &Path, seed: Option<u64>, err: &mut dyn Write) -> anyhow::Result<Result<afspp_core::harness::ResolvedPipeline, ()>> {
    let mut spec = match PipelineSpec::load(path) {
        Ok(s) => s,
        Err(e @ (ConfigError::Io { .. } | ConfigError::Empty { .. })) => return Err(e.into()),
        Err(e) => {
            print_violations(err, path, &e.violations());
            return Ok(Err(()));
        }
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    match spec.resolve(&base_dir(path)) {
        Ok(r) => Ok(Ok(r)),
        Err(e @ SpecError::Invalid(_)) | Err(e @ SpecError::Load(_)) => {
            print_violations(err, path, &e.violations());
            Ok(Err(()))
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[allow(clippy::too_many_arguments)]
fn run(
    spec_path: &Path,
    backend: Option<&str>,
    dir: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
    format: &str,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    let format: ReportFormat = format.parse()?;
    if jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let (backend_spec, backend_base) = match backend {
        Some(text) => (BackendSpec::parse_override(text).map_err(|e| anyhow!(e))?, PathBuf::new()),
        None => {
            let spec = PipelineSpec::load(spec_path)?;
            let b = spec.backend.ok_or_else(|| anyhow!("the pipeline spec names no backend; pass --backend"))?;
            (b, base_dir(spec_path))
        }
    };
    let Ok(pipeline) = load_spec(spec_path, seed, err)? else {
        return Ok(EXIT_FAILURE);
    };
    let setup = build_backend(&backend_spec, &backend_base)?;
    let mut jobs = jobs.unwrap_or_else(default_jobs);
    if setup.serial && jobs > 1 {
        log::info!("live backend without a rate limit: running one repetition at a time");
        jobs = 1;
    }
    let run = run_pipeline(&pipeline, setup.backend, jobs);
    let meta = RunMeta::new(&run, pipeline.spec.seed, jobs, backend_kind(&backend_spec));
    write_run_dir(dir, &run, &meta).with_context(|| format!("cannot write {}", dir.display()))?;
    out.write_all(&emit_report(&run.report, format)?)?;
    report_failures(&run.report, err);
    Ok(if run.report.all_completed() { EXIT_OK } else { EXIT_FAILURE })
}

fn report_failures(report: &RunReport, err: &mut dyn Write) {
    for r in report.repetitions.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(err, "repetition {} (seed {}) failed: {}", r.index, r.seed, r.error.as_deref().unwrap_or(""));
    }
    if report.failed > 0 {
        let _ = writeln!(
            err,
            "{} of {} repetitions failed; aggregates cover {} completed",
            report.failed,
            report.failed + report.completed,
            report.completed
        );
    }
}

fn replay(
    log_path: &Path,
    spec_path: &Path,
    dir: Option<&Path>,
    jobs: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    let original_dir = base_dir(log_path);
    let meta: Option<RunMeta> = std::fs::read_to_string(original_dir.join("meta.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let log = read_call_log(&read_text(log_path)?).with_context(|| format!("cannot parse {}", log_path.display()))?;
    let Ok(pipeline) = load_spec(spec_path, meta.as_ref().map(|m| m.seed), err)? else {
        return Ok(EXIT_FAILURE);
    };
    if log.header.spec_digest != pipeline.spec_digest {
        writeln!(
            err,
            "spec digest mismatch: log was recorded for {}, spec {} has digest {}",
            log.header.spec_digest,
            spec_path.display(),
            pipeline.spec_digest
        )?;
        return Ok(EXIT_FAILURE);
    }
    let backend = BackendSpec::Replay { log: log_path.display().to_string() };
    let setup = build_backend(&backend, Path::new(""))?;
    let jobs = jobs.unwrap_or_else(default_jobs).max(1);
    let run = run_pipeline(&pipeline, setup.backend, jobs);
    let temp;
    let target = match dir {
        Some(d) => d.to_path_buf(),
        None => {
            temp = tempfile::tempdir()?;
            temp.path().to_path_buf()
        }
    };
    let run_meta = RunMeta::new(&run, pipeline.spec.seed, jobs, backend_kind(&backend));
    write_run_dir(&target, &run, &run_meta)?;
    report_failures(&run.report, err);

    let recorded_failures: HashSet<(u32, u64)> =
        log.records.iter().filter(|r| r.error.is_some()).map(|r| (r.repetition, r.seq)).collect();
    for call in run.outputs.iter().flat_map(|o| &o.calls) {
        if let Some(e) = call.error.as_deref().filter(|_| !recorded_failures.contains(&(call.repetition, call.seq))) {
            writeln!(err, "repetition {} sequence {} was not reproduced: {e}", call.repetition, call.seq)?;
        }
    }

    let mut differing = Vec::new();
    let names = ReportFormat::ALL.into_iter().map(report_file).chain(["steps.jsonl".to_string()]);
    for name in names {
        let original = std::fs::read(original_dir.join(&name)).ok();
        let fresh = std::fs::read(target.join(&name))?;
        if original.as_deref() != Some(fresh.as_slice()) {
            differing.push(name);
        }
    }
    if differing.is_empty() && run.report.all_completed() {
        writeln!(out, "replay reproduced the step journal and {} report files byte for byte", ReportFormat::ALL.len())?;
        Ok(EXIT_OK)
    } else {
        if !differing.is_empty() {
            writeln!(err, "outputs differ from the recorded run: {}", differing.join(", "))?;
        }
        Ok(EXIT_FAILURE)
    }
}

fn instrument_for_sheet(sheet: &AnswerSheet, reference: Option<&str>) -> anyhow::Result<Instrument> {
    let reference = match reference {
        Some(r) => r.to_string(),
        None => match sheet.instrument.as_str() {
            "MBTI93" => "builtin:mbti93".into(),
            "SD3" => "builtin:sd3".into(),
            other => bail!("sheet is for instrument '{other}'; pass --instrument"),
        },
    };
    let (instrument, _) = afspp_core::harness::load_instrument(&reference, Path::new(""))?;
    Ok(instrument)
}

fn score_one(sheet: &AnswerSheet, instrument: &Instrument) -> Result<serde_json::Value, String> {
    let scored = match instrument.scoring_kind {
        ScoringKind::ForcedChoicePoles => score_mbti(sheet, instrument).map(serde_json::to_value),
        ScoringKind::LikertSubscales => score_sd3(sheet, instrument).map(serde_json::to_value),
    };
    scored.map(|v| v.expect("scores serialize")).map_err(|e| e.to_string())
}

fn score(path: &Path, reference: Option<&str>, out: &mut dyn Write) -> anyhow::Result<i32> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let sheets: Vec<(Option<u32>, AnswerSheet)> = if value.get("repetitions").is_some() {
        let report: RunReport = serde_json::from_value(value).context("malformed report")?;
        report.repetitions.into_iter().filter_map(|r| r.sheet.map(|s| (Some(r.index), s))).collect()
    } else {
        vec![(None, serde_json::from_value(value).context("malformed answer sheet")?)]
    };
    if sheets.is_empty() {
        bail!("{} holds no answer sheets", path.display());
    }
    let mut code = EXIT_OK;
    for (index, sheet) in &sheets {
        let instrument = instrument_for_sheet(sheet, reference)?;
        let mut line = match score_one(sheet, &instrument) {
            Ok(v) => v,
            Err(e) => {
                code = EXIT_FAILURE;
                serde_json::json!({ "error": e })
            }
        };
        if let Some(i) = index {
            line["repetition"] = (*i).into();
        }
        writeln!(out, "{line}")?;
    }
    Ok(code)
}

fn report(runs: &[PathBuf], format: &str, file: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<i32> {
    let format: ReportFormat = format.parse()?;
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let path = if run.is_dir() { run.join("report.json") } else { run.clone() };
        let report = RunReport::from_json(&read_text(&path)?).with_context(|| format!("malformed report {}", path.display()))?;
        reports.push(report);
    }
    let bytes = emit_reports(&reports, format)?;
    match file {
        Some(f) => std::fs::write(f, bytes).with_context(|| format!("cannot write {}", f.display()))?,
        None => out.write_all(&bytes)?,
    }
    Ok(EXIT_OK)
}
