mod common;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use afspp_core::gateway::{
    Backend, BackendKind, CallContext, CallRecord, ChatRequest, Completion, GatewayError, Purpose, ScriptRulebook,
    ScriptedBackend,
};
use afspp_core::harness::{
    aggregate, aggregate_preference, run_pipeline, run_repetition, Aggregate, PipelineSpec, RepetitionMetrics,
    RepetitionOutput, RepetitionStatus, ResolvedPipeline,
};
use afspp_core::prompt::{identity_title, strip_section};
use afspp_core::psychometrics::{type_from_means, TIE_BREAK};
use afspp_core::world::Event;

fn resolve(json: &str) -> ResolvedPipeline {
    PipelineSpec::from_json(json).unwrap().resolve(&common::presets().join("specs")).unwrap()
}

fn preference(extra: &str) -> ResolvedPipeline {
    resolve(&format!(
        r#"{{"label":"t","kind":"preference_shaping","world":"../worlds/qunits_cafe.json","target_agent":"anty",
            "target_action":"drink coffee","repetitions":10,"seed":42{extra}}}"#
    ))
}

fn demo_backend() -> Arc<dyn Backend> {
    let book = ScriptRulebook::load(&common::presets().join("rules/demo.rules")).unwrap();
    Arc::new(ScriptedBackend::new(&book).unwrap())
}

/// Replies depend on the request text only, never on the call number.
fn pure_backend() -> Arc<dyn Backend> {
    let book = ScriptRulebook::from_json(
        r#"{"rules":[
        {"purpose":"action_decision","pattern":"(?m)^\\d+\\. (drink [^\\n]+? in the Dining area)$","response":"I would like to $1."},
        {"purpose":"action_decision","pattern":"(?m)^\\d+\\. (work on computer in the Reading area)$","response":"I want to $1."},
        {"purpose":"action_decision","response":"DECISION: stay"},
        {"purpose":"dialogue_turn","response":"Hello there."},
        {"purpose":"end_decision","response":"ANSWER: end"},
        {"purpose":"summary","pattern":"conversation with ([^\\n]+?) from","response":"I talked with $1."},
        {"purpose":"summary","response":"We talked."},
        {"purpose":"reflection","response":"That matters to me."},
        {"purpose":"plan","pattern":"ANSWER: yes","response":"ANSWER: no"},
        {"purpose":"plan","response":"Keep going."},
        {"purpose":"instrument_item","response":"ANSWER: A"}
    ]}"#,
    )
    .unwrap();
    Arc::new(ScriptedBackend::new(&book).unwrap())
}

/// Anty takes the offered target action on its first `pos[rep]` offers and
/// declines afterwards; everyone else stays put.
struct Quota {
    pos: Vec<u32>,
    used: Mutex<HashMap<u32, u32>>,
    fail_rep: Option<u32>,
}

impl Quota {
    fn new(pos: Vec<u32>) -> Self {
        Self { pos, used: Mutex::new(HashMap::new()), fail_rep: None }
    }
}

impl Backend for Quota {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, ctx: &CallContext, request: &ChatRequest) -> Result<Completion, GatewayError> {
        if self.fail_rep == Some(ctx.repetition) && ctx.seq >= 7 && request.purpose == Purpose::ActionDecision {
            return Err(GatewayError::Exhausted {
                purpose: request.purpose,
                attempts: 3,
                status: Some(503),
                message: "unavailable".into(),
            });
        }
        let text = request.joined_content();
        let reply = match request.purpose {
            Purpose::ActionDecision if !text.contains("You are Anty,") => "DECISION: stay".to_string(),
            Purpose::ActionDecision if text.contains(". drink coffee in the Dining area") => {
                let mut used = self.used.lock().unwrap();
                let n = used.entry(ctx.repetition).or_insert(0);
                if *n < self.pos[ctx.repetition as usize] {
                    *n += 1;
                    "DECISION: drink coffee".into()
                } else {
                    "DECISION: stay".into()
                }
            }
            Purpose::ActionDecision => "DECISION: work on computer".into(),
            Purpose::EndDecision => "ANSWER: end".into(),
            Purpose::Plan if text.contains("ANSWER: yes") => "ANSWER: no".into(),
            _ => "Fine.".into(),
        };
        Ok(Completion { text: reply, latency_ms: 0 })
    }
}

fn pref(out: &RepetitionOutput) -> (u32, u32, Option<f64>) {
    match out.record.metrics.as_ref().unwrap() {
        RepetitionMetrics::Preference(m) => (m.pos_intent, m.neg_intent, m.pos_ratio),
        other => panic!("{other:?}"),
    }
}

fn pref_agg(agg: &Option<Aggregate>) -> afspp_core::harness::PreferenceAggregate {
    match agg.as_ref().unwrap() {
        Aggregate::Preference(p) => p.clone(),
        other => panic!("{other:?}"),
    }
}

#[test]
fn quota_script_matches_spreadsheet() {
    let pipeline = preference("");
    let pos = vec![0, 1, 2, 3, 4, 5, 6, 3, 3, 3];
    let run = run_pipeline(&pipeline, Arc::new(Quota::new(pos)), 4);
    // Each accepted offer costs the following step (the menu then lacks the
    // target), so a quota of p over 12 steps yields p accepts and 12 - 2p declines.
    let expected = [(0, 12), (1, 10), (2, 8), (3, 6), (4, 4), (5, 2), (6, 0), (3, 6), (3, 6), (3, 6)];
    for (out, &(p, n)) in run.outputs.iter().zip(&expected) {
        assert_eq!((pref(out).0, pref(out).1), (p, n), "repetition {}", out.record.index);
    }
    let agg = pref_agg(&run.report.aggregate);
    assert_eq!(agg.pos_intent, 3.0);
    assert_eq!(agg.neg_intent, 6.0);
    assert!((agg.pos_ratio.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let rep_mean = (0.0 + 1.0 / 11.0 + 0.2 + 1.0 / 3.0 + 0.5 + 5.0 / 7.0 + 1.0 + 1.0) / 10.0;
    assert!((agg.pos_ratio_rep_mean.unwrap() - rep_mean).abs() < 1e-12);
    assert_eq!(run.report.completed, 10);
}

#[test]
fn degenerate_policies() {
    let pipeline = preference("");
    let always = run_pipeline(&pipeline, Arc::new(Quota::new(vec![99; 10])), 2);
    let agg = pref_agg(&always.report.aggregate);
    assert_eq!(agg.pos_ratio, Some(1.0));
    let never = run_pipeline(&pipeline, Arc::new(Quota::new(vec![0; 10])), 2);
    let agg = pref_agg(&never.report.aggregate);
    assert_eq!((agg.pos_intent, agg.pos_ratio), (0.0, Some(0.0)));
}

#[test]
fn failed_repetition_is_disclosed_and_excluded() {
    let pipeline = preference("");
    let mut backend = Quota::new(vec![2; 10]);
    backend.fail_rep = Some(3);
    let run = run_pipeline(&pipeline, Arc::new(backend), 3);
    assert_eq!((run.report.completed, run.report.failed), (9, 1));
    let failed = &run.report.repetitions[3];
    assert_eq!(failed.status, RepetitionStatus::Failed);
    assert!(failed.error.as_deref().unwrap().contains("unavailable"));
    assert!(failed.metrics.is_none());
    let completed: Vec<_> = run
        .report
        .repetitions
        .iter()
        .filter_map(|r| match &r.metrics {
            Some(RepetitionMetrics::Preference(m)) => Some(*m),
            _ => None,
        })
        .collect();
    assert_eq!(completed.len(), 9);
    assert_eq!(pref_agg(&run.report.aggregate), aggregate_preference(&completed).unwrap());
}

#[test]
fn permuting_seeds_permutes_records_only() {
    let pipeline = preference("");
    let backend = demo_backend();
    let seeds: Vec<u64> = (0..8).map(|i| 100 + 17 * i).collect();
    let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
    let base: Vec<_> = seeds.iter().enumerate().map(|(i, &s)| run_repetition(&pipeline, backend.clone(), i as u32, s)).collect();
    let shuffled: Vec<_> =
        perm.iter().enumerate().map(|(i, &p)| run_repetition(&pipeline, backend.clone(), i as u32, seeds[p])).collect();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(shuffled[i].record.metrics, base[p].record.metrics);
        assert_eq!(shuffled[i].record.seed, base[p].record.seed);
    }
    let a = pref_agg(&aggregate(&pipeline, base.into_iter().map(|o| o.record).collect()).aggregate);
    let b = pref_agg(&aggregate(&pipeline, shuffled.into_iter().map(|o| o.record).collect()).aggregate);
    assert!((a.pos_intent - b.pos_intent).abs() < 1e-12);
    assert!((a.neg_intent - b.neg_intent).abs() < 1e-12);
    assert!((a.avg_happiness - b.avg_happiness).abs() < 1e-12);
    assert!((a.pos_ratio.unwrap() - b.pos_ratio.unwrap()).abs() < 1e-12);
}

#[test]
fn runs_are_deterministic_across_job_counts() {
    let pipeline = preference("");
    let a = run_pipeline(&pipeline, demo_backend(), 1);
    let b = run_pipeline(&pipeline, demo_backend(), 8);
    assert_eq!(a.report, b.report);
    let calls = |r: &afspp_core::harness::PipelineRun| -> Vec<CallRecord> {
        r.outputs.iter().flat_map(|o| o.calls.clone()).collect()
    };
    assert_eq!(calls(&a), calls(&b));
}

fn contents(calls: &[CallRecord]) -> Vec<Vec<String>> {
    calls.iter().map(|c| c.request.messages.iter().map(|m| m.content.clone()).collect()).collect()
}

#[test]
fn no_identity_touches_only_the_identity_slot() {
    let control = run_repetition(&preference(""), pure_backend(), 0, 42);
    let ablated = run_repetition(&preference(r#","ablations":[{"kind":"no_identity"}]"#), pure_backend(), 0, 42);
    let (c, a) = (contents(&control.calls), contents(&ablated.calls));
    assert_eq!(c.len(), a.len());
    let title = identity_title("Anty");
    let mut changed = 0;
    for (cm, am) in c.iter().zip(&a) {
        assert_eq!(cm.len(), am.len());
        for (x, y) in cm.iter().zip(am) {
            if x != y {
                changed += 1;
            }
            assert_eq!(strip_section(x, &title), *y);
            assert!(!y.contains(&format!("## {title}")));
        }
    }
    assert!(changed > 0);
}

fn trajectories(out: &RepetitionOutput) -> Vec<(String, String, [f64; 3])> {
    out.steps
        .iter()
        .flat_map(|l| &l.events)
        .filter_map(|e| match e {
            Event::Action { agent, action, after, .. } => {
                Some((agent.clone(), action.clone(), [after.happiness, after.energy, after.satiety]))
            }
            Event::Decay { agent, after, .. } => {
                Some((agent.clone(), "decay".into(), [after.happiness, after.energy, after.satiety]))
            }
            _ => None,
        })
        .collect()
}

fn prompts_contain(out: &RepetitionOutput, needle: &str) -> bool {
    out.calls.iter().flat_map(|c| &c.request.messages).any(|m| m.content.to_lowercase().contains(needle))
}

#[test]
fn no_sensory_perception_keeps_state_but_drops_the_memory() {
    let control = run_repetition(&preference(""), pure_backend(), 0, 42);
    let ablated =
        run_repetition(&preference(r#","ablations":[{"kind":"no_sensory_perception"}]"#), pure_backend(), 0, 42);
    assert_eq!(trajectories(&control), trajectories(&ablated));
    let bitter = "very bitter and dry mouth";
    let memories = |o: &RepetitionOutput| -> Vec<String> {
        o.steps
            .iter()
            .flat_map(|l| &l.events)
            .filter_map(|e| match e {
                Event::Action { agent, memory: Some(m), .. } if agent == "anty" => Some(m.clone()),
                _ => None,
            })
            .collect()
    };
    assert!(memories(&control).iter().any(|m| m.contains(bitter)));
    assert!(!memories(&ablated).iter().any(|m| m.contains(bitter)));
    assert!(prompts_contain(&control, bitter));
    assert!(!prompts_contain(&ablated, bitter));
}

#[test]
fn no_prior_knowledge_removes_the_term_from_every_prompt() {
    let pipeline = preference(r#","ablations":[{"kind":"no_prior_knowledge"}]"#);
    assert_eq!(pipeline.target_action.as_deref(), Some("drink jory water"));
    assert_eq!(pipeline.world.action("drink jory water").unwrap().display_phrase, "drink jory water in the Dining area");
    let run = run_pipeline(&pipeline, demo_backend(), 4);
    assert_eq!(run.report.completed, 10);
    for out in &run.outputs {
        assert!(!prompts_contain(out, "coffee"), "repetition {}", out.record.index);
    }
    let agg = pref_agg(&run.report.aggregate);
    assert!(agg.pos_intent + agg.neg_intent > 0.0);
    let control = run_repetition(&preference(""), demo_backend(), 0, 42);
    assert!(prompts_contain(&control, "coffee"));
}

#[test]
fn injections_are_renamed_with_the_world() {
    let pipeline = preference(
        r#","injections":[{"target_agent":"agnes","instruction":"Say Coffee is great."}],
            "ablations":[{"kind":"no_prior_knowledge","renames":[{"from":"coffee","to":"jory water"}]}]"#,
    );
    assert_eq!(pipeline.injections[0].instruction, "Say Jory water is great.");
}

#[test]
fn rename_of_an_absent_term_is_rejected() {
    let spec = PipelineSpec::from_json(
        r#"{"label":"t","kind":"preference_shaping","world":"../worlds/qunits_cafe.json","target_agent":"anty",
            "target_action":"drink coffee","repetitions":1,
            "ablations":[{"kind":"no_prior_knowledge","renames":[{"from":"tea","to":"jory water"}]}]}"#,
    )
    .unwrap();
    let err = spec.resolve(&common::presets().join("specs")).unwrap_err();
    assert!(err.violations().iter().any(|v| v.message.contains("'tea'")), "{err}");
}

fn count_events(out: &RepetitionOutput, pred: impl Fn(&Event) -> bool) -> usize {
    out.steps.iter().flat_map(|l| &l.events).filter(|e| pred(e)).count()
}

#[test]
fn no_reflection_and_no_plan() {
    let is_reflection = |e: &Event| matches!(e, Event::Reflection { agent, .. } if agent == "anty");
    let is_plan = |e: &Event| matches!(e, Event::PlanUpdated { agent, .. } if agent == "anty");
    let control = run_repetition(&preference(""), pure_backend(), 0, 42);
    assert!(count_events(&control, is_reflection) > 0);
    assert!(count_events(&control, is_plan) > 0);

    let no_reflection = run_repetition(&preference(r#","ablations":[{"kind":"no_reflection"}]"#), pure_backend(), 0, 42);
    assert_eq!(count_events(&no_reflection, is_reflection), 0);

    let no_plan = run_repetition(&preference(r#","ablations":[{"kind":"no_plan"}]"#), pure_backend(), 0, 42);
    assert_eq!(count_events(&no_plan, is_plan), 0);
    let anty_prompts_with_plan = no_plan
        .calls
        .iter()
        .filter(|c| c.request.messages[0].content.starts_with("You are Anty,"))
        .filter(|c| c.request.messages.iter().any(|m| m.content.contains("## Current plan")))
        .count();
    assert_eq!(anty_prompts_with_plan, 0);
}

#[test]
fn dialogue_reflection_persona_uses_the_conversation() {
    let pipeline = resolve(
        r#"{"label":"Gentle","kind":"personality_mbti","world":"../worlds/qunits_cafe.json","target_agent":"anty",
            "instrument":"builtin:mbti93","repetitions":1,"seed":1,
            "injections":[{"target_agent":"agnes","instruction":"Be gentle."}],
            "persona":{"mode":"dialogue_reflection"}}"#,
    );
    let out = run_repetition(&pipeline, pure_backend(), 0, 1);
    assert_eq!(out.record.status, RepetitionStatus::Completed, "{:?}", out.record.error);
    assert_eq!(out.steps.len(), 1);
    let session = &out.steps[0].sessions[0];
    assert_eq!(session.participants, ["anty".to_string(), "agnes".to_string()]);
    assert!((2..=4).contains(&session.rounds.len()));
    assert!(session.rounds.iter().any(|r| r.speaker == "agnes" && r.injections_active == ["Be gentle."]));
    let item_calls: Vec<_> = out.calls.iter().filter(|c| c.purpose == Purpose::InstrumentItem).collect();
    assert_eq!(item_calls.len(), 93);
    let system = &item_calls[0].request.messages[0].content;
    assert!(system.contains("That matters to me."), "{system}");
    assert!(system.contains("schoolmates and lovers"));
    assert!(!system.contains("## Identity"));
    match out.record.metrics.unwrap() {
        RepetitionMetrics::Mbti(m) => assert_eq!(m.scores.to_array()[..2].iter().sum::<u32>(), 21),
        other => panic!("{other:?}"),
    }
}

#[test]
fn blank_persona_sends_no_system_message() {
    let pipeline = resolve(
        r#"{"label":"None","kind":"personality_sd3","world":"../worlds/qunits_cafe.json","target_agent":"anty",
            "instrument":"builtin:sd3","repetitions":2,"persona":{"mode":"none"}}"#,
    );
    let run = run_pipeline(&pipeline, demo_backend(), 2);
    assert_eq!(run.report.completed, 2);
    for out in &run.outputs {
        assert!(out.calls.iter().all(|c| c.request.messages.len() == 1));
        assert!(out.record.sheet.is_some());
    }
}

#[test]
fn spec_validation_reports_every_problem() {
    let spec = PipelineSpec::from_json(
        r#"{"label":"","kind":"preference_shaping","world":"../worlds/qunits_cafe.json","target_agent":"nobody",
            "target_action":"drink tea","repetitions":0,
            "injections":[{"target_agent":"ghost","instruction":"x"}]}"#,
    )
    .unwrap();
    let paths: Vec<String> =
        spec.resolve(&common::presets().join("specs")).unwrap_err().violations().into_iter().map(|v| v.path).collect();
    for p in ["label", "repetitions", "target_agent", "target_action", "injections[0].target_agent"] {
        assert!(paths.iter().any(|x| x == p), "{p} missing from {paths:?}");
    }
    assert!(PipelineSpec::from_json(r#"{"label":"x","kind":"preference_shaping","world":"w","target_agent":"a","repetitions":1,"bogus":1}"#).is_err());
}

/// Rows of the reference preference tables: (label, pos, neg, ratio).
const PREFERENCE_ROWS: [(&str, f64, f64, f64); 11] = [
    ("None", 3.2, 3.6, 0.47),
    ("Unclean Coffee", 2.2, 5.9, 0.27),
    ("Dislike Coffee", 1.6, 6.4, 0.2),
    ("New Coffee Flavor", 4.6, 1.9, 0.71),
    ("Love Coffee", 5.0, 1.3, 0.79),
    ("Normal", 3.2, 3.6, 0.47),
    ("no Identity", 3.9, 4.1, 0.49),
    ("no Sensory Perception", 5.2, 0.8, 0.87),
    ("no Prior Knowledge", 2.9, 4.6, 0.39),
    ("no Reflection", 3.4, 3.2, 0.51),
    ("no Plan", 2.4, 5.1, 0.32),
];

/// Reported counts carry one decimal, so each true mean lies within 0.05 of
/// the printed value; the printed ratio must be reachable from that box.
#[test]
fn reference_preference_rows_are_ratios_of_mean_counts() {
    let half = 0.05 + 1e-9;
    for (label, pos, neg, ratio) in PREFERENCE_ROWS {
        let lo = afspp_core::harness::pos_ratio(pos - half, neg + half).unwrap();
        let hi = afspp_core::harness::pos_ratio(pos + half, neg - half).unwrap();
        assert!(lo <= ratio + 0.005 && ratio - 0.005 <= hi, "{label}: [{lo}, {hi}] vs {ratio}");
        let point = afspp_core::harness::pos_ratio(pos, neg).unwrap();
        assert!((point - ratio).abs() < 0.01, "{label}: {point} vs {ratio}");
    }
}

/// Rows of the reference MBTI tables: E I S N T F J P and the reported type.
const MBTI_ROWS: [([f64; 8], &str); 12] = [
    ([8.2, 12.8, 12.8, 14.2, 16.5, 6.5, 17.4, 4.6], "INTJ"),
    ([13.7, 7.3, 11.9, 15.1, 8.5, 14.5, 14.3, 7.7], "ENFJ"),
    ([16.4, 4.6, 6.8, 20.1, 12.2, 10.9, 17.3, 4.7], "ENTJ"),
    ([13.4, 7.6, 14.4, 12.6, 13.9, 9.1, 17.4, 4.6], "ESTJ"),
    ([15.7, 5.3, 11.6, 15.4, 6.5, 16.5, 16.2, 5.8], "ENFJ"),
    ([11.9, 9.1, 16.8, 10.2, 21.5, 1.5, 20.2, 1.8], "ESTJ"),
    ([11.0, 10.0, 9.3, 17.7, 20.5, 2.5, 18.7, 3.3], "ENTJ"),
    ([11.6, 9.4, 2.3, 24.7, 7.0, 16.0, 11.9, 10.1], "ENFJ"),
    ([18.9, 2.1, 10.0, 17.0, 20.0, 3.0, 19.1, 2.9], "ENTJ"),
    ([17.0, 4.0, 13.6, 13.4, 20.7, 2.3, 20.3, 1.7], "ESTJ"),
    ([3.8, 17.2, 25.7, 1.3, 22.0, 1.0, 22.0, 0.0], "ISTJ"),
    ([8.2, 12.8, 12.8, 14.2, 16.5, 6.5, 17.4, 4.6], "INTJ"),
];

#[test]
fn reference_mbti_rows_match_mean_scoring() {
    for (means, ty) in MBTI_ROWS {
        assert_eq!(type_from_means(means, TIE_BREAK), ty, "{means:?}");
        for (axis, total) in [21.0, 27.0, 23.0, 22.0].into_iter().enumerate() {
            let sum = means[2 * axis] + means[2 * axis + 1];
            // two one-decimal means
            assert!((sum - total).abs() <= 0.1 + 1e-9, "{means:?} axis {axis}: {sum}");
        }
    }
}
