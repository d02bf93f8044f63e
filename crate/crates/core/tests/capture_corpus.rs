mod common;

use afspp_core::world::{capture_decision, Capture};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    current: String,
    response: String,
    expected: String,
}

#[test]
fn hand_labelled_responses() {
    let world = common::cafe_world();
    let cases: Vec<Case> = serde_json::from_str(include_str!("fixtures/capture_corpus.json")).unwrap();
    assert_eq!(cases.len(), 50);
    let mut wrong = Vec::new();
    for (k, case) in cases.iter().enumerate() {
        let menu: Vec<_> = world.actions().iter().filter(|a| a.name != case.current).collect();
        let got = match capture_decision(&case.response, &menu, &world.config().cues) {
            Capture::Stay => "stay".to_string(),
            Capture::Switch(a) => a,
        };
        if got != case.expected {
            wrong.push(format!("#{k} {:?}: expected {}, got {got}", case.response, case.expected));
        }
    }
    assert!(wrong.is_empty(), "{}", wrong.join("\n"));
}
