use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, CallContext, CallRecord, ChatRequest, Completion, GatewayError};

pub const CALL_LOG_FORMAT: u32 = 1;

/// First line of `calls.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLogHeader {
    pub format: u32,
    pub spec_digest: String,
    /// Prompt fields left out of request digests. Empty: digests cover the
    /// purpose and every message.
    pub digest_excluded_fields: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    call_log: CallLogHeader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallLog {
    pub header: CallLogHeader,
    pub records: Vec<CallRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum CallLogError {
    #[error("call log is empty")]
    Empty,
    #[error("call log header is malformed: {0}")]
    Header(serde_json::Error),
    #[error("call log line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
}

impl CallLog {
    pub fn new(spec_digest: impl Into<String>, records: Vec<CallRecord>) -> Self {
        Self {
            header: CallLogHeader {
                format: CALL_LOG_FORMAT,
                spec_digest: spec_digest.into(),
                digest_excluded_fields: Vec::new(),
            },
            records,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = HeaderLine { call_log: self.header.clone() };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).unwrap();
        for record in &self.records {
            writeln!(out, "{}", serde_json::to_string(record).expect("record serializes")).unwrap();
        }
        out
    }
}

/// Parses a `calls.jsonl` document. A final line that fails to parse is
/// treated as a torn write and dropped; damage anywhere else is an error.
pub fn read_call_log(text: &str) -> Result<CallLog, CallLogError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let Some(((_, first), rest)) = lines.split_first() else {
        return Err(CallLogError::Empty);
    };
    let header: HeaderLine = serde_json::from_str(first).map_err(CallLogError::Header)?;
    let mut records = Vec::with_capacity(rest.len());
    for (pos, (lineno, line)) in rest.iter().enumerate() {
        match serde_json::from_str::<CallRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) if pos + 1 == rest.len() => {
                log::warn!("dropping torn final call-log line {}: {e}", lineno + 1);
            }
            Err(source) => return Err(CallLogError::Record { line: lineno + 1, source }),
        }
    }
    Ok(CallLog { header: header.call_log, records })
}

/// Serves recorded responses by (repetition, sequence number), checking that
/// the live request still hashes to the recorded digest.
pub struct ReplayBackend {
    records: HashMap<(u32, u64), CallRecord>,
}

impl ReplayBackend {
    pub fn new(log: CallLog) -> Self {
        let records = log.records.into_iter().map(|r| ((r.repetition, r.seq), r)).collect();
        Self { records }
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, ctx: &CallContext, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let record = self
            .records
            .get(&(ctx.repetition, ctx.seq))
            .ok_or(GatewayError::ReplayMissing { repetition: ctx.repetition, seq: ctx.seq })?;
        let actual = request.digest();
        if actual != record.digest {
            return Err(GatewayError::ReplayMismatch {
                repetition: ctx.repetition,
                seq: ctx.seq,
                recorded: record.digest.clone(),
                actual,
            });
        }
        match (&record.response, &record.error) {
            (Some(text), _) => Ok(Completion { text: text.clone(), latency_ms: record.latency_ms }),
            (None, error) => Err(GatewayError::RecordedFailure {
                purpose: record.purpose,
                message: error.clone().unwrap_or_else(|| "no response recorded".into()),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{Gateway, Message, Purpose, ScriptedBackend};

    fn recorded_run() -> (Vec<ChatRequest>, Vec<CallRecord>) {
        let mut gw = Gateway::new(Arc::new(ScriptedBackend::constant("ok")), 2, 9);
        let requests: Vec<ChatRequest> = (0..15)
            .map(|i| gw.request(Purpose::Summary, vec![Message::user(format!("turn {i}"))]))
            .collect();
        for r in &requests {
            gw.complete(r.clone()).unwrap();
        }
        (requests, gw.into_records())
    }

    #[test]
    fn replays_record_by_sequence() {
        let (requests, mut records) = recorded_run();
        records[12].response = Some("record twelve".into());
        let backend = ReplayBackend::new(CallLog::new("d", records));
        let ctx = CallContext { repetition: 2, seq: 12, seed: 0 };
        assert_eq!(backend.complete(&ctx, &requests[12]).unwrap().text, "record twelve");
    }

    #[test]
    fn digest_mismatch_and_missing() {
        let (requests, records) = recorded_run();
        let backend = ReplayBackend::new(CallLog::new("d", records));
        let ctx = CallContext { repetition: 2, seq: 3, seed: 0 };
        assert!(matches!(backend.complete(&ctx, &requests[4]), Err(GatewayError::ReplayMismatch { seq: 3, .. })));
        let missing = CallContext { repetition: 2, seq: 15, seed: 0 };
        assert_eq!(
            backend.complete(&missing, &requests[0]),
            Err(GatewayError::ReplayMissing { repetition: 2, seq: 15 })
        );
    }

    #[test]
    fn jsonl_round_trip_and_torn_tail() {
        let (_, records) = recorded_run();
        let log = CallLog::new("abc", records);
        let text = log.to_jsonl();
        assert_eq!(read_call_log(&text).unwrap(), log);
        let torn = &text[..text.len() - 20];
        let parsed = read_call_log(torn).unwrap();
        assert_eq!(parsed.records.len(), log.records.len() - 1);
        assert!(matches!(read_call_log(""), Err(CallLogError::Empty)));
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{garbage";
        assert!(matches!(read_call_log(&lines.join("\n")), Err(CallLogError::Record { line: 4, .. })));
    }
}
