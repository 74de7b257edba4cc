//! HTTP adapter for an externally hosted adjudicator, plus a small
//! conformance check for servers implementing the protocol.
//!
//! `GET /healthz` answers `{"status":"ok"}`; `POST /v1/adjudicate` takes
//! `{"rationale": "<canonical chain>"}` and answers
//! `{"probability": p, "label": 0|1}`; malformed requests get HTTP 400.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Adjudicator, AdjudicatorError, RationaleInput, Verdict};
use crate::net::{http_agent, join_url, TransportCounter};
use crate::types::label_for;

#[derive(Debug, Deserialize)]
struct WireVerdict {
    probability: f64,
    label: u8,
}

pub struct RemoteAdjudicator {
    base_url: String,
    agent: ureq::Agent,
    counter: TransportCounter,
}

impl RemoteAdjudicator {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        RemoteAdjudicator {
            base_url: base_url.into(),
            agent: http_agent(timeout),
            counter: TransportCounter::new(),
        }
    }

    pub fn health(&self) -> Result<(), AdjudicatorError> {
        self.counter.record();
        let unavailable = |m: String| AdjudicatorError::RemoteUnavailable(format!("{}: {m}", self.base_url));
        let mut resp = self
            .agent
            .get(&join_url(&self.base_url, "healthz"))
            .call()
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(unavailable(format!("health check returned HTTP {status}")));
        }
        let body: Value = resp.body_mut().read_json().map_err(|e| unavailable(e.to_string()))?;
        if body.get("status").and_then(Value::as_str) != Some("ok") {
            return Err(unavailable(format!("unexpected health body {body}")));
        }
        Ok(())
    }

    fn post(&self, body: &Value) -> Result<(u16, String), AdjudicatorError> {
        self.counter.record();
        let mut resp = self
            .agent
            .post(&join_url(&self.base_url, "v1/adjudicate"))
            .send_json(body)
            .map_err(|e| AdjudicatorError::RemoteUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AdjudicatorError::RemoteUnavailable(e.to_string()))?;
        Ok((status, text))
    }
}

fn decode_verdict(status: u16, text: &str) -> Result<Verdict, AdjudicatorError> {
    if status != 200 {
        return Err(AdjudicatorError::Protocol(format!("HTTP {status}: {text}")));
    }
    let wire: WireVerdict =
        serde_json::from_str(text).map_err(|e| AdjudicatorError::Protocol(format!("bad body {text:?}: {e}")))?;
    if !(0.0..=1.0).contains(&wire.probability) {
        return Err(AdjudicatorError::Protocol(format!("probability {} outside [0,1]", wire.probability)));
    }
    if wire.label > 1 {
        return Err(AdjudicatorError::Protocol(format!("label {} is not binary", wire.label)));
    }
    let verdict = Verdict::from_probability(wire.probability);
    if verdict.label != wire.label {
        log::warn!(
            "remote label {} disagrees with p={} under the 0.5 threshold; using {}",
            wire.label,
            wire.probability,
            verdict.label
        );
    }
    Ok(verdict)
}

impl Adjudicator for RemoteAdjudicator {
    fn adjudicate(&self, input: RationaleInput<'_>) -> Result<Verdict, AdjudicatorError> {
        let (status, text) = self.post(&json!({ "rationale": input.as_str() }))?;
        decode_verdict(status, &text)
    }

    fn network_operations(&self) -> u64 {
        self.counter.get()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const PROBE_CHAIN: &str = "[SIA intensity=0.80]\nPraise contradicts the described failure.\n[SUMMARY]\nIronic praise of a bad outcome.\n";

/// Exercises a live server against the protocol and reports each check.
pub fn conformance_suite(base_url: &str, timeout: Duration) -> Vec<ConformanceCheck> {
    let client = RemoteAdjudicator::new(base_url, timeout);
    let mut checks = Vec::new();
    let mut push = |name, result: Result<String, String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(ConformanceCheck { name, passed, detail });
    };

    push("healthz", client.health().map(|_| "ok".into()).map_err(|e| e.to_string()));

    let happy = client.post(&json!({ "rationale": PROBE_CHAIN })).map_err(|e| e.to_string()).and_then(|(status, text)| {
        let wire: WireVerdict = if status == 200 {
            serde_json::from_str(&text).map_err(|e| format!("bad body {text:?}: {e}"))?
        } else {
            return Err(format!("HTTP {status}"));
        };
        if !(0.0..=1.0).contains(&wire.probability) {
            return Err(format!("probability {} outside [0,1]", wire.probability));
        }
        if wire.label != label_for(wire.probability) {
            return Err(format!("label {} inconsistent with p={}", wire.label, wire.probability));
        }
        Ok(format!("p={} label={}", wire.probability, wire.label))
    });
    push("adjudicate_valid", happy);

    for (name, body) in [
        ("reject_missing_rationale", json!({})),
        ("reject_non_string_rationale", json!({ "rationale": 7 })),
    ] {
        let res = client.post(&body).map_err(|e| e.to_string()).and_then(|(status, text)| {
            if status == 400 {
                Ok("HTTP 400".into())
            } else {
                Err(format!("expected HTTP 400, got {status}: {text}"))
            }
        });
        push(name, res);
    }
    checks
}
