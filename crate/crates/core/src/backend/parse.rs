//! Extraction of structured JSON from free-form model responses.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::types::{AgentOutput, AgentRole};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("no well-formed JSON object found in response")]
    NoObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` is invalid: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("intensity {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Returns the first JSON value starting at a `{` or `[` that parses and
/// satisfies `accept`. Trailing text after the value is ignored.
pub fn first_json_value(raw: &str, accept: impl Fn(&Value) -> bool) -> Option<Value> {
    raw.char_indices()
        .filter(|&(_, c)| c == '{' || c == '[')
        .find_map(|(i, _)| {
            let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(v)) if accept(&v) => Some(v),
                _ => None,
            }
        })
}

/// The first well-formed JSON object in `raw`.
pub fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    match first_json_value(raw, Value::is_object)? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

pub(crate) fn required_str<'a>(obj: &'a Map<String, Value>, field: &'static str) -> Result<&'a str, ParseError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ParseError::MissingField(field)),
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(Value::String(_)) => Err(ParseError::InvalidField {
            field,
            reason: "empty string".into(),
        }),
        Some(other) => Err(ParseError::InvalidField {
            field,
            reason: format!("expected string, got {other}"),
        }),
    }
}

/// Parses an agent response of the form
/// `{"intensity": <number>, "explanation": <string>}`.
pub fn parse_agent_output(raw: &str, role: AgentRole, revision: u32) -> Result<AgentOutput, ParseError> {
    let obj = first_json_object(raw).ok_or(ParseError::NoObject)?;
    let intensity = match obj.get("intensity") {
        None | Some(Value::Null) => return Err(ParseError::MissingField("intensity")),
        Some(v) => v.as_f64().ok_or_else(|| ParseError::InvalidField {
            field: "intensity",
            reason: format!("expected number, got {v}"),
        })?,
    };
    if !(0.0..=1.0).contains(&intensity) {
        return Err(ParseError::OutOfRange(intensity));
    }
    let explanation = required_str(&obj, "explanation")?;
    AgentOutput::new(role, intensity, explanation, revision).map_err(|e| ParseError::InvalidField {
        field: "explanation",
        reason: e.to_string(),
    })
}
