use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found in the response")]
    NoJson,
    #[error("JSON object has no \"decision\" field")]
    MissingField,
    #[error("decision value {0} is not an option number")]
    Invalid(String),
    #[error("decision {value} outside 1..={max}")]
    OutOfRange { value: i64, max: usize },
}

/// Extracts the `"decision"` field of the first JSON object in `raw` and
/// returns it as a 0-based option index. Accepts `"3"` and `3`.
pub fn parse_decision(raw: &str, option_count: usize) -> Result<u16, ParseError> {
    let object = first_object(raw).ok_or(ParseError::NoJson)?;
    let value = object.get("decision").ok_or(ParseError::MissingField)?;
    let number: i64 = match value {
        Value::Number(n) => n.as_i64().ok_or_else(|| ParseError::Invalid(n.to_string()))?,
        Value::String(s) => s.trim().parse().map_err(|_| ParseError::Invalid(format!("{s:?}")))?,
        other => return Err(ParseError::Invalid(other.to_string())),
    };
    if number < 1 || number as usize > option_count {
        return Err(ParseError::OutOfRange { value: number, max: option_count });
    }
    Ok((number - 1) as u16)
}

fn first_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    raw.char_indices().filter(|&(_, c)| c == '{').find_map(|(at, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[at..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_string_and_integer_decisions() {
        assert_eq!(parse_decision(r#"{"decision": "3", "reasoning": "x"}"#, 5), Ok(2));
        assert_eq!(parse_decision(r#"prefix text {"decision": 1}"#, 5), Ok(0));
    }

    #[test]
    fn rejects_bad_responses() {
        assert_eq!(
            parse_decision(r#"{"decision": "9"}"#, 5),
            Err(ParseError::OutOfRange { value: 9, max: 5 })
        );
        assert_eq!(parse_decision("no json here", 5), Err(ParseError::NoJson));
        assert_eq!(parse_decision(r#"{"choice": 2}"#, 5), Err(ParseError::MissingField));
        assert!(matches!(parse_decision(r#"{"decision": "two"}"#, 5), Err(ParseError::Invalid(_))));
        assert!(matches!(parse_decision(r#"{"decision": 0}"#, 5), Err(ParseError::OutOfRange { .. })));
    }

    #[test]
    fn first_object_wins() {
        assert_eq!(parse_decision(r#"{"decision": 2} and {"decision": 4}"#, 5), Ok(1));
        // A broken leading brace is skipped.
        assert_eq!(parse_decision(r#"{oops {"decision": "5"}"#, 5), Ok(4));
    }

    #[test]
    fn fenced_json_is_found() {
        let raw = "```json\n{\"decision\": \"2\", \"reasoning\": \"brief\"}\n```";
        assert_eq!(parse_decision(raw, 5), Ok(1));
    }
}
