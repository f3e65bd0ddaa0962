use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;

use super::{synthetic_raw, Decision, Oracle, OracleError, QueryRequest};
use crate::{Error, Result};

/// Replays fixed decisions keyed by `(agent, round)`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    script: HashMap<(usize, usize), u16>,
}

#[derive(Deserialize)]
struct ScriptRow {
    agent: usize,
    round: usize,
    /// 1-based option number.
    option: u16,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a decision; `option` is 0-based.
    pub fn insert(&mut self, agent: usize, round: usize, option: u16) {
        self.script.insert((agent, round), option);
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    /// Reads `agent,round,option` rows with 1-based option numbers.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut out = Self::new();
        for (row, rec) in csv::Reader::from_reader(reader).deserialize::<ScriptRow>().enumerate() {
            let rec = rec?;
            if rec.option == 0 {
                return Err(Error::Ingestion { row, message: "option numbers start at 1".into() });
            }
            out.insert(rec.agent, rec.round, rec.option - 1);
        }
        Ok(out)
    }
}

impl Oracle for ScriptedOracle {
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> std::result::Result<Vec<Decision>, OracleError> {
        requests
            .iter()
            .map(|r| {
                let ctx = &r.context;
                let option = *self.script.get(&(ctx.agent, ctx.round)).ok_or(OracleError::MissingScript {
                    agent: ctx.agent,
                    round: ctx.round,
                    category: r.category,
                })?;
                if option as usize >= ctx.options.len() {
                    return Err(OracleError::InvalidContext(format!("scripted option {option} out of range")));
                }
                Ok(Decision {
                    agent: ctx.agent,
                    round: ctx.round,
                    option,
                    raw: synthetic_raw(option),
                    attempts: 1,
                    parse_failures: 0,
                    category: r.category,
                })
            })
            .collect()
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "scripted", "entries": self.script.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{CallCategory, PromptContext};

    #[test]
    fn replays_script() {
        let o = ScriptedOracle::from_csv("agent,round,option\n7,2,4\n".as_bytes()).unwrap();
        let opts: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let ctx = PromptContext {
            agent: 7,
            round: 2,
            stage_text: "",
            options: &opts,
            features: &[],
            profile: "",
            previous: None,
            neighbors: None,
        };
        let d = o.query(&QueryRequest { context: ctx.clone(), category: CallCategory::Reference }).unwrap();
        assert_eq!(d.option + 1, 4);
        let missing = PromptContext { round: 3, ..ctx };
        assert!(matches!(
            o.query(&QueryRequest { context: missing, category: CallCategory::Core }),
            Err(OracleError::MissingScript { agent: 7, round: 3, .. })
        ));
    }
}
