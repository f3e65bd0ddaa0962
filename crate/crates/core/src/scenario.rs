use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered scenario stages sharing one option list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub options: Vec<String>,
    pub stages: Vec<String>,
}

impl Scenario {
    pub fn new(options: Vec<String>, stages: Vec<String>) -> Result<Self> {
        let s = Self { options, stages };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 {
            return Err(Error::config("a scenario needs at least two options"));
        }
        if self.options.len() > u16::MAX as usize {
            return Err(Error::config("too many options"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("a scenario needs at least one stage"));
        }
        Ok(())
    }

    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    pub fn rounds(&self) -> usize {
        self.stages.len()
    }

    /// Stage text for a 1-based round.
    pub fn stage(&self, round: usize) -> &str {
        &self.stages[round - 1]
    }

    /// Generic `k`-option, `t`-stage scenario used by tests and synthetic runs.
    pub fn synthetic(n_options: usize, n_stages: usize) -> Self {
        Self {
            options: (1..=n_options).map(|k| format!("Option {k}")).collect(),
            stages: (1..=n_stages).map(|t| format!("Stage {t} of the unfolding event.")).collect(),
        }
    }
}
