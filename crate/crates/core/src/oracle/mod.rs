//! Transition oracles.
//!
//! Every oracle answers batches of [`QueryRequest`]s with one [`Decision`]
//! per request, in request order. Option indices are 0-based throughout the
//! crate; prompts and raw responses use 1-based numbering.

mod http;
mod parse;
mod prompt;
mod scripted;
mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::socialgraph::StateCounts;

pub use http::{HttpOracle, HttpOracleConfig};
pub use parse::{parse_decision, ParseError};
pub use prompt::{PromptTemplate, DEFAULT_SYSTEM_PROMPT, DEFAULT_TEMPLATE};
pub use scripted::ScriptedOracle;
pub use synthetic::{Decoding, KernelConfig, SyntheticKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallCategory {
    Core,
    Tail,
    Audit,
    Reference,
}

/// Everything an oracle may condition on for one agent in one round.
#[derive(Debug, Clone)]
pub struct PromptContext<'a> {
    pub agent: usize,
    /// 1-based round (scenario stage) index.
    pub round: usize,
    pub stage_text: &'a str,
    pub options: &'a [String],
    /// Standardized features.
    pub features: &'a [f64],
    /// Raw profile rendered for prompts.
    pub profile: &'a str,
    /// Previous-round hard state, `None` before the first round.
    pub previous: Option<u16>,
    pub neighbors: Option<StateCounts>,
}

#[derive(Debug, Clone)]
pub struct QueryRequest<'a> {
    pub context: PromptContext<'a>,
    pub category: CallCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub agent: usize,
    pub round: usize,
    /// 0-based option index.
    pub option: u16,
    pub raw: String,
    /// Attempts used, at least 1.
    pub attempts: u32,
    pub parse_failures: u32,
    pub category: CallCategory,
}

/// Oracle calls of one round (or a whole run) by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub core: u64,
    pub tail: u64,
    pub audit: u64,
    pub reference: u64,
    /// Attempts beyond the first, summed over calls.
    pub retries: u64,
    pub parse_failures: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.core + self.tail + self.audit + self.reference
    }

    pub fn record(&mut self, decisions: &[Decision]) {
        for d in decisions {
            match d.category {
                CallCategory::Core => self.core += 1,
                CallCategory::Tail => self.tail += 1,
                CallCategory::Audit => self.audit += 1,
                CallCategory::Reference => self.reference += 1,
            }
            self.retries += u64::from(d.attempts.saturating_sub(1));
            self.parse_failures += u64::from(d.parse_failures);
        }
    }

    pub fn add(&mut self, other: &CallCounts) {
        self.core += other.core;
        self.tail += other.tail;
        self.audit += other.audit;
        self.reference += other.reference;
        self.retries += other.retries;
        self.parse_failures += other.parse_failures;
    }
}

/// Per-round call counts of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLedger {
    pub rounds: Vec<CallCounts>,
}

impl CallLedger {
    pub fn push(&mut self, counts: CallCounts) {
        self.rounds.push(counts);
    }

    pub fn cumulative(&self) -> CallCounts {
        let mut total = CallCounts::default();
        for r in &self.rounds {
            total.add(r);
        }
        total
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unresolved decision for agent {agent} round {round} ({category:?}) after {attempts} attempts: {reason}")]
    Unresolved {
        agent: usize,
        round: usize,
        category: CallCategory,
        attempts: u32,
        reason: String,
    },
    #[error("transport failure for agent {agent} round {round} ({category:?}): {message}")]
    Transport {
        agent: usize,
        round: usize,
        category: CallCategory,
        message: String,
    },
    #[error("no scripted decision for agent {agent} round {round} ({category:?})")]
    MissingScript {
        agent: usize,
        round: usize,
        category: CallCategory,
    },
    #[error("invalid context: {0}")]
    InvalidContext(String),
}

pub trait Oracle: Send + Sync {
    /// Answers every request; results are in request order.
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> Result<Vec<Decision>, OracleError>;

    fn query(&self, request: &QueryRequest<'_>) -> Result<Decision, OracleError> {
        let mut out = self.query_batch(std::slice::from_ref(request))?;
        Ok(out.pop().expect("one decision per request"))
    }

    /// The synthetic kernel behind this oracle, when its true decision
    /// distribution is inspectable.
    fn kernel(&self) -> Option<&SyntheticKernel> {
        None
    }

    /// Short description recorded in run artifacts.
    fn describe(&self) -> serde_json::Value;
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> Result<Vec<Decision>, OracleError> {
        (**self).query_batch(requests)
    }
    fn kernel(&self) -> Option<&SyntheticKernel> {
        (**self).kernel()
    }
    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> Result<Vec<Decision>, OracleError> {
        (**self).query_batch(requests)
    }
    fn kernel(&self) -> Option<&SyntheticKernel> {
        (**self).kernel()
    }
    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

/// Wraps an oracle and counts every answered request, independently of any
/// ledger kept by the caller.
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O: Oracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Oracle> Oracle for CountingOracle<O> {
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> Result<Vec<Decision>, OracleError> {
        let out = self.inner.query_batch(requests)?;
        self.calls.fetch_add(out.len() as u64, Ordering::SeqCst);
        Ok(out)
    }
    fn kernel(&self) -> Option<&SyntheticKernel> {
        self.inner.kernel()
    }
    fn describe(&self) -> serde_json::Value {
        self.inner.describe()
    }
}

/// Raw response text a local oracle records for a decision.
pub(crate) fn synthetic_raw(option: u16) -> String {
    format!("{{\"decision\": \"{}\"}}", option + 1)
}
