//! Adaptive prototype simulation.
//!
//! Multi-round agent populations driven by a pluggable transition oracle. Each
//! round only a budgeted set of prototypes, feature-space tail agents and
//! shadow-audit agents are queried; everyone else is filled by a local
//! response surface, and the population distribution is reported through a
//! design-weighted residual-corrected estimator.
//!
//! Module map:
//!
//! - [`population`]: synthetic and seed-expanded agent populations.
//! - [`socialgraph`]: fixed small-world context graph and neighbor summaries.
//! - [`oracle`]: the query contract, synthetic/scripted/HTTP oracles, prompts.
//! - [`stratification`]: scale schedules, tail scoring, core strata.
//! - [`engine`]: budget allocation, propagation, the rollout loop.
//! - [`audit`]: shadow-audit design, corrected estimator, diagnostics, risk.
//! - [`evaluation`]: reference rollouts, baselines, metrics, error decomposition.
//! - [`checkpoint`]: round-granular checkpoints and resume.

pub mod audit;
pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod oracle;
pub mod population;
pub mod rng;
pub mod scenario;
pub mod socialgraph;
pub mod stratification;

mod apportion;
mod kmeans;
mod linalg;

pub use error::{Error, Result};
