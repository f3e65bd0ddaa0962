use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synthetic_raw, Decision, Oracle, OracleError, PromptContext, QueryRequest};
use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Argmax of the decision distribution, lowest index on ties.
    Deterministic,
    /// Inverse-CDF draw from a uniform keyed by (agent, round), so every
    /// rollout that queries an agent in the same context sees the same draw.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub n_features: usize,
    pub n_options: usize,
    pub n_stages: usize,
    pub temperature: f64,
    /// Multiplier on the Gaussian weights (base scale `1/sqrt(dim)`).
    pub weight_scale: f64,
    /// Extra logit on the previous-round option.
    pub persistence: f64,
    /// Extra logit proportional to each option's neighbor fraction.
    pub social_weight: f64,
    pub decoding: Decoding,
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            n_features: 19,
            n_options: 5,
            n_stages: 8,
            temperature: 1.0,
            weight_scale: 1.0,
            persistence: 0.0,
            social_weight: 0.0,
            decoding: Decoding::Deterministic,
            seed: 42,
        }
    }
}

/// Parametric transition kernel with an inspectable decision distribution.
///
/// The context map concatenates standardized features, the previous-state
/// one-hot, the neighbor fraction vector and the stage one-hot; logits are a
/// linear map of it plus a bias, with optional persistence and social terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticKernel {
    pub config: KernelConfig,
    /// Row-major `n_options x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl SyntheticKernel {
    pub fn new(config: KernelConfig) -> Result<Self> {
        Self::check(&config)?;
        let dim = Self::dim_of(&config);
        let mut rng = keyed_rng(config.seed, &[stream::KERNEL_WEIGHTS]);
        let scale = config.weight_scale / (dim as f64).sqrt();
        let weights = (0..config.n_options * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        let bias = vec![0.0; config.n_options];
        Ok(Self { config, weights, bias })
    }

    /// Kernel with explicit weights and bias.
    pub fn from_parts(config: KernelConfig, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::check(&config)?;
        if weights.len() != config.n_options * Self::dim_of(&config) || bias.len() != config.n_options {
            return Err(Error::config("kernel weights/bias do not match the configured shape"));
        }
        Ok(Self { config, weights, bias })
    }

    /// A kernel that ignores the context and always produces `logits`.
    pub fn constant(config: KernelConfig, logits: Vec<f64>) -> Result<Self> {
        let dim = Self::dim_of(&config);
        let config = KernelConfig { persistence: 0.0, social_weight: 0.0, ..config };
        Self::from_parts(config.clone(), vec![0.0; config.n_options * dim], logits)
    }

    fn check(config: &KernelConfig) -> Result<()> {
        if config.n_options < 2 || config.n_stages == 0 {
            return Err(Error::config("kernel needs >= 2 options and >= 1 stage"));
        }
        if !(config.temperature > 0.0) {
            return Err(Error::config("kernel temperature must be positive"));
        }
        Ok(())
    }

    fn dim_of(c: &KernelConfig) -> usize {
        c.n_features + 2 * c.n_options + c.n_stages
    }

    pub fn dim(&self) -> usize {
        Self::dim_of(&self.config)
    }

    fn validate_context(&self, ctx: &PromptContext<'_>) -> std::result::Result<(), OracleError> {
        let c = &self.config;
        if ctx.features.len() != c.n_features {
            return Err(OracleError::InvalidContext(format!(
                "expected {} features, got {}",
                c.n_features,
                ctx.features.len()
            )));
        }
        if ctx.round == 0 || ctx.round > c.n_stages {
            return Err(OracleError::InvalidContext(format!("round {} outside 1..={}", ctx.round, c.n_stages)));
        }
        if ctx.options.len() != c.n_options {
            return Err(OracleError::InvalidContext("option count mismatch".into()));
        }
        Ok(())
    }

    pub fn logits(&self, ctx: &PromptContext<'_>) -> Vec<f64> {
        let c = &self.config;
        let k = c.n_options;
        let dim = self.dim();
        let mut phi = vec![0.0; dim];
        phi[..c.n_features].copy_from_slice(ctx.features);
        if let Some(p) = ctx.previous {
            phi[c.n_features + p as usize] = 1.0;
        }
        let fractions = ctx.neighbors.as_ref().map(|n| n.fractions());
        if let Some(f) = &fractions {
            phi[c.n_features + k..c.n_features + 2 * k].copy_from_slice(f);
        }
        phi[c.n_features + 2 * k + (ctx.round - 1)] = 1.0;
        (0..k)
            .map(|y| {
                let row = &self.weights[y * dim..(y + 1) * dim];
                let mut z = self.bias[y] + row.iter().zip(&phi).map(|(w, x)| w * x).sum::<f64>();
                if ctx.previous == Some(y as u16) {
                    z += c.persistence;
                }
                if let Some(f) = &fractions {
                    z += c.social_weight * f[y];
                }
                z
            })
            .collect()
    }

    /// Softmax of the logits at the configured temperature.
    pub fn true_distribution(&self, ctx: &PromptContext<'_>) -> Vec<f64> {
        softmax(&self.logits(ctx), self.config.temperature)
    }

    fn decide(&self, req: &QueryRequest<'_>) -> std::result::Result<Decision, OracleError> {
        let ctx = &req.context;
        self.validate_context(ctx)?;
        let dist = self.true_distribution(ctx);
        let option = match self.config.decoding {
            Decoding::Deterministic => argmax(&dist),
            Decoding::Sampled => {
                let mut rng = keyed_rng(self.config.seed, &[stream::KERNEL_SAMPLE, ctx.agent as u64, ctx.round as u64]);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                dist.iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(dist.len() - 1)
            }
        } as u16;
        Ok(Decision {
            agent: ctx.agent,
            round: ctx.round,
            option,
            raw: synthetic_raw(option),
            attempts: 1,
            parse_failures: 0,
            category: req.category,
        })
    }
}

impl Oracle for SyntheticKernel {
    fn query_batch(&self, requests: &[QueryRequest<'_>]) -> std::result::Result<Vec<Decision>, OracleError> {
        requests.par_iter().map(|r| self.decide(r)).collect()
    }

    fn kernel(&self) -> Option<&SyntheticKernel> {
        Some(self)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "synthetic", "config": self.config })
    }
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::CallCategory;

    fn ctx<'a>(features: &'a [f64], options: &'a [String], round: usize) -> PromptContext<'a> {
        PromptContext {
            agent: 0,
            round,
            stage_text: "",
            options,
            features,
            profile: "",
            previous: None,
            neighbors: None,
        }
    }

    fn options(k: usize) -> Vec<String> {
        (0..k).map(|i| i.to_string()).collect()
    }

    #[test]
    fn zero_logits_are_uniform() {
        let cfg = KernelConfig { n_features: 2, n_options: 4, n_stages: 1, ..Default::default() };
        let k = SyntheticKernel::constant(cfg, vec![0.0; 4]).unwrap();
        let o = options(4);
        for p in k.true_distribution(&ctx(&[0.3, -1.0], &o, 1)) {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_option_softmax() {
        let cfg = KernelConfig { n_features: 1, n_options: 2, n_stages: 1, ..Default::default() };
        let k = SyntheticKernel::constant(cfg, vec![2f64.ln(), 0.0]).unwrap();
        let o = options(2);
        let p = k.true_distribution(&ctx(&[0.0], &o, 1));
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_logits_decide() {
        let cfg = KernelConfig { n_features: 1, n_options: 5, n_stages: 1, ..Default::default() };
        let k = SyntheticKernel::constant(cfg, vec![0.1, 2.0, 0.1, 0.1, 0.1]).unwrap();
        let o = options(5);
        let req = QueryRequest { context: ctx(&[0.0], &o, 1), category: CallCategory::Core };
        let d = k.query(&req).unwrap();
        assert_eq!(d.option, 1);
        assert_eq!(d.raw, r#"{"decision": "2"}"#);
        assert_eq!(k.query(&req).unwrap(), d);
    }

    #[test]
    fn ties_break_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn rejects_out_of_range_round() {
        let k = SyntheticKernel::new(KernelConfig { n_features: 1, n_stages: 2, ..Default::default() }).unwrap();
        let o = options(5);
        let req = QueryRequest { context: ctx(&[0.0], &o, 3), category: CallCategory::Core };
        assert!(matches!(k.query(&req), Err(OracleError::InvalidContext(_))));
    }

    #[test]
    fn sampled_decoding_is_keyed() {
        let cfg = KernelConfig { n_features: 1, n_options: 3, n_stages: 1, decoding: Decoding::Sampled, ..Default::default() };
        let k = SyntheticKernel::new(cfg).unwrap();
        let o = options(3);
        let f = [0.2];
        let reqs: Vec<_> = (0..200)
            .map(|a| {
                let mut c = ctx(&f, &o, 1);
                c.agent = a;
                QueryRequest { context: c, category: CallCategory::Core }
            })
            .collect();
        let a = k.query_batch(&reqs).unwrap();
        let mut rev: Vec<_> = reqs.iter().rev().cloned().collect();
        let mut b = k.query_batch(&rev).unwrap();
        b.reverse();
        rev.clear();
        assert_eq!(a, b);
        // More than one option appears for a fixed context under sampling.
        let distinct: std::collections::HashSet<u16> = a.iter().map(|d| d.option).collect();
        assert!(distinct.len() > 1);
    }
}
