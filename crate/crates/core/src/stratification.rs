//! Scale schedules, feature-space tail routing and core strata.

use serde::{Deserialize, Serialize};

use crate::kmeans::mini_batch_kmeans;
use crate::linalg::median;
use crate::population::Population;
use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

const MAD_FLOOR: f64 = 1e-6;
const KMEANS_BATCH: usize = 4096;
const KMEANS_ITERS: usize = 100;

/// Absorbs floating-point noise before integer rounding of schedule values,
/// so that e.g. `0.05 * 5000` always rounds as exactly 250.
const ROUND_SLACK: f64 = 1e-9;

fn floor_count(x: f64) -> usize {
    (x + ROUND_SLACK).floor().max(0.0) as usize
}

fn ceil_count(x: f64) -> usize {
    (x - ROUND_SLACK).ceil().max(0.0) as usize
}

/// Scale-schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Baseline scale `N_b`.
    pub baseline_n: usize,
    /// Baseline prototype rate `alpha_b`.
    pub baseline_rate: f64,
    /// Prototype-rate decay exponent `lambda`.
    pub rate_decay: f64,
    /// Baseline core-stratum count `M_b`.
    pub baseline_strata: usize,
    /// Core-stratum growth exponent `eta`.
    pub strata_exponent: f64,
    /// Tail coefficient `delta_0`.
    pub tail_coefficient: f64,
    /// Tail growth exponent `zeta`.
    pub tail_exponent: f64,
    /// Audit coefficient `gamma`.
    pub audit_coefficient: f64,
    /// Audit growth exponent `beta_a`.
    pub audit_exponent: f64,
    pub audit_min: usize,
    /// Interpolation support size `kappa`.
    pub support_size: usize,
    /// Fixed prototype rate that bypasses the schedule.
    pub fixed_rate: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            baseline_n: 5000,
            baseline_rate: 0.15,
            rate_decay: 0.6,
            baseline_strata: 10,
            strata_exponent: 0.5,
            tail_coefficient: 0.05,
            tail_exponent: 0.4,
            audit_coefficient: 0.05,
            audit_exponent: 0.4,
            audit_min: 1,
            support_size: 5,
            fixed_rate: None,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(open_unit(self.rate_decay)
            && open_unit(self.strata_exponent)
            && open_unit(self.tail_exponent)
            && open_unit(self.audit_exponent))
        {
            return Err(Error::config("schedule exponents must lie in (0, 1)"));
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate <= 1.0) {
            return Err(Error::config("baseline_rate must lie in (0, 1]"));
        }
        if let Some(r) = self.fixed_rate {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config("fixed_rate must lie in (0, 1]"));
            }
        }
        if self.baseline_n == 0 || self.baseline_strata == 0 || self.audit_min == 0 || self.support_size == 0 {
            return Err(Error::config("schedule counts must be at least 1"));
        }
        if self.tail_coefficient < 0.0 || self.audit_coefficient < 0.0 {
            return Err(Error::config("schedule coefficients must be nonnegative"));
        }
        Ok(())
    }

    fn scale(&self, n: usize) -> f64 {
        n as f64 / self.baseline_n as f64
    }
}

/// Core prototype rate: `alpha_b` up to the baseline scale, then decaying as
/// `alpha_b (N_b / n)^lambda`.
pub fn prototype_rate(n: usize, cfg: &ScheduleConfig) -> f64 {
    if let Some(r) = cfg.fixed_rate {
        return r;
    }
    if n <= cfg.baseline_n {
        cfg.baseline_rate
    } else {
        cfg.baseline_rate * (cfg.baseline_n as f64 / n as f64).powf(cfg.rate_decay)
    }
}

/// Nominal core-prototype budget `ceil(alpha(n) n)`.
pub fn core_budget(n: usize, cfg: &ScheduleConfig) -> usize {
    ceil_count(prototype_rate(n, cfg) * n as f64)
}

pub fn core_stratum_count(n: usize, cfg: &ScheduleConfig) -> usize {
    if n <= cfg.baseline_n {
        cfg.baseline_strata
    } else {
        floor_count(cfg.baseline_strata as f64 * cfg.scale(n).powf(cfg.strata_exponent))
    }
}

pub fn tail_count(n: usize, cfg: &ScheduleConfig) -> usize {
    let base = cfg.tail_coefficient * cfg.baseline_n as f64;
    if n <= cfg.baseline_n {
        ceil_count(base)
    } else {
        ceil_count(base * cfg.scale(n).powf(cfg.tail_exponent))
    }
}

pub fn audit_budget(n: usize, cfg: &ScheduleConfig) -> usize {
    let growth = cfg.scale(n).powf(cfg.audit_exponent).max(1.0);
    floor_count(cfg.audit_coefficient * cfg.baseline_n as f64 * growth).max(cfg.audit_min)
}

/// Robust distance from the coordinate-wise median: `|| (x - med) / MAD ||_2`
/// with MAD entries floored at `1e-6`.
pub fn tail_scores(features: &[f64], d: usize) -> Vec<f64> {
    let n = features.len() / d;
    let mut med = vec![0.0; d];
    let mut mad = vec![0.0; d];
    for c in 0..d {
        let mut col: Vec<f64> = (0..n).map(|i| features[i * d + c]).collect();
        med[c] = median(&mut col);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med[c]).abs()).collect();
        mad[c] = median(&mut dev).max(MAD_FLOOR);
    }
    (0..n)
        .map(|i| {
            (0..d)
                .map(|c| {
                    let z = (features[i * d + c] - med[c]) / mad[c];
                    z * z
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Indices of the `count` highest scores (lower index first on ties),
/// returned in ascending index order.
pub fn select_tails(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count.min(scores.len()));
    order.sort_unstable();
    order
}

pub const TAIL_LABEL: u32 = u32::MAX;

/// Tail set plus the partition of the remaining agents into core strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataAssignment {
    pub n: usize,
    /// Tail agents in ascending order.
    pub tails: Vec<usize>,
    pub tail_scores: Vec<f64>,
    /// Stratum per agent; [`TAIL_LABEL`] for tail agents.
    pub labels: Vec<u32>,
    /// Members of each stratum in ascending order.
    pub strata: Vec<Vec<usize>>,
    /// Row-major `m x d` centroids.
    pub centroids: Vec<f64>,
}

impl StrataAssignment {
    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.strata.iter().map(Vec::len).collect()
    }

    pub fn is_tail(&self, agent: usize) -> bool {
        self.labels[agent] == TAIL_LABEL
    }

    pub fn stratum_of(&self, agent: usize) -> Option<usize> {
        let l = self.labels[agent];
        (l != TAIL_LABEL).then_some(l as usize)
    }
}

/// Mini-batch k-means over the non-tail agents.
pub fn partition(features: &[f64], d: usize, tail_set: &[usize], m_core: usize, tail_scores: Vec<f64>, seed: u64) -> Result<StrataAssignment> {
    let n = features.len() / d;
    if m_core == 0 {
        return Err(Error::config("core stratum count must be at least 1"));
    }
    let mut labels = vec![0u32; n];
    for &t in tail_set {
        labels[t] = TAIL_LABEL;
    }
    let core: Vec<usize> = (0..n).filter(|&i| labels[i] != TAIL_LABEL).collect();
    if core.is_empty() {
        return Err(Error::config("no non-tail agents to stratify"));
    }
    if core.len() < m_core {
        return Err(Error::config(format!(
            "{} non-tail agents cannot fill {m_core} strata",
            core.len()
        )));
    }
    let points: Vec<f64> = core.iter().flat_map(|&i| features[i * d..(i + 1) * d].iter().copied()).collect();
    let mut rng = keyed_rng(seed, &[stream::PARTITION]);
    let fit = mini_batch_kmeans(&points, d, m_core, KMEANS_BATCH, KMEANS_ITERS, &mut rng);
    let mut strata = vec![Vec::new(); m_core];
    for (&agent, &c) in core.iter().zip(&fit.labels) {
        labels[agent] = c as u32;
        strata[c].push(agent);
    }
    let mut tails = tail_set.to_vec();
    tails.sort_unstable();
    Ok(StrataAssignment {
        n,
        tails,
        tail_scores,
        labels,
        strata,
        centroids: fit.centroids,
    })
}

/// Scores tails, routes the scheduled number of them and partitions the rest
/// into the scheduled number of strata. At tiny scales the tail count is
/// capped so that every stratum can still be filled.
pub fn stratify(pop: &Population, cfg: &ScheduleConfig, seed: u64) -> Result<StrataAssignment> {
    cfg.validate()?;
    let n = pop.n;
    let m_core = core_stratum_count(n, cfg).min(n).max(1);
    let n_tails = tail_count(n, cfg).min(n - m_core);
    stratify_with(pop, m_core, n_tails, seed)
}

/// Like [`stratify`] with explicit stratum and tail counts.
pub fn stratify_with(pop: &Population, m_core: usize, n_tails: usize, seed: u64) -> Result<StrataAssignment> {
    let d = pop.dim();
    let scores = if pop.n >= 2 { tail_scores(&pop.standardized, d) } else { vec![0.0; pop.n] };
    let tails = select_tails(&scores, n_tails);
    partition(&pop.standardized, d, &tails, m_core, scores, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchored_schedule_values() {
        let cfg = ScheduleConfig::default();
        assert_eq!(prototype_rate(5000, &cfg), 0.15);
        assert_eq!(core_stratum_count(5000, &cfg), 10);
        assert_eq!(core_stratum_count(10_000, &cfg), 14);
        assert_eq!(tail_count(5000, &cfg), 250);
        assert_eq!(tail_count(10_000, &cfg), 330);
        assert_eq!(audit_budget(5000, &cfg), 250);
        let fixed = ScheduleConfig { fixed_rate: Some(0.2), ..cfg };
        assert_eq!(prototype_rate(10_000, &fixed), 0.2);
    }

    #[test]
    fn derived_schedule_values() {
        let cfg = ScheduleConfig::default();
        assert!((prototype_rate(40_000, &cfg) - 0.15 * 0.125f64.powf(0.6)).abs() < 1e-15);
        assert!((prototype_rate(40_000, &cfg) - 0.043077).abs() < 1e-6);
        assert_eq!(core_stratum_count(1_000_000, &cfg), 141);
        assert_eq!(audit_budget(10_000, &cfg), 329);
        assert_eq!(audit_budget(100, &cfg), 250);
    }

    #[test]
    fn tail_score_is_robust_norm() {
        // Both columns have median 0 and MAD 1.
        let x = [-1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 3.0, 4.0, -3.0, -4.0];
        let s = tail_scores(&x, 2);
        assert_eq!(s[1], 0.0);
        assert!((s[3] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tail_ties_prefer_low_index() {
        assert_eq!(select_tails(&[1.0, 3.0, 3.0, 3.0, 0.5], 2), vec![1, 2]);
    }

    #[test]
    fn single_stratum_takes_everyone() {
        let feats: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let a = partition(&feats, 1, &[0, 19], 1, vec![0.0; 20], 4).unwrap();
        assert_eq!(a.strata[0].len(), 18);
        assert!(a.is_tail(0) && a.is_tail(19));
    }

    #[test]
    fn empty_core_is_rejected() {
        let feats = [0.0, 1.0];
        assert!(matches!(partition(&feats, 1, &[0, 1], 1, vec![0.0; 2], 1), Err(Error::Config(_))));
    }
}
