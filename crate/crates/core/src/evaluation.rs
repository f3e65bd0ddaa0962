//! Reference rollouts, same-budget baselines, metrics and the error
//! decomposition available with a synthetic oracle.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::apportion::{apportion, capped_quotas, round_quotas};
use crate::checkpoint::{self, RunControl};
use crate::engine::{interpolate, query_agents, ApsRun, SimulationInputs};
use crate::kmeans::mini_batch_kmeans;
use crate::linalg::{dist, quantile_sorted, sq_dist};
use crate::oracle::{CallCategory, CallCounts, PromptContext};
use crate::rng::{derive_seed, keyed_rng, stream};
use crate::socialgraph::neighbor_summary;
use crate::stratification::{core_stratum_count, partition, ScheduleConfig, StrataAssignment};
use crate::{Error, Result};

/// Logarithm base used by every divergence this crate reports.
pub const JSD_LOG_BASE: f64 = 2.0;

/// One round of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRound {
    pub round: usize,
    pub hard: Vec<u16>,
    /// Reported population distribution.
    pub distribution: Vec<f64>,
    pub calls: CallCounts,
}

/// Per-round hard ledgers and reported distributions of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: String,
    pub n: usize,
    pub n_options: usize,
    pub seed: u64,
    pub initial_states: Option<Vec<u16>>,
    pub rounds: Vec<TrajectoryRound>,
}

impl Trajectory {
    pub fn total_calls(&self) -> CallCounts {
        let mut total = CallCounts::default();
        for r in &self.rounds {
            total.add(&r.calls);
        }
        total
    }

    pub fn last(&self) -> Option<&TrajectoryRound> {
        self.rounds.last()
    }

    /// Hard states entering round `round` (1-based).
    pub fn previous_states(&self, round: usize) -> Option<&[u16]> {
        if round <= 1 {
            self.initial_states.as_deref()
        } else {
            Some(&self.rounds[round - 2].hard)
        }
    }

    /// APS trajectory reporting the projected estimate each round.
    pub fn from_aps(run: &ApsRun, n_options: usize, initial_states: Option<&[u16]>) -> Self {
        Self {
            method: "aps".into(),
            n: run.strata.n,
            n_options,
            seed: run.seeds.run,
            initial_states: initial_states.map(<[u16]>::to_vec),
            rounds: run
                .records
                .iter()
                .zip(&run.hard)
                .map(|(r, h)| TrajectoryRound {
                    round: r.round,
                    hard: h.clone(),
                    distribution: r.projected.clone(),
                    calls: r.calls,
                })
                .collect(),
        }
    }
}

/// Empirical distribution of hard states.
pub fn histogram(states: &[u16], n_options: usize) -> Vec<f64> {
    let mut h = vec![0.0; n_options];
    if states.is_empty() {
        return h;
    }
    for &s in states {
        h[s as usize] += 1.0;
    }
    let n = states.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

fn kl_to_mix(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum()
}

/// Jensen-Shannon divergence with base-2 logarithms, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::config(format!("distributions of length {} and {} cannot be compared", p.len(), q.len())));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl_to_mix(p, &m) + 0.5 * kl_to_mix(q, &m)).clamp(0.0, 1.0))
}

pub fn l1(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Share of agents whose hard states agree.
pub fn exact_match(method: &[u16], reference: &[u16]) -> Result<f64> {
    if method.len() != reference.len() || method.is_empty() {
        return Err(Error::config("hard ledgers are not aligned"));
    }
    let hits = method.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / method.len() as f64)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::config("Wilson interval needs 0 <= successes <= trials and trials >= 1"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config("confidence must lie in (0, 1)"));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}

fn percentile_interval(mut values: Vec<f64>, confidence: f64) -> (f64, f64) {
    values.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - confidence) / 2.0;
    (quantile_sorted(&values, tail), quantile_sorted(&values, 1.0 - tail))
}

fn check_bootstrap(resamples: usize, confidence: f64) -> Result<()> {
    if resamples < 100 {
        return Err(Error::config("bootstrap needs at least 100 resamples"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config("confidence must lie in (0, 1)"));
    }
    Ok(())
}

/// Paired percentile bootstrap of the JSD between the method and reference
/// label histograms, resampling agents with replacement.
pub fn bootstrap_jsd_ci(
    method: &[u16],
    reference: &[u16],
    n_options: usize,
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_bootstrap(resamples, confidence)?;
    if method.len() != reference.len() || method.is_empty() {
        return Err(Error::config("paired labels are not aligned"));
    }
    let n = method.len();
    let mut rng = keyed_rng(seed, &[stream::BOOTSTRAP]);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut a = vec![0.0; n_options];
        let mut b = vec![0.0; n_options];
        for _ in 0..n {
            let i = rng.random_range(0..n);
            a[method[i] as usize] += 1.0;
            b[reference[i] as usize] += 1.0;
        }
        a.iter_mut().chain(b.iter_mut()).for_each(|v| *v /= n as f64);
        stats.push(jsd(&a, &b)?);
    }
    Ok(percentile_interval(stats, confidence))
}

/// Percentile interval for count-only data: each side is redrawn from a
/// multinomial at its own empirical marginal.
pub fn multinomial_jsd_ci(
    method_counts: &[u64],
    reference_counts: &[u64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_bootstrap(resamples, confidence)?;
    if method_counts.len() != reference_counts.len() {
        return Err(Error::config("count vectors differ in length"));
    }
    let na: u64 = method_counts.iter().sum();
    let nb: u64 = reference_counts.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::config("count vectors must be nonempty"));
    }
    let wa = WeightedIndex::new(method_counts).map_err(|e| Error::config(e.to_string()))?;
    let wb = WeightedIndex::new(reference_counts).map_err(|e| Error::config(e.to_string()))?;
    let k = method_counts.len();
    let mut rng = keyed_rng(seed, &[stream::BOOTSTRAP, 1]);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        for _ in 0..na {
            a[wa.sample(&mut rng)] += 1.0 / na as f64;
        }
        for _ in 0..nb {
            b[wb.sample(&mut rng)] += 1.0 / nb as f64;
        }
        stats.push(jsd(&a, &b)?);
    }
    Ok(percentile_interval(stats, confidence))
}

/// Brute-force rollout: every agent queried every round under its own
/// recurrent history.
pub fn run_reference(inputs: &SimulationInputs<'_>, seed: u64, control: &RunControl) -> Result<Trajectory> {
    inputs.validate()?;
    let n = inputs.population.n;
    let k = inputs.scenario.n_options();
    let mut traj = match checkpoint::start::<Trajectory>(control)? {
        Some(c) => c.state,
        None => Trajectory {
            method: "reference".into(),
            n,
            n_options: k,
            seed,
            initial_states: inputs.initial_states.map(<[u16]>::to_vec),
            rounds: Vec::new(),
        },
    };
    let everyone: Vec<(usize, CallCategory)> = (0..n).map(|i| (i, CallCategory::Reference)).collect();
    for round in traj.rounds.len() + 1..=inputs.scenario.rounds() {
        let decisions = query_agents(inputs, traj.previous_states(round), round, &everyone)?;
        let mut calls = CallCounts::default();
        calls.record(&decisions);
        let hard: Vec<u16> = decisions.iter().map(|d| d.option).collect();
        let distribution = histogram(&hard, k);
        traj.rounds.push(TrajectoryRound { round, hard, distribution, calls });
        checkpoint::commit(control, round, &traj)?;
        if control.stop_after == Some(round) {
            break;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    StratifiedSampling,
    ClusterAssignment,
    LabelPropagation,
    MedoidAnchors,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::StratifiedSampling,
        BaselineKind::ClusterAssignment,
        BaselineKind::LabelPropagation,
        BaselineKind::MedoidAnchors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::StratifiedSampling => "stratified-sampling",
            BaselineKind::ClusterAssignment => "cluster-assignment",
            BaselineKind::LabelPropagation => "label-propagation",
            BaselineKind::MedoidAnchors => "medoid-anchors",
        }
    }

    fn key(self) -> u64 {
        match self {
            BaselineKind::StratifiedSampling => 0,
            BaselineKind::ClusterAssignment => 1,
            BaselineKind::LabelPropagation => 2,
            BaselineKind::MedoidAnchors => 3,
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown baseline kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Total oracle calls across all rounds.
    pub budget: usize,
    /// Strata over all agents; `None` uses the core-stratum schedule.
    pub strata: Option<usize>,
    /// Inverse-distance support size for the fill-based baselines.
    pub support_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { budget: 0, strata: None, support_size: 5 }
    }
}

/// `total` split as evenly as possible over `rounds` (earlier rounds take
/// the remainder).
pub fn even_split(total: usize, rounds: usize) -> Vec<usize> {
    (0..rounds).map(|t| total / rounds + usize::from(t < total % rounds)).collect()
}

fn majority(labels: impl Iterator<Item = u16>, n_options: usize) -> Option<u16> {
    let mut counts = vec![0usize; n_options];
    let mut any = false;
    for l in labels {
        counts[l as usize] += 1;
        any = true;
    }
    any.then(|| {
        let mut best = 0;
        for (y, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = y;
            }
        }
        best as u16
    })
}

/// Baseline strata: all agents, no tails.
pub fn baseline_strata(inputs: &SimulationInputs<'_>, cfg: &BaselineConfig, seed: u64) -> Result<StrataAssignment> {
    let pop = inputs.population;
    let m = cfg
        .strata
        .unwrap_or_else(|| core_stratum_count(pop.n, &ScheduleConfig::default()))
        .clamp(1, pop.n);
    partition(&pop.standardized, pop.dim(), &[], m, vec![0.0; pop.n], derive_seed(seed, &[stream::BASELINE]))
}

struct BaselineRunner<'a, 'b> {
    kind: BaselineKind,
    inputs: &'b SimulationInputs<'a>,
    strata: StrataAssignment,
    seed: u64,
    support_size: usize,
}

impl BaselineRunner<'_, '_> {
    fn uniform(&self, members: &[usize], count: usize, round: usize, m: usize, cell: u64) -> Vec<usize> {
        let mut rng = keyed_rng(
            self.seed,
            &[stream::BASELINE, self.kind.key(), round as u64, m as u64, cell],
        );
        let mut out: Vec<usize> = index::sample(&mut rng, members.len(), count.min(members.len()))
            .into_iter()
            .map(|j| members[j])
            .collect();
        out.sort_unstable();
        out
    }

    fn state_stratified(&self, members: &[usize], count: usize, round: usize, m: usize, previous: Option<&[u16]>) -> Vec<usize> {
        let Some(prev) = previous else {
            return self.uniform(members, count, round, m, 0);
        };
        let k = self.inputs.scenario.n_options();
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &i in members {
            cells[prev[i] as usize].push(i);
        }
        let sizes: Vec<usize> = cells.iter().map(Vec::len).collect();
        let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let alloc = apportion(&weights, count, &sizes);
        let mut out: Vec<usize> = cells
            .iter()
            .enumerate()
            .flat_map(|(y, c)| self.uniform(c, alloc[y], round, m, 1 + y as u64))
            .collect();
        out.sort_unstable();
        out
    }

    /// Nearest members to mini-batch k-means centres over profile features
    /// augmented with the previous-state one-hot.
    fn medoids(&self, m: usize, count: usize, round: usize, previous: Option<&[u16]>) -> Vec<usize> {
        let members = &self.strata.strata[m];
        if count >= members.len() {
            return members.clone();
        }
        let pop = self.inputs.population;
        let k = self.inputs.scenario.n_options();
        let d = pop.dim() + if previous.is_some() { k } else { 0 };
        let points: Vec<f64> = members
            .iter()
            .flat_map(|&i| {
                let mut row = pop.features(i).to_vec();
                if let Some(prev) = previous {
                    row.extend((0..k).map(|y| if prev[i] as usize == y { 1.0 } else { 0.0 }));
                }
                row
            })
            .collect();
        let mut rng = keyed_rng(self.seed, &[stream::BASELINE, self.kind.key(), round as u64, m as u64]);
        let fit = mini_batch_kmeans(&points, d, count, 4096, 100, &mut rng);
        let row = |p: usize| &points[p * d..(p + 1) * d];
        let mut taken = vec![false; members.len()];
        let mut anchors = Vec::with_capacity(count);
        for c in 0..count {
            let centre = &fit.centroids[c * d..(c + 1) * d];
            let best = (0..members.len())
                .filter(|&p| !taken[p])
                .min_by(|&a, &b| sq_dist(row(a), centre).total_cmp(&sq_dist(row(b), centre)).then(a.cmp(&b)))
                .expect("fewer anchors than members");
            taken[best] = true;
            anchors.push(members[best]);
        }
        anchors.sort_unstable();
        anchors
    }

    fn round(&mut self, round: usize, budget: usize, previous: Option<&[u16]>) -> Result<TrajectoryRound> {
        let pop = self.inputs.population;
        let n = pop.n;
        let k = self.inputs.scenario.n_options();
        let sizes = self.strata.sizes();
        if budget < sizes.len() {
            return Err(Error::config(format!("per-round budget {budget} is below the stratum count {}", sizes.len())));
        }
        let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let q = capped_quotas(&weights, budget.min(n) as f64, &sizes);
        let alloc = round_quotas(&q, budget, &sizes, &vec![1; sizes.len()], true);

        let mut picks: Vec<Vec<usize>> = Vec::with_capacity(sizes.len());
        for m in 0..sizes.len() {
            let members = self.strata.strata[m].clone();
            picks.push(match self.kind {
                BaselineKind::StratifiedSampling | BaselineKind::ClusterAssignment => {
                    self.uniform(&members, alloc[m], round, m, 0)
                }
                BaselineKind::LabelPropagation => self.state_stratified(&members, alloc[m], round, m, previous),
                BaselineKind::MedoidAnchors => self.medoids(m, alloc[m], round, previous),
            });
        }
        let queried: Vec<(usize, CallCategory)> = {
            let mut q: Vec<usize> = picks.iter().flatten().copied().collect();
            q.sort_unstable();
            q.into_iter().map(|i| (i, CallCategory::Core)).collect()
        };
        let decisions = query_agents(self.inputs, previous, round, &queried)?;
        let mut calls = CallCounts::default();
        calls.record(&decisions);
        let mut answer: HashMap<usize, u16> = HashMap::with_capacity(decisions.len());
        for d in &decisions {
            answer.insert(d.agent, d.option);
        }

        let mut hard = vec![0u16; n];
        let distribution = match self.kind {
            BaselineKind::StratifiedSampling | BaselineKind::ClusterAssignment => {
                let mut reported = vec![0.0; k];
                for (m, members) in self.strata.strata.iter().enumerate() {
                    let labels: Vec<u16> = picks[m].iter().map(|i| answer[i]).collect();
                    let maj = majority(labels.iter().copied(), k).expect("every stratum is sampled");
                    for &i in members {
                        hard[i] = answer.get(&i).copied().unwrap_or(maj);
                    }
                    let share = members.len() as f64 / n as f64;
                    for (r, h) in reported.iter_mut().zip(histogram(&labels, k)) {
                        *r += share * h;
                    }
                }
                match self.kind {
                    BaselineKind::StratifiedSampling => reported,
                    _ => histogram(&hard, k),
                }
            }
            BaselineKind::LabelPropagation | BaselineKind::MedoidAnchors => {
                let mut soft = vec![0.0; n * k];
                for (m, members) in self.strata.strata.iter().enumerate() {
                    let anchors = &picks[m];
                    let fills: Vec<(usize, Vec<f64>, u16)> = members
                        .par_iter()
                        .map(|&i| {
                            if let Some(&y) = answer.get(&i) {
                                let mut one_hot = vec![0.0; k];
                                one_hot[y as usize] = 1.0;
                                return Ok((i, one_hot, y));
                            }
                            let x = pop.features(i);
                            let q: Vec<(usize, u16, f64)> =
                                anchors.iter().map(|&j| (j, answer[&j], dist(x, pop.features(j)))).collect();
                            interpolate(&q, self.support_size, k).map(|r| (i, r.soft, r.hard))
                        })
                        .collect::<Result<_>>()?;
                    for (i, s, h) in fills {
                        soft[i * k..(i + 1) * k].copy_from_slice(&s);
                        hard[i] = h;
                    }
                }
                let mut mean = vec![0.0; k];
                for row in soft.chunks(k) {
                    for (a, b) in mean.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= n as f64);
                mean
            }
        };
        Ok(TrajectoryRound { round, hard, distribution, calls })
    }
}

/// Same-budget baseline rollout. Partitions every agent (no tails), splits
/// the budget evenly over rounds and across strata in proportion to size.
pub fn run_baseline(
    kind: BaselineKind,
    inputs: &SimulationInputs<'_>,
    cfg: &BaselineConfig,
    seed: u64,
    control: &RunControl,
) -> Result<Trajectory> {
    inputs.validate()?;
    let n = inputs.population.n;
    let k = inputs.scenario.n_options();
    let t = inputs.scenario.rounds();
    let strata = baseline_strata(inputs, cfg, seed)?;
    let per_round = even_split(cfg.budget, t);
    let mut traj = match checkpoint::start::<Trajectory>(control)? {
        Some(c) => c.state,
        None => Trajectory {
            method: kind.name().into(),
            n,
            n_options: k,
            seed,
            initial_states: inputs.initial_states.map(<[u16]>::to_vec),
            rounds: Vec::new(),
        },
    };
    let mut runner = BaselineRunner {
        kind,
        inputs,
        strata,
        seed,
        support_size: cfg.support_size,
    };
    for round in traj.rounds.len() + 1..=t {
        let prev = traj.previous_states(round).map(<[u16]>::to_vec);
        let r = runner.round(round, per_round[round - 1], prev.as_deref())?;
        traj.rounds.push(r);
        checkpoint::commit(control, round, &traj)?;
        if control.stop_after == Some(round) {
            break;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRound {
    pub round: usize,
    /// `|p_hat - pbar_A|_1`: error against the mean decision distribution under APS contexts.
    pub estimation_error: f64,
    /// `|pbar_A - pbar_ref|_1`: context mismatch.
    pub context_mismatch: f64,
    /// `|p_hat - pbar_ref|_1`.
    pub total_error: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub rounds: Vec<DecompositionRound>,
}

fn mean_true_distribution(inputs: &SimulationInputs<'_>, previous: Option<&[u16]>, round: usize) -> Result<Vec<f64>> {
    let kernel = inputs
        .oracle
        .kernel()
        .ok_or_else(|| Error::Capability("error decomposition needs an oracle with an inspectable kernel".into()))?;
    let pop = inputs.population;
    let k = inputs.scenario.n_options();
    let stage = inputs.scenario.stage(round);
    let rows: Vec<Vec<f64>> = (0..pop.n)
        .into_par_iter()
        .map(|i| {
            let neighbors = match previous {
                Some(p) => Some(neighbor_summary(inputs.graph, p, i, k)?),
                None => None,
            };
            let ctx = PromptContext {
                agent: i,
                round,
                stage_text: stage,
                options: &inputs.scenario.options,
                features: pop.features(i),
                profile: "",
                previous: previous.map(|p| p[i]),
                neighbors,
            };
            Ok(kernel.true_distribution(&ctx))
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; k];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= pop.n as f64);
    Ok(mean)
}

/// Splits the APS error against the reference-context target into an
/// estimation part and a context-mismatch part, round by round.
pub fn decompose_error(aps: &Trajectory, reference: &Trajectory, inputs: &SimulationInputs<'_>) -> Result<ErrorDecomposition> {
    if inputs.oracle.kernel().is_none() {
        return Err(Error::Capability("error decomposition needs an oracle with an inspectable kernel".into()));
    }
    if aps.n != reference.n || aps.rounds.len() > reference.rounds.len() {
        return Err(Error::config("trajectories are not aligned"));
    }
    let mut rounds = Vec::with_capacity(aps.rounds.len());
    for r in &aps.rounds {
        let t = r.round;
        let p_a = mean_true_distribution(inputs, aps.previous_states(t), t)?;
        let p_ref = mean_true_distribution(inputs, reference.previous_states(t), t)?;
        let estimation_error = l1(&r.distribution, &p_a);
        let context_mismatch = l1(&p_a, &p_ref);
        let total_error = l1(&r.distribution, &p_ref);
        rounds.push(DecompositionRound {
            round: t,
            estimation_error,
            context_mismatch,
            total_error,
            bound_holds: total_error <= estimation_error + context_mismatch + 1e-9,
        });
    }
    Ok(ErrorDecomposition { rounds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundComparison {
    pub round: usize,
    pub jsd: f64,
    pub l1: f64,
    pub exact_match: f64,
    pub method_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub reference: String,
    pub jsd_log_base: f64,
    pub rounds: Vec<RoundComparison>,
    pub final_jsd: f64,
    pub final_exact_match: f64,
    pub exact_match_interval: (f64, f64),
    pub jsd_interval: (f64, f64),
    pub confidence: f64,
    pub method_calls: CallCounts,
    pub reference_calls: CallCounts,
    /// `N * T` over the method's total calls.
    pub reduction_factor: f64,
}

/// Compares a method trajectory with a reference trajectory.
pub fn evaluate(method: &Trajectory, reference: &Trajectory, resamples: usize, confidence: f64, seed: u64) -> Result<EvaluationReport> {
    if method.n != reference.n || method.n_options != reference.n_options || method.rounds.len() != reference.rounds.len() {
        return Err(Error::config("trajectories are not aligned"));
    }
    let (Some(last_m), Some(last_r)) = (method.last(), reference.last()) else {
        return Err(Error::config("trajectories have no rounds"));
    };
    let rounds = method
        .rounds
        .iter()
        .zip(&reference.rounds)
        .map(|(m, r)| {
            Ok(RoundComparison {
                round: m.round,
                jsd: jsd(&m.distribution, &r.distribution)?,
                l1: l1(&m.distribution, &r.distribution),
                exact_match: exact_match(&m.hard, &r.hard)?,
                method_calls: m.calls.total(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_jsd = jsd(&last_m.distribution, &last_r.distribution)?;
    let hits = last_m.hard.iter().zip(&last_r.hard).filter(|(a, b)| a == b).count() as u64;
    let method_calls = method.total_calls();
    let nt = (method.n * method.rounds.len()) as f64;
    Ok(EvaluationReport {
        method: method.method.clone(),
        reference: reference.method.clone(),
        jsd_log_base: JSD_LOG_BASE,
        rounds,
        final_jsd,
        final_exact_match: exact_match(&last_m.hard, &last_r.hard)?,
        exact_match_interval: wilson_interval(hits, method.n as u64, confidence)?,
        jsd_interval: bootstrap_jsd_ci(&last_m.hard, &last_r.hard, method.n_options, resamples, confidence, seed)?,
        confidence,
        method_calls,
        reference_calls: reference.total_calls(),
        reduction_factor: if method_calls.total() > 0 { nt / method_calls.total() as f64 } else { f64::INFINITY },
    })
}
