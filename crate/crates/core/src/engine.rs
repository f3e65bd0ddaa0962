//! The prototype rollout.
//!
//! Strata are fixed once before the first round. Each round allocates the
//! core budget across strata by residual risk, queries the prototypes and
//! tails directly, fills every other core agent from its nearest same-stratum
//! prototypes, then draws and queries the shadow audit and updates the risk
//! scores for the next round.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apportion::{capped_quotas, round_quotas};
use crate::audit::{
    audit_correct, compute_diagnostics, project_simplex, sample_audit_set, update_risks, AuditBranch, AuditConfig,
    AuditObservation, CellDesign, StratumDiagnostics,
};
use crate::checkpoint::{self, RunControl};
use crate::linalg::{dist, sq_dist};
use crate::oracle::{CallCategory, CallCounts, Decision, Oracle, PromptContext, QueryRequest};
use crate::population::Population;
use crate::rng::{keyed_rng, stream};
use crate::scenario::Scenario;
use crate::socialgraph::{neighbor_summary, SocialGraph};
use crate::stratification::{audit_budget, core_budget, stratify, ScheduleConfig, StrataAssignment};
use crate::{Error, Result};

const DISTANCE_OFFSET: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRule {
    /// Budgets proportional to `|C_m| sqrt(R_m + tau)`.
    Adaptive,
    /// Budgets proportional to stratum size only.
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSelection {
    /// Uniform draw without replacement within each stratum.
    Uniform,
    /// The member nearest the stratum centroid first, the rest uniform.
    MedoidFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub schedule: ScheduleConfig,
    pub audit: AuditConfig,
    /// Stabilizer `tau` added to risk scores before the square root.
    pub stabilizer: f64,
    pub allocation: AllocationRule,
    pub selection: PrototypeSelection,
    /// Keep every interpolated agent's support list in the round records.
    pub record_supports: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            audit: AuditConfig::default(),
            stabilizer: 1e-6,
            allocation: AllocationRule::Adaptive,
            selection: PrototypeSelection::Uniform,
            record_supports: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.audit.validate()?;
        if !(self.stabilizer > 0.0) {
            return Err(Error::config("stabilizer must be positive"));
        }
        Ok(())
    }
}

/// Seeds of one APS run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Stratification and prototype draws.
    pub run: u64,
    /// Audit draws.
    pub audit: u64,
}

impl Seeds {
    pub fn new(seed: u64) -> Self {
        Self { run: seed, audit: seed }
    }
}

/// Shared inputs of every rollout at one scale.
#[derive(Clone, Copy)]
pub struct SimulationInputs<'a> {
    pub population: &'a Population,
    pub graph: &'a SocialGraph,
    pub scenario: &'a Scenario,
    pub oracle: &'a dyn Oracle,
    /// States before round 1; `None` renders no previous attitude and no
    /// social context in the first round.
    pub initial_states: Option<&'a [u16]>,
}

impl SimulationInputs<'_> {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.graph.n != self.population.n {
            return Err(Error::config(format!(
                "graph has {} agents but the population has {}",
                self.graph.n, self.population.n
            )));
        }
        if let Some(init) = self.initial_states {
            if init.len() != self.population.n {
                return Err(Error::config("initial states must cover every agent"));
            }
            if init.iter().any(|&y| y as usize >= self.scenario.n_options()) {
                return Err(Error::config("initial state outside the option range"));
            }
        }
        Ok(())
    }
}

/// Queries `agents` (each with its call category) for `round` under the
/// given previous-round hard states, returning decisions in input order.
pub(crate) fn query_agents(
    inputs: &SimulationInputs<'_>,
    previous: Option<&[u16]>,
    round: usize,
    agents: &[(usize, CallCategory)],
) -> Result<Vec<Decision>> {
    if agents.is_empty() {
        return Ok(Vec::new());
    }
    let pop = inputs.population;
    let k = inputs.scenario.n_options();
    let stage = inputs.scenario.stage(round);
    let profiles: Vec<String> = agents.iter().map(|&(i, _)| pop.profile_text(i)).collect();
    let mut requests = Vec::with_capacity(agents.len());
    for (&(i, category), profile) in agents.iter().zip(&profiles) {
        let neighbors = match previous {
            Some(prev) => Some(neighbor_summary(inputs.graph, prev, i, k)?),
            None => None,
        };
        requests.push(QueryRequest {
            context: PromptContext {
                agent: i,
                round,
                stage_text: stage,
                options: &inputs.scenario.options,
                features: pop.features(i),
                profile,
                previous: previous.map(|p| p[i]),
                neighbors,
            },
            category,
        });
    }
    let decisions = inputs.oracle.query_batch(&requests)?;
    if decisions.len() != agents.len() {
        return Err(Error::Invariant("oracle returned a different number of decisions".into()));
    }
    for (d, &(i, _)) in decisions.iter().zip(agents) {
        if d.agent != i || d.option as usize >= k {
            return Err(Error::Invariant(format!("oracle decision for agent {} does not match request", d.agent)));
        }
    }
    Ok(decisions)
}

/// Integer prototype budgets per stratum. Continuous weights
/// `|C_m| sqrt(R_m + tau)` are scaled to `b_core` (capped at stratum size,
/// overflow spread over the rest), floored, raised to one for every nonempty
/// stratum, and the shortfall goes to the largest fractional parts. When
/// `b_core` cannot give every nonempty stratum one prototype, the
/// largest-weight strata get one each.
pub fn allocate_budgets(b_core: usize, sizes: &[usize], risks: &[f64], tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0) {
        return Err(Error::config("stabilizer must be positive"));
    }
    if sizes.len() != risks.len() {
        return Err(Error::config("sizes and risks differ in length"));
    }
    if risks.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::config("risk scores must be nonnegative"));
    }
    let weights = continuous_weights(sizes, risks, tau);
    let nonempty: Vec<usize> = (0..sizes.len()).filter(|&m| sizes[m] > 0).collect();
    if b_core < nonempty.len() {
        let mut order = nonempty;
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        let mut out = vec![0; sizes.len()];
        for &m in order.iter().take(b_core) {
            out[m] = 1;
        }
        return Ok(out);
    }
    let q = capped_quotas(&weights, b_core as f64, sizes);
    let mins: Vec<usize> = sizes.iter().map(|&s| usize::from(s > 0)).collect();
    Ok(round_quotas(&q, b_core, sizes, &mins, false))
}

fn continuous_weights(sizes: &[usize], risks: &[f64], tau: f64) -> Vec<f64> {
    sizes.iter().zip(risks).map(|(&s, &r)| s as f64 * (r + tau).sqrt()).collect()
}

/// Continuous budgets `b |C_m| sqrt(R_m + tau) / sum`, before integer rounding.
pub fn continuous_allocation(b: f64, sizes: &[usize], risks: &[f64], tau: f64) -> Vec<f64> {
    let w = continuous_weights(sizes, risks, tau);
    let total: f64 = w.iter().sum();
    w.iter().map(|x| b * x / total).collect()
}

/// Uniform draw of `budget` members without replacement, keyed by
/// `(seed, round, stratum)`; returned in ascending order.
pub fn select_prototypes(members: &[usize], budget: usize, round: usize, seed: u64, stratum: usize) -> Vec<usize> {
    let budget = budget.min(members.len());
    let mut rng = keyed_rng(seed, &[stream::PROTOTYPES, round as u64, stratum as u64]);
    let mut out: Vec<usize> = index::sample(&mut rng, members.len(), budget).into_iter().map(|j| members[j]).collect();
    out.sort_unstable();
    out
}

/// Like [`select_prototypes`], but the member closest to `centroid` is
/// always included and the remaining slots are drawn uniformly.
pub fn select_prototypes_medoid_first(
    members: &[usize],
    budget: usize,
    round: usize,
    seed: u64,
    stratum: usize,
    population: &Population,
    centroid: &[f64],
) -> Vec<usize> {
    let budget = budget.min(members.len());
    if budget == 0 {
        return Vec::new();
    }
    let medoid_pos = (0..members.len())
        .min_by(|&a, &b| {
            sq_dist(population.features(members[a]), centroid)
                .total_cmp(&sq_dist(population.features(members[b]), centroid))
                .then(a.cmp(&b))
        })
        .expect("nonempty stratum");
    let rest: Vec<usize> = members.iter().enumerate().filter(|&(p, _)| p != medoid_pos).map(|(_, &i)| i).collect();
    let mut out = select_prototypes(&rest, budget - 1, round, seed, stratum);
    out.push(members[medoid_pos]);
    out.sort_unstable();
    out
}

/// An interpolated agent's soft vector, hard state and supports.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub soft: Vec<f64>,
    pub hard: u16,
    pub supports: Vec<usize>,
    pub distances: Vec<f64>,
    pub labels: Vec<u16>,
}

/// Lowest index among the maximal entries.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Soft vector from support options and normalized weights.
pub fn soft_from_weights(options: &[u16], weights: &[f64], n_options: usize) -> Vec<f64> {
    let mut soft = vec![0.0; n_options];
    for (&o, &w) in options.iter().zip(weights) {
        soft[o as usize] += w;
    }
    soft
}

/// Inverse-distance interpolation over the `kappa` nearest queried
/// prototypes, given as `(agent, option, distance)` (ties broken by lower
/// agent index). Weights are `(d + 1e-6)^-1`, normalized.
pub fn interpolate(queried: &[(usize, u16, f64)], kappa: usize, n_options: usize) -> Result<Interpolation> {
    if queried.is_empty() {
        return Err(Error::Invariant("interpolation needs at least one queried prototype".into()));
    }
    let mut order: Vec<&(usize, u16, f64)> = queried.iter().collect();
    order.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    order.truncate(kappa.max(1));
    let raw: Vec<f64> = order.iter().map(|s| 1.0 / (s.2 + DISTANCE_OFFSET)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let labels: Vec<u16> = order.iter().map(|s| s.1).collect();
    let soft = soft_from_weights(&labels, &weights, n_options);
    let hard = argmax(&soft) as u16;
    Ok(Interpolation {
        soft,
        hard,
        supports: order.iter().map(|s| s.0).collect(),
        distances: order.iter().map(|s| s.2).collect(),
        labels,
    })
}

/// Per-stratum audit bookkeeping kept in the round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditStratumRecord {
    pub stratum: usize,
    pub frame_size: usize,
    pub allocation: usize,
    pub branch: Option<AuditBranch>,
    pub cells: Vec<CellDesign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub exploration: f64,
    pub budget: usize,
    pub ids: Vec<usize>,
    /// Shadow labels (0-based options).
    pub labels: Vec<u16>,
    pub psi: Vec<f64>,
    /// `1[label = y] - h(y)` per audited agent.
    pub residuals: Vec<Vec<f64>>,
    pub strata: Vec<AuditStratumRecord>,
}

/// Supports used for one interpolated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRecord {
    pub agent: usize,
    pub supports: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub nominal_core_budget: usize,
    /// Risk scores the budgets were allocated from.
    pub prior_risks: Vec<f64>,
    pub budgets: Vec<usize>,
    pub prototypes: Vec<Vec<usize>>,
    pub tails: Vec<usize>,
    pub audit: AuditRecord,
    pub unprojected: Vec<f64>,
    pub projected: Vec<f64>,
    pub calls: CallCounts,
    pub diagnostics: Vec<Option<StratumDiagnostics>>,
    /// Risk scores for the next round.
    pub risks: Vec<f64>,
    pub seeds: Seeds,
    /// Soft vectors of the tail agents, in `tails` order.
    pub tail_soft: Vec<Vec<f64>>,
    pub supports: Option<Vec<SupportRecord>>,
}

/// State carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    /// Hard ledger of the last completed round (or the initial states).
    pub hard: Option<Vec<u16>>,
    pub risks: Vec<f64>,
}

impl RoundState {
    pub fn initial(n_strata: usize, initial_states: Option<&[u16]>) -> Self {
        Self { hard: initial_states.map(<[u16]>::to_vec), risks: vec![1.0; n_strata] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub record: RoundRecord,
    /// Hard ledger after the round.
    pub hard: Vec<u16>,
    /// Soft ledger after the round, row-major `n x |options|`.
    pub soft: Vec<f64>,
}

/// Runs round `round` (1-based) from `state`.
pub fn run_round(
    inputs: &SimulationInputs<'_>,
    strata: &StrataAssignment,
    state: &RoundState,
    round: usize,
    cfg: &EngineConfig,
    seeds: Seeds,
) -> Result<RoundResult> {
    let pop = inputs.population;
    let n = pop.n;
    let k = inputs.scenario.n_options();
    let n_strata = strata.n_strata();
    if round == 0 || round > inputs.scenario.rounds() {
        return Err(Error::config(format!("round {round} outside the scenario")));
    }
    if state.risks.len() != n_strata {
        return Err(Error::Invariant("risk vector does not match the strata".into()));
    }
    let previous = state.hard.as_deref();
    let sizes = strata.sizes();
    let nominal = core_budget(n, &cfg.schedule);
    let allocation_risks = match cfg.allocation {
        AllocationRule::Adaptive => state.risks.clone(),
        AllocationRule::Proportional => vec![1.0; n_strata],
    };
    let budgets = allocate_budgets(nominal, &sizes, &allocation_risks, cfg.stabilizer)?;
    let prototypes: Vec<Vec<usize>> = (0..n_strata)
        .map(|m| match cfg.selection {
            PrototypeSelection::Uniform => select_prototypes(&strata.strata[m], budgets[m], round, seeds.run, m),
            PrototypeSelection::MedoidFirst => {
                let d = pop.dim();
                select_prototypes_medoid_first(
                    &strata.strata[m],
                    budgets[m],
                    round,
                    seeds.run,
                    m,
                    pop,
                    &strata.centroids[m * d..(m + 1) * d],
                )
            }
        })
        .collect();

    let mut direct: Vec<(usize, CallCategory)> = prototypes
        .iter()
        .flatten()
        .map(|&i| (i, CallCategory::Core))
        .chain(strata.tails.iter().map(|&i| (i, CallCategory::Tail)))
        .collect();
    direct.sort_unstable_by_key(|&(i, _)| i);
    let decisions = query_agents(inputs, previous, round, &direct)?;
    let mut calls = CallCounts::default();
    calls.record(&decisions);

    let mut hard = vec![u16::MAX; n];
    let mut soft = vec![0.0; n * k];
    for d in &decisions {
        hard[d.agent] = d.option;
        soft[d.agent * k + d.option as usize] = 1.0;
    }

    let kappa = cfg.schedule.support_size;
    let mut frames: Vec<Vec<usize>> = Vec::with_capacity(n_strata);
    let mut fills: Vec<(usize, Interpolation)> = Vec::new();
    for m in 0..n_strata {
        let protos = &prototypes[m];
        let frame: Vec<usize> = strata.strata[m].iter().copied().filter(|i| protos.binary_search(i).is_err()).collect();
        let filled: Vec<(usize, Interpolation)> = frame
            .par_iter()
            .map(|&i| {
                let x = pop.features(i);
                let queried: Vec<(usize, u16, f64)> =
                    protos.iter().map(|&j| (j, hard[j], dist(x, pop.features(j)))).collect();
                interpolate(&queried, kappa, k).map(|r| (i, r))
            })
            .collect::<Result<_>>()?;
        fills.extend(filled);
        frames.push(frame);
    }
    fills.sort_unstable_by_key(|(i, _)| *i);
    for (i, r) in &fills {
        hard[*i] = r.hard;
        soft[*i * k..(*i + 1) * k].copy_from_slice(&r.soft);
    }
    if let Some(i) = hard.iter().position(|&h| h == u16::MAX) {
        return Err(Error::Invariant(format!("agent {i} has no state after propagation")));
    }

    let a_budget = audit_budget(n, &cfg.schedule);
    let design = sample_audit_set(&frames, a_budget, &hard, k, &cfg.audit, seeds.audit, round)?;
    let audit_requests: Vec<(usize, CallCategory)> = design.audited.iter().map(|&i| (i, CallCategory::Audit)).collect();
    let audit_decisions = query_agents(inputs, previous, round, &audit_requests)?;
    calls.record(&audit_decisions);
    let labels: Vec<u16> = audit_decisions.iter().map(|d| d.option).collect();
    let unprojected = audit_correct(&soft, k, &design.audited, &labels, &design.psi)?;
    let projected = project_simplex(&unprojected);

    let residuals: Vec<Vec<f64>> = design
        .audited
        .iter()
        .zip(&labels)
        .map(|(&i, &l)| (0..k).map(|y| f64::from(u8::from(l as usize == y)) - soft[i * k + y]).collect())
        .collect();

    let fill_of = |i: usize| -> &Interpolation {
        let pos = fills.binary_search_by_key(&i, |(a, _)| *a).expect("audited agents are interpolated");
        &fills[pos].1
    };
    let mut observations: Vec<Vec<AuditObservation<'_>>> = vec![Vec::new(); n_strata];
    for (&i, &label) in design.audited.iter().zip(&labels) {
        let m = strata.stratum_of(i).expect("audited agents are core agents");
        let r = fill_of(i);
        observations[m].push(AuditObservation {
            predicted: hard[i],
            label,
            soft: &soft[i * k..(i + 1) * k],
            support_distances: &r.distances,
            support_labels: &r.labels,
        });
    }
    let diagnostics: Vec<Option<StratumDiagnostics>> = observations
        .iter()
        .map(|obs| compute_diagnostics(obs, k, cfg.audit.rare_label_threshold))
        .collect();
    let risks = update_risks(&diagnostics, &state.risks, &cfg.audit.risk_weights);

    let audit = AuditRecord {
        exploration: design.exploration,
        budget: a_budget,
        ids: design.audited.clone(),
        labels,
        psi: design.psi.clone(),
        residuals,
        strata: design
            .strata
            .iter()
            .map(|s| AuditStratumRecord {
                stratum: s.stratum,
                frame_size: s.frame.len(),
                allocation: s.allocation,
                branch: s.branch,
                cells: s.cells.clone(),
            })
            .collect(),
    };
    let tail_soft = strata.tails.iter().map(|&i| soft[i * k..(i + 1) * k].to_vec()).collect();
    let supports = cfg.record_supports.then(|| {
        fills
            .iter()
            .map(|(i, r)| SupportRecord { agent: *i, supports: r.supports.clone(), distances: r.distances.clone() })
            .collect()
    });
    let record = RoundRecord {
        round,
        nominal_core_budget: nominal,
        prior_risks: state.risks.clone(),
        budgets,
        prototypes,
        tails: strata.tails.clone(),
        audit,
        unprojected,
        projected,
        calls,
        diagnostics,
        risks,
        seeds,
        tail_soft,
        supports,
    };
    Ok(RoundResult { record, hard, soft })
}

/// Output of a full (or halted) APS run.
#[derive(Debug, Clone, PartialEq)]
pub struct ApsRun {
    pub strata: StrataAssignment,
    pub records: Vec<RoundRecord>,
    /// Hard ledger after each completed round.
    pub hard: Vec<Vec<u16>>,
    /// Soft ledger after the last completed round.
    pub soft: Vec<f64>,
    pub seeds: Seeds,
}

impl ApsRun {
    pub fn completed_rounds(&self) -> usize {
        self.records.len()
    }

    pub fn total_calls(&self) -> CallCounts {
        let mut total = CallCounts::default();
        for r in &self.records {
            total.add(&r.calls);
        }
        total
    }
}

#[derive(Serialize, Deserialize)]
struct ApsCheckpoint {
    strata_digest: String,
    state: RoundState,
    records: Vec<RoundRecord>,
    hard: Vec<Vec<u16>>,
    soft: Vec<f64>,
}

fn strata_digest(strata: &StrataAssignment) -> String {
    let mut h = Sha256::new();
    for l in &strata.labels {
        h.update(l.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Stratifies once, then runs every scenario round, checkpointing after each.
pub fn run_simulation(inputs: &SimulationInputs<'_>, cfg: &EngineConfig, seeds: Seeds, control: &RunControl) -> Result<ApsRun> {
    inputs.validate()?;
    cfg.validate()?;
    let strata = stratify(inputs.population, &cfg.schedule, seeds.run)?;
    let digest = strata_digest(&strata);
    let mut cp = match checkpoint::start::<ApsCheckpoint>(control)? {
        Some(c) => {
            if c.state.strata_digest != digest {
                return Err(Error::Checkpoint("stratification differs from the checkpointed run".into()));
            }
            c.state
        }
        None => ApsCheckpoint {
            strata_digest: digest,
            state: RoundState::initial(strata.n_strata(), inputs.initial_states),
            records: Vec::new(),
            hard: Vec::new(),
            soft: Vec::new(),
        },
    };
    for round in cp.records.len() + 1..=inputs.scenario.rounds() {
        let result = run_round(inputs, &strata, &cp.state, round, cfg, seeds)?;
        tracing::info!(round, calls = result.record.calls.total(), "round complete");
        cp.state = RoundState { hard: Some(result.hard.clone()), risks: result.record.risks.clone() };
        cp.records.push(result.record);
        cp.hard.push(result.hard);
        cp.soft = result.soft;
        checkpoint::commit(control, round, &cp)?;
        if control.stop_after == Some(round) {
            break;
        }
    }
    Ok(ApsRun { strata, records: cp.records, hard: cp.hard, soft: cp.soft, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_risks_split_by_size() {
        assert_eq!(allocate_budgets(100, &[600, 400], &[1.0, 1.0], 1e-12).unwrap(), vec![60, 40]);
    }

    #[test]
    fn risk_weighted_split() {
        assert_eq!(allocate_budgets(100, &[600, 400], &[4.0, 1.0], 1e-6).unwrap(), vec![75, 25]);
    }

    #[test]
    fn capped_stratum_spills_over() {
        assert_eq!(allocate_budgets(1000, &[3, 997], &[0.0, 0.0], 1e-6).unwrap(), vec![3, 997]);
    }

    #[test]
    fn every_stratum_gets_one() {
        let b = allocate_budgets(10, &[1000, 5, 5], &[1.0, 1.0, 1.0], 1e-6).unwrap();
        assert!(b.iter().all(|&x| x >= 1));
        assert!(b.iter().sum::<usize>() <= 10 + 3);
    }

    #[test]
    fn tiny_budget_goes_to_heaviest_strata() {
        assert_eq!(allocate_budgets(2, &[10, 50, 30], &[1.0, 1.0, 1.0], 1e-6).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn bad_allocation_inputs() {
        assert!(allocate_budgets(10, &[5], &[1.0], 0.0).is_err());
        assert!(allocate_budgets(10, &[5], &[-1.0], 1e-6).is_err());
    }

    #[test]
    fn full_budget_takes_whole_stratum() {
        let members: Vec<usize> = (10..30).collect();
        assert_eq!(select_prototypes(&members, 20, 1, 42, 0), members);
        assert_eq!(select_prototypes(&members, 5, 2, 42, 3), select_prototypes(&members, 5, 2, 42, 3));
    }

    #[test]
    fn soft_vector_from_weights() {
        let soft = soft_from_weights(&[1, 1, 4], &[0.5, 0.3, 0.2], 5);
        assert_eq!(soft, vec![0.0, 0.8, 0.0, 0.0, 0.2]);
        assert_eq!(argmax(&soft), 1);
    }

    #[test]
    fn ties_resolve_to_lowest_option() {
        let r = interpolate(&[(3, 2, 1.0), (7, 0, 1.0)], 5, 4).unwrap();
        assert_eq!(r.soft, vec![0.5, 0.0, 0.5, 0.0]);
        assert_eq!(r.hard, 0);
    }

    #[test]
    fn nearest_supports_with_index_ties() {
        let q = [(9, 1, 2.0), (4, 0, 1.0), (2, 2, 1.0), (1, 3, 5.0)];
        let r = interpolate(&q, 2, 4).unwrap();
        assert_eq!(r.supports, vec![2, 4]);
        assert!(interpolate(&[], 5, 4).is_err());
    }
}
