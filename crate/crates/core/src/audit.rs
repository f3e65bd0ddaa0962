//! Shadow audits and the residual-corrected estimator.
//!
//! Each round a budgeted audit set is drawn from the correction frame (core
//! agents that were interpolated rather than queried). Audited agents get an
//! extra oracle query whose label corrects the aggregate estimate through
//! inverse-inclusion-probability weighted residuals. Shadow labels feed the
//! estimator and the per-stratum diagnostics only; they never touch the hard
//! ledger.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::apportion::{capped_quotas, round_quotas};
use crate::evaluation::jsd;
use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

const SLOPE_STABILIZER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskWeights {
    /// Weight of the squared slope-times-distance term.
    pub support: f64,
    /// Weight of the squared mismatch rate.
    pub mismatch: f64,
    /// Weight of the squared rare-state miss rate.
    pub recall: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        Self { support: 1.0, mismatch: 1.0, recall: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Probability of the uniform branch in the mixture design.
    pub exploration: f64,
    /// Predicted-state cells smaller than this fraction of the stratum frame
    /// are guaranteed a draw in the stratified branch.
    pub rare_cell_fraction: f64,
    /// Shadow labels rarer than this fraction of a stratum's audits count as
    /// rare states for recall.
    pub rare_label_threshold: f64,
    pub risk_weights: RiskWeights,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            exploration: 0.1,
            rare_cell_fraction: 0.05,
            rare_label_threshold: 0.05,
            risk_weights: RiskWeights::default(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exploration > 0.0 && self.exploration <= 1.0) {
            return Err(Error::Design("exploration must lie in (0, 1]".into()));
        }
        let w = &self.risk_weights;
        if w.support < 0.0 || w.mismatch < 0.0 || w.recall < 0.0 {
            return Err(Error::config("risk weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditBranch {
    Stratified,
    Uniform,
}

/// One predicted-state cell of a stratum frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDesign {
    pub option: u16,
    pub size: usize,
    /// Draws taken from this cell in the stratified branch.
    pub allocation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumDesign {
    pub stratum: usize,
    /// Frame members in ascending order.
    pub frame: Vec<usize>,
    pub allocation: usize,
    /// `None` when nothing was drawn.
    pub branch: Option<AuditBranch>,
    pub cells: Vec<CellDesign>,
    /// Drawn agents in ascending order.
    pub sampled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditDesign {
    pub exploration: f64,
    pub strata: Vec<StratumDesign>,
    /// Audit set in ascending order.
    pub audited: Vec<usize>,
    /// Inclusion probability of each audited agent.
    pub psi: Vec<f64>,
}

impl AuditDesign {
    pub fn empty(n_strata: usize, exploration: f64) -> Self {
        Self {
            exploration,
            strata: (0..n_strata)
                .map(|m| StratumDesign {
                    stratum: m,
                    frame: Vec::new(),
                    allocation: 0,
                    branch: None,
                    cells: Vec::new(),
                    sampled: Vec::new(),
                })
                .collect(),
            audited: Vec::new(),
            psi: Vec::new(),
        }
    }

    /// Inclusion probabilities of every frame member of stratum `m`, in frame order.
    pub fn frame_psi(&self, m: usize, predicted: &[u16]) -> Vec<f64> {
        let s = &self.strata[m];
        s.frame.iter().map(|&i| inclusion_probability(s, predicted[i], self.exploration)).collect()
    }
}

fn inclusion_probability(s: &StratumDesign, predicted: u16, eps: f64) -> f64 {
    if s.allocation == 0 || s.frame.is_empty() {
        return 0.0;
    }
    let cell = s.cells.iter().find(|c| c.option == predicted).expect("frame member has a cell");
    let stratified = cell.allocation as f64 / cell.size as f64;
    let uniform = s.allocation as f64 / s.frame.len() as f64;
    ((1.0 - eps) * stratified + eps * uniform).min(1.0)
}

/// Splits the round's audit budget across strata in proportion to frame size.
/// Every nonempty frame gets at least one draw when the budget allows;
/// otherwise the largest frames get one each.
pub fn allocate_audits(frame_sizes: &[usize], budget: usize) -> Vec<usize> {
    let nonempty: Vec<usize> = (0..frame_sizes.len()).filter(|&m| frame_sizes[m] > 0).collect();
    if budget < nonempty.len() {
        let mut order = nonempty;
        order.sort_by(|&a, &b| frame_sizes[b].cmp(&frame_sizes[a]).then(a.cmp(&b)));
        let mut out = vec![0; frame_sizes.len()];
        for &m in order.iter().take(budget) {
            out[m] = 1;
        }
        return out;
    }
    let weights: Vec<f64> = frame_sizes.iter().map(|&s| s as f64).collect();
    let target = budget.min(frame_sizes.iter().sum());
    let q = capped_quotas(&weights, target as f64, frame_sizes);
    let mins: Vec<usize> = frame_sizes.iter().map(|&s| usize::from(s > 0)).collect();
    round_quotas(&q, target, frame_sizes, &mins, true)
}

/// Stratified-branch draws per predicted-state cell. Cells smaller than
/// `rare_fraction` of the frame get one draw first (smallest cells first
/// when the allocation cannot cover them all); the rest is proportional.
pub fn allocate_cells(cell_sizes: &[usize], allocation: usize, rare_fraction: f64) -> Vec<usize> {
    let frame: usize = cell_sizes.iter().sum();
    let mut rare: Vec<usize> = (0..cell_sizes.len())
        .filter(|&c| cell_sizes[c] > 0 && (cell_sizes[c] as f64) < rare_fraction * frame as f64)
        .collect();
    rare.sort_by(|&a, &b| cell_sizes[a].cmp(&cell_sizes[b]).then(a.cmp(&b)));
    let mut mins = vec![0; cell_sizes.len()];
    for &c in rare.iter().take(allocation) {
        mins[c] = 1;
    }
    let weights: Vec<f64> = cell_sizes.iter().map(|&s| s as f64).collect();
    let target = allocation.min(frame);
    let q = capped_quotas(&weights, target as f64, cell_sizes);
    round_quotas(&q, target, cell_sizes, &mins, true)
}

/// Draws the audit set. `frames[m]` lists the correction-frame members of
/// stratum `m`; `predicted` holds the current hard state of every agent.
/// Each stratum flips its own keyed coin between the state-stratified branch
/// (probability `1 - exploration`) and the uniform branch.
pub fn sample_audit_set(
    frames: &[Vec<usize>],
    budget: usize,
    predicted: &[u16],
    n_options: usize,
    cfg: &AuditConfig,
    seed: u64,
    round: usize,
) -> Result<AuditDesign> {
    cfg.validate()?;
    let eps = cfg.exploration;
    let sizes: Vec<usize> = frames.iter().map(Vec::len).collect();
    let alloc = allocate_audits(&sizes, budget);
    let mut design = AuditDesign::empty(frames.len(), eps);
    let mut picked: Vec<(usize, f64)> = Vec::new();
    for (m, frame) in frames.iter().enumerate() {
        let mut frame = frame.clone();
        frame.sort_unstable();
        let mut members_by_cell: Vec<Vec<usize>> = vec![Vec::new(); n_options];
        for &i in &frame {
            let y = predicted[i] as usize;
            if y >= n_options {
                return Err(Error::Design(format!("predicted state {y} of agent {i} outside the option range")));
            }
            members_by_cell[y].push(i);
        }
        let occupied: Vec<usize> = (0..n_options).filter(|&y| !members_by_cell[y].is_empty()).collect();
        let cell_sizes: Vec<usize> = occupied.iter().map(|&y| members_by_cell[y].len()).collect();
        let a = alloc[m];
        let cell_alloc = allocate_cells(&cell_sizes, a, cfg.rare_cell_fraction);
        let cells: Vec<CellDesign> = occupied
            .iter()
            .zip(cell_sizes.iter().zip(&cell_alloc))
            .map(|(&y, (&size, &allocation))| CellDesign { option: y as u16, size, allocation })
            .collect();
        let mut sampled = Vec::with_capacity(a);
        let mut branch = None;
        if a > 0 {
            let mut rng = keyed_rng(seed, &[stream::AUDIT, round as u64, m as u64]);
            if rng.random::<f64>() < 1.0 - eps {
                branch = Some(AuditBranch::Stratified);
                for (&y, &c) in occupied.iter().zip(&cell_alloc) {
                    let members = &members_by_cell[y];
                    sampled.extend(index::sample(&mut rng, members.len(), c).into_iter().map(|j| members[j]));
                }
            } else {
                branch = Some(AuditBranch::Uniform);
                sampled.extend(index::sample(&mut rng, frame.len(), a).into_iter().map(|j| frame[j]));
            }
            sampled.sort_unstable();
        }
        let s = StratumDesign { stratum: m, frame, allocation: a, branch, cells, sampled };
        for &i in &s.sampled {
            picked.push((i, inclusion_probability(&s, predicted[i], eps)));
        }
        design.strata[m] = s;
    }
    picked.sort_by_key(|&(i, _)| i);
    design.audited = picked.iter().map(|&(i, _)| i).collect();
    design.psi = picked.iter().map(|&(_, p)| p).collect();
    Ok(design)
}

/// Residual-corrected estimate: the soft-ledger mean plus the
/// inverse-inclusion-weighted audit residuals. The result sums to one but
/// may have negative entries.
pub fn audit_correct(soft: &[f64], n_options: usize, audited: &[usize], labels: &[u16], psi: &[f64]) -> Result<Vec<f64>> {
    if n_options == 0 || !soft.len().is_multiple_of(n_options) || soft.is_empty() {
        return Err(Error::Design("soft ledger shape does not match the option count".into()));
    }
    if audited.len() != labels.len() || audited.len() != psi.len() {
        return Err(Error::Design("audit ids, labels and inclusion probabilities differ in length".into()));
    }
    let n = soft.len() / n_options;
    let mut base = vec![0.0; n_options];
    for row in soft.chunks(n_options) {
        for (b, h) in base.iter_mut().zip(row) {
            *b += h;
        }
    }
    let mut correction = vec![0.0; n_options];
    for ((&i, &label), &p) in audited.iter().zip(labels).zip(psi) {
        if !(p > 0.0) {
            return Err(Error::Design(format!("inclusion probability {p} of agent {i} is not positive")));
        }
        if i >= n || label as usize >= n_options {
            return Err(Error::Design(format!("audit record for agent {i} is out of range")));
        }
        let h = &soft[i * n_options..(i + 1) * n_options];
        for y in 0..n_options {
            let indicator = if label as usize == y { 1.0 } else { 0.0 };
            correction[y] += (indicator - h[y]) / p;
        }
    }
    Ok(base.iter().zip(&correction).map(|(b, c)| (b + c) / n as f64).collect())
}

/// Clips negative entries, renormalizes, and falls back to uniform when
/// nothing positive remains.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

/// One audited agent as seen by the diagnostics.
#[derive(Debug, Clone)]
pub struct AuditObservation<'a> {
    /// Current hard state.
    pub predicted: u16,
    /// Shadow label.
    pub label: u16,
    pub soft: &'a [f64],
    pub support_distances: &'a [f64],
    pub support_labels: &'a [u16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDiagnostics {
    pub audits: usize,
    /// Share of audits whose shadow label differs from the hard state.
    pub mismatch: f64,
    /// Sum over options of the sample variance of audit residuals.
    pub residual_variance: f64,
    /// JSD between audited hard states and shadow labels.
    pub monitoring_jsd: f64,
    /// Mean distance from audited agents to their supports.
    pub support_distance: f64,
    /// Mean support-label entropy over the mean support distance.
    pub disagreement_slope: f64,
    /// Share of rare shadow labels matched by the hard state.
    pub rare_recall: f64,
}

fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Diagnostics of one stratum's audits; `None` without audits.
pub fn compute_diagnostics(obs: &[AuditObservation<'_>], n_options: usize, rare_threshold: f64) -> Option<StratumDiagnostics> {
    let a = obs.len();
    if a == 0 {
        return None;
    }
    let af = a as f64;
    let mismatch = obs.iter().filter(|o| o.predicted != o.label).count() as f64 / af;

    let mut residual_variance = 0.0;
    if a > 1 {
        for y in 0..n_options {
            let r: Vec<f64> = obs
                .iter()
                .map(|o| f64::from(u8::from(o.label as usize == y)) - o.soft[y])
                .collect();
            let mean = r.iter().sum::<f64>() / af;
            residual_variance += r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (af - 1.0);
        }
    }

    let mut pred_hist = vec![0.0; n_options];
    let mut label_counts = vec![0usize; n_options];
    for o in obs {
        pred_hist[o.predicted as usize] += 1.0 / af;
        label_counts[o.label as usize] += 1;
    }
    let label_hist: Vec<f64> = label_counts.iter().map(|&c| c as f64 / af).collect();
    let monitoring_jsd = jsd(&pred_hist, &label_hist).unwrap_or(0.0);

    let mut support_distance = 0.0;
    let mut entropy = 0.0;
    for o in obs {
        if !o.support_distances.is_empty() {
            support_distance += o.support_distances.iter().sum::<f64>() / o.support_distances.len() as f64;
        }
        let mut counts = vec![0usize; n_options];
        for &l in o.support_labels {
            counts[l as usize] += 1;
        }
        entropy += entropy_bits(&counts);
    }
    support_distance /= af;
    let disagreement_slope = (entropy / af) / (support_distance + SLOPE_STABILIZER);

    let rare: Vec<&AuditObservation<'_>> = obs
        .iter()
        .filter(|o| label_hist[o.label as usize] < rare_threshold)
        .collect();
    let rare_recall = if rare.is_empty() {
        1.0
    } else {
        rare.iter().filter(|o| o.predicted == o.label).count() as f64 / rare.len() as f64
    };

    Some(StratumDiagnostics {
        audits: a,
        mismatch,
        residual_variance,
        monitoring_jsd,
        support_distance,
        disagreement_slope,
        rare_recall,
    })
}

/// Diagnostics rescaled for the risk score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDiagnostics {
    pub residual_variance: f64,
    pub disagreement_slope: f64,
    pub support_distance: f64,
    pub mismatch: f64,
    pub rare_recall: f64,
}

/// Divides residual variance, slope, support distance and mismatch by their
/// maximum across the strata that were audited this round (a zero maximum
/// gives zero). Rare-state recall is already a fraction and passes through.
pub fn normalize_diagnostics(diags: &[Option<StratumDiagnostics>]) -> Vec<Option<NormalizedDiagnostics>> {
    let max_of = |f: fn(&StratumDiagnostics) -> f64| diags.iter().flatten().map(f).fold(0.0, f64::max);
    let mv = max_of(|d| d.residual_variance);
    let ml = max_of(|d| d.disagreement_slope);
    let mr = max_of(|d| d.support_distance);
    let me = max_of(|d| d.mismatch);
    let scale = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    diags
        .iter()
        .map(|d| {
            d.as_ref().map(|d| NormalizedDiagnostics {
                residual_variance: scale(d.residual_variance, mv),
                disagreement_slope: scale(d.disagreement_slope, ml),
                support_distance: scale(d.support_distance, mr),
                mismatch: scale(d.mismatch, me),
                rare_recall: d.rare_recall,
            })
        })
        .collect()
}

pub fn risk_score(d: &NormalizedDiagnostics, w: &RiskWeights) -> f64 {
    let slope_term = d.disagreement_slope * d.support_distance;
    let miss = 1.0 - d.rare_recall;
    d.residual_variance + w.support * slope_term * slope_term + w.mismatch * d.mismatch * d.mismatch + w.recall * miss * miss
}

/// Next-round risk per stratum. Strata without audits keep their previous score.
pub fn update_risks(diags: &[Option<StratumDiagnostics>], previous: &[f64], w: &RiskWeights) -> Vec<f64> {
    normalize_diagnostics(diags)
        .iter()
        .zip(previous)
        .map(|(d, &prev)| d.as_ref().map_or(prev, |d| risk_score(d, w)))
        .collect()
}

/// Allocation objective `sum_m |C_m|^2 (R_m + tau) / B_m` whose minimizer
/// under a fixed total is `B_m` proportional to `|C_m| sqrt(R_m + tau)`.
pub fn neyman_objective(sizes: &[usize], risks: &[f64], tau: f64, budgets: &[f64]) -> f64 {
    sizes
        .iter()
        .zip(risks)
        .zip(budgets)
        .map(|((&s, &r), &b)| (s as f64).powi(2) * (r + tau) / b)
        .sum()
}
